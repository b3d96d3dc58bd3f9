//! Checkpoint layout: one JSON header line, then the parameters as raw
//! little-endian `f64`s.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetConfig, NetError, Network};

#[derive(Debug, Serialize, Deserialize)]
struct LayerOffsets {
    weight_offset: usize,
    weight_shape: [usize; 2],
    bias_offset: usize,
    bias_len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: NetConfig,
    n_params: usize,
    layers: Vec<LayerOffsets>,
}

const FORMAT: &str = "ppl-net-v1";

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<(), NetError> {
    let mut layers = Vec::new();
    let mut off = 0;
    for (fi, fo) in net.config().layers() {
        layers.push(LayerOffsets {
            weight_offset: off,
            weight_shape: [fi, fo],
            bias_offset: off + fi * fo,
            bias_len: fo,
        });
        off += fi * fo + fo;
    }
    let header = Header {
        format: FORMAT.into(),
        config: net.config().clone(),
        n_params: net.param_count(),
        layers,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let line = serde_json::to_string(&header).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    for p in net.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network, NetError> {
    let mut rd = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    rd.read_line(&mut line)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    if header.format != FORMAT {
        return Err(NetError::Checkpoint(format!(
            "unknown format {:?}",
            header.format
        )));
    }
    let mut bytes = Vec::new();
    rd.read_to_end(&mut bytes)?;
    if bytes.len() != header.n_params * 8 {
        return Err(NetError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            header.n_params * 8,
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Network::from_params(header.config, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pi.ckpt");
        let net = Network::seeded(NetConfig::policy(2, &[5, 3], &[-1.5], &[1.5]), 9).unwrap();
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn truncated_checkpoint_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.ckpt");
        let net = Network::seeded(NetConfig::critic(2, 1, &[4]), 1).unwrap();
        save_checkpoint(&net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NetError::Checkpoint(_))
        ));
    }
}
