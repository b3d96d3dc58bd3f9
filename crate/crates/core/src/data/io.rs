//! JSON-lines dataset files: a header line with dims, bounds and metadata,
//! then one transition per line. Floats use shortest round-trip decimals,
//! so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, DatasetMeta, OfflineDataset, Transition};

const FORMAT: &str = "ppl-dataset-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    state_dim: usize,
    action_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    n_transitions: usize,
    meta: DatasetMeta,
}

pub fn to_jsonl_string(ds: &OfflineDataset) -> String {
    let header = Header {
        format: FORMAT.into(),
        state_dim: ds.state_dim(),
        action_dim: ds.action_dim(),
        action_low: ds.action_low().to_vec(),
        action_high: ds.action_high().to_vec(),
        n_transitions: ds.len(),
        meta: ds.meta().clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for t in ds.transitions() {
        out.push_str(&serde_json::to_string(t).expect("transition serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl_str(text: &str) -> Result<OfflineDataset, DataError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(DataError::Parse {
        line: 1,
        reason: "missing header".into(),
    })?;
    let header: Header = serde_json::from_str(first).map_err(|e| DataError::Parse {
        line: 1,
        reason: format!("header: {e}"),
    })?;
    if header.format != FORMAT {
        return Err(DataError::Parse {
            line: 1,
            reason: format!("unknown format {:?}", header.format),
        });
    }
    let mut transitions = Vec::with_capacity(header.n_transitions);
    let mut last_line = 1;
    for (i, line) in lines {
        last_line = i + 1;
        let t: Transition = serde_json::from_str(line).map_err(|e| DataError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        transitions.push(t);
    }
    if transitions.len() != header.n_transitions {
        return Err(DataError::Parse {
            line: last_line + 1,
            reason: format!(
                "header declares {} transitions, file holds {}",
                header.n_transitions,
                transitions.len()
            ),
        });
    }
    let ds = OfflineDataset::new(
        transitions,
        header.action_low,
        header.action_high,
        header.meta,
    )?;
    if ds.state_dim() != header.state_dim || ds.action_dim() != header.action_dim {
        return Err(DataError::Parse {
            line: 1,
            reason: "declared dims disagree with the transitions".into(),
        });
    }
    Ok(ds)
}

pub fn save_dataset(ds: &OfflineDataset, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, to_jsonl_string(ds))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset, DataError> {
    from_jsonl_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> OfflineDataset {
        let ts = vec![
            Transition::new(
                vec![0.1, -0.0],
                vec![1.0 / 3.0],
                0.0,
                vec![0.2, 1e-300],
                false,
            ),
            Transition {
                duration: 1.2345678901234567,
                ..Transition::new(vec![0.2, 1e-300], vec![-0.7], 1.0, vec![0.3, 0.0], true)
            },
        ];
        OfflineDataset::new(
            ts,
            vec![-1.5],
            vec![1.5],
            DatasetMeta {
                generator: "unit".into(),
                seed: 7,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = sample();
        let back = from_jsonl_str(&to_jsonl_string(&ds)).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.transitions().iter().zip(ds.transitions()) {
            for (x, y) in a.state.iter().zip(&b.state) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(a.duration.to_bits(), b.duration.to_bits());
        }
    }

    #[test]
    fn truncated_file_reports_a_line() {
        let text = to_jsonl_string(&sample());
        let cut = &text[..text.len() - 20];
        match from_jsonl_str(cut) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_lines_are_detected() {
        let text = to_jsonl_string(&sample());
        let first_two: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            from_jsonl_str(&first_two),
            Err(DataError::Parse { .. })
        ));
    }

    #[test]
    fn out_of_bounds_action_fails_validation() {
        let text = to_jsonl_string(&sample()).replace("-0.7", "-1.7");
        assert!(matches!(
            from_jsonl_str(&text),
            Err(DataError::Invalid { .. })
        ));
    }
}
