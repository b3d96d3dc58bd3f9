use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Bc,
    Critic,
    Ppl,
    Joint,
    Qbc,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Bc => "bc",
            Phase::Critic => "critic",
            Phase::Ppl => "ppl",
            Phase::Joint => "joint",
            Phase::Qbc => "qbc",
        })
    }
}

/// One logged step. Quantities a phase does not compute are recorded as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub phase: Phase,
    pub critic_loss: f64,
    pub potential_objective: f64,
    pub policy_objective: f64,
    pub f_data: f64,
    pub f_policy: f64,
    pub q_policy: f64,
}

impl TrainRecord {
    pub(crate) fn empty() -> Self {
        Self {
            step: 0,
            phase: Phase::Bc,
            critic_loss: 0.0,
            potential_objective: 0.0,
            policy_objective: 0.0,
            f_data: 0.0,
            f_policy: 0.0,
            q_policy: 0.0,
        }
    }

    fn values(&self) -> [f64; 6] {
        [
            self.critic_loss,
            self.potential_objective,
            self.policy_objective,
            self.f_data,
            self.f_policy,
            self.q_policy,
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

pub const TRAINLOG_HEADER: &str =
    "phase,step,critic_loss,potential_objective,policy_objective,f_data,f_policy,q_policy";

impl TrainLog {
    pub fn push(&mut self, r: TrainRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.records
            .iter()
            .all(|r| r.values().iter().all(|v| v.is_finite()))
    }

    /// CSV with shortest round-trip floats, so equal logs give equal bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAINLOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{}", r.phase, r.step));
            for v in r.values() {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &TrainRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_one_line_per_record() {
        let mut log = TrainLog::default();
        log.push(TrainRecord {
            step: 3,
            phase: Phase::Ppl,
            f_data: 0.1,
            ..TrainRecord::empty()
        });
        let csv = log.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("ppl,3,0.0,0.0,0.0,0.1,"));
    }
}
