use crate::data::OfflineDataset;

/// For every transition, the dataset actions recorded at (approximately) its
/// next state. Averaging the target critic over them gives the bootstrap
/// value of the empirical behavior distribution, `E_{a'∼β(s')} Q(s', a')`.
///
/// Two states match when their L∞ distance is at most `radius`; at most `k`
/// distinct actions are kept per transition, nearest states first.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportIndex {
    next_actions: Vec<Vec<usize>>,
}

impl SupportIndex {
    pub fn build(ds: &OfflineDataset, radius: f64, k: usize) -> Self {
        let ts = ds.transitions();
        let next_actions = ts
            .iter()
            .map(|t| {
                if t.done {
                    return Vec::new();
                }
                let mut cand: Vec<(f64, usize)> = ts
                    .iter()
                    .enumerate()
                    .filter_map(|(j, u)| {
                        let d = u
                            .state
                            .iter()
                            .zip(&t.next_state)
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max);
                        (d <= radius).then_some((d, j))
                    })
                    .collect();
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut chosen: Vec<usize> = Vec::new();
                for (_, j) in cand {
                    if chosen.len() == k {
                        break;
                    }
                    if !chosen.iter().any(|&c| ts[c].action == ts[j].action) {
                        chosen.push(j);
                    }
                }
                chosen
            })
            .collect();
        Self { next_actions }
    }

    /// Transitions whose actions form the bootstrap set of transition `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.next_actions[i]
    }

    pub fn len(&self) -> usize {
        self.next_actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.next_actions.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_tabular_dataset, random_stitching_mdp};

    #[test]
    fn tabular_neighbors_are_the_observed_support() {
        let (mdp, support) = random_stitching_mdp(8, 4, 0.9, 2);
        let ds = generate_tabular_dataset(&mdp, &support, 200, 50, 0).unwrap();
        let idx = SupportIndex::build(&ds, 1e-9, 8);
        let tab = ds.meta().tabular.as_ref().unwrap();
        let observed = tab.observed_support();
        for (i, &[_, _, n]) in tab.indices.iter().enumerate() {
            if mdp.is_terminal(n) {
                assert!(idx.neighbors(i).is_empty());
                continue;
            }
            let mut acts: Vec<usize> = idx
                .neighbors(i)
                .iter()
                .map(|&j| tab.indices[j][1])
                .collect();
            acts.sort_unstable();
            assert_eq!(acts, observed[n]);
        }
    }
}
