use ppl_core::autodiff::Tensor;
use ppl_core::data::{from_jsonl_str, to_jsonl_string, DatasetMeta, OfflineDataset, Transition};
use ppl_core::harness::{ema, mean_std};
use ppl_core::nets::{NetConfig, Network};
use proptest::prelude::*;

fn rows(dim: usize, scale: f64) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-scale..scale, dim), 1..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn potential_is_nonnegative(seed in 0u64..10_000, xs in rows(3, 1e3), square in any::<bool>()) {
        let cfg = if square {
            NetConfig::square_potential(2, 1, &[16, 16])
        } else {
            NetConfig::potential(2, 1, &[16, 16])
        };
        let net = Network::seeded(cfg, seed).unwrap();
        let x = Tensor::from_rows(&xs).unwrap();
        let f = net.predict(&x).unwrap();
        prop_assert!(f.data().iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn policy_stays_in_bounds_at_extreme_inputs(
        seed in 0u64..10_000,
        signs in prop::collection::vec(prop::bool::ANY, 3),
        magnitude in prop::sample::select(vec![1.0, 1e3, 1e6]),
    ) {
        let low = [-2.0, 0.0];
        let high = [1.0, 0.5];
        let net = Network::seeded(NetConfig::policy(3, &[16], &low, &high), seed).unwrap();
        let s: Vec<f64> = signs.iter().map(|&p| if p { magnitude } else { -magnitude }).collect();
        let a = net.act(&s).unwrap();
        for k in 0..2 {
            prop_assert!(a[k] >= low[k] && a[k] <= high[k], "{a:?}");
        }
        let cat = Network::seeded(NetConfig::categorical_policy(3, &[16], 4), seed).unwrap();
        let p = cat.act(&s).unwrap();
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_survives_jsonl(
        ts in prop::collection::vec(
            (rows(2, 1e6), -1.0..1.0f64, -1e9..1e9f64, any::<bool>(), prop::sample::select(vec![1.0, 2.0, 7.0])),
            1..20,
        ),
        seed in any::<u64>(),
    ) {
        let transitions: Vec<Transition> = ts
            .into_iter()
            .map(|(r, a, rew, done, dur)| {
                let s = r[0].clone();
                let next = r.last().unwrap().clone();
                Transition { duration: dur, ..Transition::new(s, vec![a], rew, next, done) }
            })
            .collect();
        let meta = DatasetMeta { generator: "prop".into(), seed, ..DatasetMeta::default() };
        let ds = OfflineDataset::new(transitions, vec![-1.0], vec![1.0], meta).unwrap();
        let back = from_jsonl_str(&to_jsonl_string(&ds)).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn ema_stays_within_range(values in prop::collection::vec(-1e3..1e3f64, 1..50)) {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s = ema(&values, 0.3);
        prop_assert_eq!(s.len(), values.len());
        prop_assert!(s.iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
        let (m, sd) = mean_std(&values);
        prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9 && sd >= 0.0);
    }
}
