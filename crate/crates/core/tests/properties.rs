use craeg::analytics::{ecdf, pass_at_k, shannon_entropy};
use craeg::geometry::{
    pairwise_abs_cosine, step_crowding, token_crowding_scores, top_k_restrict, EmbeddingTable,
    NextTokenDistribution, Weighting,
};
use craeg::sampler::{exact_lambda, reweight, CraegConfig, LambdaMode};
use proptest::prelude::*;

fn table_and_probs(max_v: usize, max_d: usize) -> impl Strategy<Value = (EmbeddingTable, Vec<f64>)> {
    (2..=max_v, 1..=max_d).prop_flat_map(|(v, d)| {
        (
            prop::collection::vec(-1.0f32..1.0, v * d),
            prop::collection::vec(0.0f64..1.0, v),
        )
            .prop_filter("some mass", |(_, raw)| raw.iter().sum::<f64>() > 1e-3)
            .prop_map(move |(rows, raw)| {
                let total: f64 = raw.iter().sum();
                let probs = raw.iter().map(|x| x / total).collect();
                (EmbeddingTable::from_flat(v, d, rows).unwrap(), probs)
            })
    })
}

fn config() -> impl Strategy<Value = CraegConfig> {
    (0.0f64..=1.0, any::<bool>(), prop::option::of(0.1f64..50.0)).prop_map(|(tau, lin, fixed)| {
        let weighting = if lin { Weighting::Linear } else { Weighting::Exponential };
        let mode = fixed.map_or(LambdaMode::Adaptive, LambdaMode::Fixed);
        CraegConfig::default()
            .with_tau(tau)
            .with_weighting(weighting)
            .with_lambda_mode(mode)
    })
}

proptest! {
    #[test]
    fn crowding_is_bounded((table, probs) in table_and_probs(30, 8)) {
        let dist = NextTokenDistribution::dense(probs.clone()).unwrap();
        let scores = token_crowding_scores(&table, &dist).unwrap();
        for (s, p) in scores.iter().zip(&probs) {
            prop_assert!(*s >= 0.0);
            prop_assert!(*s <= 1.0 - p + 1e-12);
        }
        let step = step_crowding(&dist, &scores).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&step));
    }

    #[test]
    fn crowding_ignores_sign_and_scale(
        (table, probs) in table_and_probs(20, 6),
        flips in prop::collection::vec((any::<bool>(), 0.1f32..10.0), 20),
    ) {
        let d = table.dim();
        let mut rows = table.as_flat().to_vec();
        for (i, row) in rows.chunks_mut(d).enumerate() {
            let (flip, scale) = flips[i];
            for x in row {
                *x *= if flip { -scale } else { scale };
            }
        }
        let moved = EmbeddingTable::from_flat(table.vocab_size(), d, rows).unwrap();
        let dist = NextTokenDistribution::dense(probs).unwrap();
        let a = token_crowding_scores(&table, &dist).unwrap();
        let b = token_crowding_scores(&moved, &dist).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn crowding_follows_permutation(
        (table, probs) in table_and_probs(20, 6),
        seed in any::<u64>(),
    ) {
        let v = probs.len();
        let mut order: Vec<usize> = (0..v).collect();
        // Deterministic shuffle from the seed.
        let mut s = seed;
        for i in (1..v).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let dist = NextTokenDistribution::dense(probs.clone()).unwrap();
        let shuffled = NextTokenDistribution::restricted(
            order.clone(),
            order.iter().map(|&i| probs[i]).collect(),
        )
        .unwrap();
        let a = token_crowding_scores(&table, &dist).unwrap();
        let b = token_crowding_scores(&table, &shuffled).unwrap();
        for (pos, &id) in order.iter().enumerate() {
            prop_assert!((a[id] - b[pos]).abs() < 1e-12);
        }
    }

    #[test]
    fn top_k_at_full_size_changes_nothing((table, probs) in table_and_probs(25, 5)) {
        let dist = NextTokenDistribution::dense(probs).unwrap();
        let top = top_k_restrict(&dist, dist.len()).unwrap();
        let full = token_crowding_scores(&table, &dist).unwrap();
        let cut = token_crowding_scores(&table, &top).unwrap();
        let a = step_crowding(&dist, &full).unwrap();
        let b = step_crowding(&top, &cut).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((top.mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn similarity_matrix_is_symmetric((table, _) in table_and_probs(15, 6)) {
        let ids: Vec<usize> = (0..table.vocab_size()).collect();
        let m = pairwise_abs_cosine(&table, &ids).unwrap();
        for a in 0..m.len() {
            for b in 0..m.len() {
                prop_assert_eq!(m.get(a, b), m.get(b, a));
                prop_assert!((0.0..=1.0).contains(&m.get(a, b)));
            }
        }
    }

    #[test]
    fn reweight_conserves_mass((table, probs) in table_and_probs(40, 6), config in config()) {
        let dist = NextTokenDistribution::dense(probs.clone()).unwrap();
        let (out, report) = reweight(&dist, &table, &config).unwrap();
        prop_assert!((out.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!((report.mass_after - report.mass_before).abs() <= 1e-9);
        for (i, (&p, &q)) in probs.iter().zip(out.probs()).enumerate() {
            if !report.correction_set.contains(&i) {
                prop_assert_eq!(p.to_bits(), q.to_bits());
            }
            prop_assert!(q >= 0.0);
        }
        prop_assert!(report.achieved_reduction >= 0.0);
        prop_assert!(report.achieved_reduction < report.mass_before || report.is_skipped());
        for a in &report.alphas {
            prop_assert!(*a > 0.0 && *a <= 1.0);
        }
    }

    #[test]
    fn reweight_is_deterministic((table, probs) in table_and_probs(20, 4), config in config()) {
        let dist = NextTokenDistribution::dense(probs).unwrap();
        let a = reweight(&dist, &table, &config).unwrap();
        let b = reweight(&dist, &table, &config).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn exact_lambda_hits_target(
        probs in prop::collection::vec(0.01f64..1.0, 2..20),
        weights in prop::collection::vec(0.01f64..2.0, 20),
        tau in 0.01f64..0.95,
    ) {
        let total: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let weights = &weights[..probs.len()];
        let lambda = exact_lambda(&probs, weights, tau).unwrap();
        let reduction: f64 = probs
            .iter()
            .zip(weights)
            .map(|(p, c)| p * lambda * c / (1.0 + lambda * c))
            .sum();
        prop_assert!((reduction - tau).abs() <= 1e-10);
    }

    #[test]
    fn pass_at_k_is_monotone(n in 1usize..60, c_frac in 0.0f64..=1.0) {
        let c = (c_frac * n as f64) as usize;
        let mut last = 0.0;
        for k in 1..=n {
            let v = pass_at_k(n, c, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(v >= last - 1e-12);
            last = v;
        }
        if c < n {
            prop_assert!(pass_at_k(n, c, 1).unwrap() <= pass_at_k(n, c + 1, 1).unwrap());
        }
    }

    #[test]
    fn ecdf_is_monotone(values in prop::collection::vec(-100.0f64..100.0, 1..200)) {
        let curve = ecdf(&values).unwrap();
        prop_assert!(curve.sorted_values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(curve.cumulative_fractions.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*curve.cumulative_fractions.last().unwrap(), 1.0);
        prop_assert_eq!(curve.eval(f64::NEG_INFINITY), 0.0);
        prop_assert_eq!(curve.eval(f64::INFINITY), 1.0);
    }

    #[test]
    fn uniform_maximizes_entropy(raw in prop::collection::vec(0.0f64..1.0, 1..100)) {
        prop_assume!(raw.iter().sum::<f64>() > 1e-6);
        let total: f64 = raw.iter().sum();
        let dist = NextTokenDistribution::dense(raw.iter().map(|x| x / total).collect()).unwrap();
        prop_assert!(shannon_entropy(&dist) <= (raw.len() as f64).ln() + 1e-12);
    }
}
