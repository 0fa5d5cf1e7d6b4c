use fedgrab::data::{self, ClassCountVector};
use fedgrab::dpa;
use fedgrab::fed;
use fedgrab::metrics::{self, ClassGroups};
use fedgrab::model::{self, LogitGradientSplit, ModelMode};
use fedgrab::sgb::{self, SgbBank, SgbGains};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn counts_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..40, 2..7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_conserves_counts(
        counts in counts_strategy(),
        n in 1usize..8,
        alpha in 0.05f64..20.0,
        seed in any::<u64>(),
    ) {
        let counts = ClassCountVector::new(counts).unwrap();
        let (ds, _) = data::synthesize_dataset(3, &counts, 2.0, 1.0, 1, seed).unwrap();
        let shards = data::partition_dirichlet(&ds, n, alpha, seed).unwrap();
        prop_assert_eq!(shards.len(), n);
        for c in 0..counts.num_classes() {
            let total: usize = shards.iter().map(|s| s.local_counts[c]).sum();
            prop_assert_eq!(total, counts.as_slice()[c]);
        }
        let samples: usize = shards.iter().map(|s| s.samples.len()).sum();
        prop_assert_eq!(samples, counts.total());
        for s in &shards {
            let mut hist = vec![0; counts.num_classes()];
            s.samples.iter().for_each(|x| hist[x.label] += 1);
            prop_assert_eq!(&hist, &s.local_counts);
        }
    }

    #[test]
    fn partition_is_deterministic(counts in counts_strategy(), n in 1usize..6, seed in any::<u64>()) {
        let counts = ClassCountVector::new(counts).unwrap();
        let (ds, _) = data::synthesize_dataset(2, &counts, 2.0, 1.0, 1, seed).unwrap();
        let a = data::partition_dirichlet(&ds, n, 0.5, seed).unwrap();
        let b = data::partition_dirichlet(&ds, n, 0.5, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn longtailed_counts_are_non_increasing(m in 2usize..30, n_max in 1usize..10_000, imb in 1.0f64..200.0) {
        let result = data::make_longtailed_counts(m, n_max, imb);
        if (n_max as f64) < imb {
            prop_assert!(result.is_err());
        } else {
            let c = result.unwrap();
            prop_assert_eq!(c.as_slice()[0], n_max);
            prop_assert!(c.as_slice().windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(c.as_slice().iter().all(|&n| n >= 1));
        }
    }

    #[test]
    fn largest_remainder_hits_total(
        total in 0usize..5000,
        props in prop::collection::vec(0.0f64..1.0, 1..12),
    ) {
        prop_assume!(props.iter().sum::<f64>() > 1e-9);
        let sum: f64 = props.iter().sum();
        let p: Vec<f64> = props.iter().map(|v| v / sum).collect();
        let alloc = data::largest_remainder(total, &p);
        prop_assert_eq!(alloc.iter().sum::<usize>(), total);
        for (a, q) in alloc.iter().zip(&p) {
            prop_assert!((*a as f64 - q * total as f64).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn softmax_normalizes_and_is_shift_invariant(
        logits in prop::collection::vec(-30.0f64..30.0, 1..10),
        shift in -500.0f64..500.0,
    ) {
        let mut p = vec![0.0; logits.len()];
        model::softmax(&logits, &mut p);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let mut q = vec![0.0; logits.len()];
        model::softmax(&shifted, &mut q);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_split_identity(
        x in prop::collection::vec(-3.0f64..3.0, 4),
        m in 2usize..6,
        seed in any::<u64>(),
        label_pick in any::<usize>(),
    ) {
        let params = model::init_model(4, 3, m, ModelMode::Mlp, seed).unwrap();
        let y = label_pick % m;
        let trace = model::forward(&params, &[&x]).unwrap();
        let split = model::logit_gradient_split(&trace, &[y]);
        let probs = trace.probs_of(0);
        prop_assert!((split.pos[y] - (1.0 - probs[y])).abs() < 1e-15);
        let neg_sum: f64 = (0..m).filter(|&j| j != y).map(|j| split.neg[j]).sum();
        prop_assert!((split.pos[y] - neg_sum).abs() < 1e-12);
        prop_assert_eq!(split.neg[y], 0.0);
        prop_assert!((0..m).filter(|&j| j != y).all(|j| split.pos[j] == 0.0));
    }

    #[test]
    fn prior_scale_invariant_ordered_and_valid(
        norms in prop::collection::vec(0.0f64..10.0, 2..12),
        scale in 1e-3f64..1e3,
    ) {
        prop_assume!(norms.iter().sum::<f64>() > 1e-9);
        let p = dpa::estimate_prior(&norms).unwrap();
        let scaled: Vec<f64> = norms.iter().map(|v| v * scale).collect();
        let q = dpa::estimate_prior(&scaled).unwrap();
        for (a, b) in p.probs().iter().zip(q.probs()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.probs().iter().all(|v| *v >= 0.0));
        for i in 0..norms.len() {
            for j in 0..norms.len() {
                if norms[i] < norms[j] {
                    prop_assert!(p.probs()[i] < p.probs()[j]);
                }
            }
        }
    }

    #[test]
    fn gated_betas_are_monotone_in_u(a in -20.0f64..20.0, gap in 1e-3f64..5.0) {
        let g = SgbGains::default();
        let lo = sgb::coefficients(a, 0.0, 0.5, &g);
        let hi = sgb::coefficients(a + gap, 0.0, 0.5, &g);
        prop_assert!(hi.pos < lo.pos);
        prop_assert!(hi.neg > lo.neg);
        let closed = sgb::coefficients(a, 0.9, 0.5, &g);
        prop_assert_eq!((closed.pos, closed.neg), (1.0, 1.0));
    }

    #[test]
    fn bank_commutes_with_class_permutation(
        stream in prop::collection::vec(prop::collection::vec((0.0f64..3.0, 0.0f64..3.0), 5), 1..30),
        gates in prop::collection::vec(prop::bool::ANY, 5),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let m = 5;
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        // deterministic gates make the per-class draws irrelevant
        let thresholds: Vec<f64> = gates.iter().map(|&g| if g { 0.0 } else { 1.0 }).collect();
        let permuted_thresholds: Vec<f64> = (0..m).map(|k| thresholds[perm[k]]).collect();
        let mut a = SgbBank::new(m, SgbGains::default());
        let mut b = SgbBank::new(m, SgbGains::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for batch in &stream {
            let split = LogitGradientSplit {
                pos: batch.iter().map(|p| p.0).collect(),
                neg: batch.iter().map(|p| p.1).collect(),
            };
            let permuted = LogitGradientSplit {
                pos: (0..m).map(|k| split.pos[perm[k]]).collect(),
                neg: (0..m).map(|k| split.neg[perm[k]]).collect(),
            };
            let sa = a.step(&thresholds, &split, &mut rng).unwrap();
            let sb = b.step(&permuted_thresholds, &permuted, &mut rng).unwrap();
            for (b_step, &j) in sb.iter().zip(&perm) {
                prop_assert_eq!(b_step.coeffs, sa[j].coeffs);
                prop_assert_eq!(b_step.u, sa[j].u);
            }
        }
        for (state, &j) in b.states.iter().zip(&perm) {
            prop_assert_eq!(state, &a.states[j]);
        }
    }

    #[test]
    fn fedavg_matches_flat_weighted_mean(
        k in 1usize..6,
        sizes in prop::collection::vec(1usize..1000, 6),
        seed in any::<u64>(),
    ) {
        let models: Vec<_> = (0..k)
            .map(|i| model::init_model(3, 2, 4, ModelMode::Mlp, seed.wrapping_add(i as u64)).unwrap())
            .collect();
        let pairs: Vec<_> = models.iter().zip(sizes.iter().copied()).collect();
        let got = fed::fedavg_aggregate(&pairs).unwrap().to_flat();
        let total: usize = sizes[..k].iter().sum();
        for (i, g) in got.iter().enumerate() {
            let want: f64 = models
                .iter()
                .zip(&sizes)
                .map(|(p, &n)| p.to_flat()[i] * n as f64 / total as f64)
                .sum();
            prop_assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_statistics_ignore_client_order(
        deltas in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..8),
        rot in 0usize..8,
    ) {
        let banks: Vec<SgbBank> = deltas
            .iter()
            .map(|d| {
                let mut bank = SgbBank::new(3, SgbGains::default());
                for (s, &v) in bank.states.iter_mut().zip(d) {
                    s.cum_pos = v.max(0.0);
                    s.cum_neg = (-v).max(0.0);
                }
                bank
            })
            .collect();
        let mut rotated = banks.clone();
        let len = rotated.len();
        rotated.rotate_left(rot % len);
        rotated.reverse();
        let a = metrics::delta_statistics(&banks);
        let b = metrics::delta_statistics(&rotated);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.mean - y.mean).abs() < 1e-9);
            prop_assert!((x.std - y.std).abs() < 1e-9);
        }
    }

    #[test]
    fn rounds_to_target_is_monotone(
        history in prop::collection::vec(0.0f64..1.0, 0..40),
        t1 in 0.0f64..1.0,
        t2 in 0.0f64..1.0,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        match (metrics::rounds_to_target(&history, lo), metrics::rounds_to_target(&history, hi)) {
            (Some(a), Some(b)) => prop_assert!(a <= b),
            (None, Some(_)) => prop_assert!(false, "higher target reached, lower not"),
            _ => {}
        }
    }

    #[test]
    fn overall_accuracy_combines_groups(
        per_class in 1usize..6,
        preds in prop::collection::vec(0usize..6, 36),
    ) {
        let m = 6;
        let groups: ClassGroups = metrics::split_many_med_few(
            &ClassCountVector::new(vec![60, 50, 40, 30, 20, 10]).unwrap(),
        );
        let labels: Vec<usize> = (0..m * per_class).map(|i| i / per_class).collect();
        let preds = &preds[..labels.len()];
        let acc = metrics::group_accuracy(preds, &labels, &groups).unwrap();
        let weighted = [
            (acc.many, groups.many.len()),
            (acc.med, groups.med.len()),
            (acc.few, groups.few.len()),
        ]
        .iter()
        .map(|(a, n)| a.unwrap_or(0.0) * *n as f64)
        .sum::<f64>()
            / m as f64;
        prop_assert!((acc.all - weighted).abs() < 1e-12);
    }

    #[test]
    fn tau_one_gives_unit_rows(seed in any::<u64>(), m in 2usize..6) {
        let p = model::init_model(5, 0, m, ModelMode::Linear, seed).unwrap();
        let q = model::tau_normalize(&p, 1.0).unwrap();
        for n in model::classifier_weight_norms(&q) {
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(model::tau_normalize(&p, 0.0).unwrap(), p);
    }
}
