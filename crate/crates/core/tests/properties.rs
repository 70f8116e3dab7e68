mod common;

use jeffreys_core::loss::{
    aam_transform, combined_loss, cross_entropy, entropy_term, jeffreys_direct, jeffreys_loss,
    label_smoothing_term, softmax, AamConfig, LogitVector, LossWeights, PosteriorDistribution,
};
use jeffreys_core::probe::{mean_kl_gap, mean_kl_gap_dot, top_training_speakers};
use jeffreys_core::scoring::{center_and_cosine_score, compute_det, compute_eer, compute_min_dcf, DcfParams, ScoreSet};
use jeffreys_core::synth::{make_trials, orthogonality_error, random_orthogonal, DomainShift, ShiftParams, Utterance};
use jeffreys_core::trainer::{init_params, params_from_bytes, params_to_bytes, Activation, NetworkSpec};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn logits(max_k: usize) -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2..max_k).prop_flat_map(|k| (prop::collection::vec(-20.0..20.0f64, k), 0..k))
}

fn posterior(max_k: usize) -> impl Strategy<Value = PosteriorDistribution> {
    logits(max_k).prop_map(|(z, t)| softmax(&LogitVector::new(z).unwrap(), t).unwrap())
}

/// Scores on a 1/64 grid so that doubling and integer shifts are exact.
fn grid_scores() -> impl Strategy<Value = ScoreSet> {
    (
        prop::collection::vec(-512i32..512, 1..60),
        prop::collection::vec(-512i32..512, 1..60),
    )
        .prop_map(|(t, n)| {
            let f = |v: Vec<i32>| v.into_iter().map(|x| x as f64 / 64.0).collect();
            ScoreSet::new(f(t), f(n))
        })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution((z, t) in logits(40)) {
        let p = softmax(&LogitVector::new(z).unwrap(), t).unwrap();
        let sum: f64 = p.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(p.probs().iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn divergence_forms_agree_and_are_nonnegative(p in posterior(60)) {
        let two_term = jeffreys_loss(&p);
        prop_assert!(two_term >= -1e-12);
        let oracle = common::symmetric_kl_oracle(p.probs(), p.target());
        prop_assert!((two_term - oracle).abs() <= 1e-9 + 1e-9 * oracle.abs());
        prop_assert!((jeffreys_direct(&p) - oracle).abs() <= 1e-9 + 1e-9 * oracle.abs());
    }

    #[test]
    fn term_bounds(p in posterior(60)) {
        // Jensen: LS ≥ -ln(S/n); H lies in [ln(S/n), ln S].
        let n = (p.num_classes() - 1) as f64;
        let s = p.non_target_mass();
        prop_assert!(label_smoothing_term(&p) >= -(s / n).ln() - 1e-9);
        let h = entropy_term(&p);
        prop_assert!(h >= (s / n).ln() - 1e-9 && h <= s.ln() + 1e-9);
        prop_assert!(cross_entropy(&p) >= 0.0);
    }

    #[test]
    fn combined_is_weighted_sum(p in posterior(30), a in 0.0..2.0f64, b in 0.0..2.0f64) {
        let l = combined_loss(&p, &LossWeights::new(a, b).unwrap());
        let expect = cross_entropy(&p) + a * label_smoothing_term(&p) + b * entropy_term(&p);
        prop_assert!((l.total - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
    }

    #[test]
    fn uniform_non_targets_give_zero(k in 3usize..200, pk in 0.0..1.0f64, t in 0usize..1000) {
        let t = t % k;
        let rest = (1.0 - pk) / (k - 1) as f64;
        let probs: Vec<f64> = (0..k).map(|i| if i == t { pk } else { rest }).collect();
        let p = PosteriorDistribution::from_probs(&probs, t).unwrap();
        prop_assert!(jeffreys_loss(&p).abs() <= 1e-10);
    }

    #[test]
    fn zero_margin_is_plain_scaling(c in prop::collection::vec(-1.0..1.0f64, 2..20), s in 1.0..64.0f64) {
        let t = c.len() / 2;
        let z = aam_transform(&c, t, &AamConfig::new(s, 0.0).unwrap()).unwrap();
        for (zi, ci) in z.values().iter().zip(&c) {
            prop_assert!((zi - s * ci).abs() <= 1e-12 * s);
        }
    }

    #[test]
    fn margin_lowers_target_logit(c in prop::collection::vec(-0.99..0.99f64, 2..20), m in 0.01..1.5f64) {
        // cos(θ + m) < cos θ only while θ + m stays below π
        prop_assume!(c[0].acos() + m < std::f64::consts::PI);
        let z = aam_transform(&c, 0, &AamConfig::new(30.0, m).unwrap()).unwrap();
        prop_assert!(z.values()[0] < 30.0 * c[0]);
    }

    #[test]
    fn top_count_properties(p in posterior(30), t1 in 0.01..1.0f64, t2 in 0.01..1.0f64, seed in any::<u64>()) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = top_training_speakers(&p, lo);
        let b = top_training_speakers(&p, hi);
        prop_assert!(1 <= a && a <= b && b <= p.num_classes());
        // permutation invariance
        let mut order: Vec<usize> = (0..p.num_classes()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<f64> = order.iter().map(|&i| p.probs()[i]).collect();
        let q = PosteriorDistribution::from_probs(&permuted, 0).unwrap();
        prop_assert_eq!(top_training_speakers(&q, hi), b);
    }

    #[test]
    fn kl_gap_identity(seed in any::<u64>(), k in 2usize..12, n in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set: Vec<PosteriorDistribution> = (0..n).map(|_| common::random_posterior(&mut rng, k)).collect();
        let q1 = common::random_posterior(&mut rng, k);
        let q2 = common::random_posterior(&mut rng, k);
        let (a, b) = mean_kl_gap(&set, &q1, &q2).unwrap();
        prop_assert!(((a - b) - mean_kl_gap_dot(&set, &q1, &q2).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn det_and_metric_invariants(s in grid_scores()) {
        let curve = compute_det(&s).unwrap();
        prop_assert!(curve.is_monotone());
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        prop_assert_eq!((first.p_fa, first.p_miss), (1.0, 0.0));
        prop_assert_eq!((last.p_fa, last.p_miss), (0.0, 1.0));
        let dcf = DcfParams::default();
        let eer = compute_eer(&curve);
        let min_dcf = compute_min_dcf(&curve, &dcf);
        prop_assert!((0.0..=1.0).contains(&eer));
        prop_assert!((0.0..=1.0).contains(&min_dcf));
        let (oe, od) = common::threshold_sweep(&s.target_scores, &s.nontarget_scores, 0.01, 1.0, 1.0);
        prop_assert!((eer - oe).abs() <= 1e-12 && (min_dcf - od).abs() <= 1e-12);

        // strictly increasing transform, exact on the grid
        let f = |v: &[f64]| v.iter().map(|x| 2.0 * x + 3.0).collect::<Vec<_>>();
        let moved = compute_det(&ScoreSet::new(f(&s.target_scores), f(&s.nontarget_scores))).unwrap();
        prop_assert_eq!(compute_eer(&moved), eer);
        prop_assert_eq!(compute_min_dcf(&moved, &dcf), min_dcf);
    }

    #[test]
    fn cosine_score_is_bounded_and_symmetric(a in prop::collection::vec(-3.0..3.0f64, 4), b in prop::collection::vec(-3.0..3.0f64, 4)) {
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        let mean = DVector::from_element(4, 0.1);
        if let (Ok(x), Ok(y)) = (center_and_cosine_score(&a, &b, &mean), center_and_cosine_score(&b, &a, &mean)) {
            prop_assert!((-1.0..=1.0).contains(&x));
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn rotations_are_orthogonal(dim in 1usize..40, seed in any::<u64>(), sev in 0.0..3.0f64) {
        let q = random_orthogonal(dim, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(orthogonality_error(&q) <= 1e-9);
        let shift = DomainShift::from_severity(dim, sev, &ShiftParams::default(), seed).unwrap();
        prop_assert!(orthogonality_error(&shift.rotation) <= 1e-9);
    }

    #[test]
    fn trials_are_label_consistent(n_spk in 2usize..6, per in 2usize..6, nt in 0usize..10, nn in 1usize..10, seed in any::<u64>()) {
        let utts: Vec<Utterance> = (0..n_spk * per)
            .map(|i| Utterance { id: i, label: i / per, domain: "d".into(), features: vec![i as f64] })
            .collect();
        let max_t = n_spk * per * (per - 1) / 2;
        let max_n = n_spk * per * (n_spk * per - 1) / 2 - max_t;
        match make_trials(&utts, nt, nn, seed, false) {
            Ok(list) => {
                prop_assert_eq!(list.n_target(), nt);
                prop_assert_eq!(list.n_nontarget(), nn);
                for t in &list.trials {
                    prop_assert!(t.utt_a != t.utt_b);
                    prop_assert_eq!(t.is_target, utts[t.utt_a].label == utts[t.utt_b].label);
                }
            }
            Err(_) => prop_assert!(nt > max_t || nn > max_n),
        }
    }

    #[test]
    fn params_serialization_round_trips(hidden in prop::collection::vec(1usize..6, 0..3), seed in any::<u64>(), tanh in any::<bool>()) {
        let spec = NetworkSpec {
            input_dim: 3,
            hidden_dims: hidden,
            embed_dim: 2,
            num_classes: 3,
            activation: if tanh { Activation::Tanh } else { Activation::Relu },
        };
        let p = init_params(&spec, seed).unwrap();
        prop_assert_eq!(params_from_bytes(&params_to_bytes(&p), "mem").unwrap(), p);
    }
}
