//! Built-in invariant suite, runnable from the command line.
//!
//! Every check compares library output against an independent computation
//! (direct divergence, central finite differences, brute-force threshold
//! sweep). The suite is seeded and takes a few seconds.
//!
//! Mutation hook: [`SelfTestOptions::mutate_entropy_sign`] flips the sign of
//! the entropy term inside the divergence-equivalence check, which must then
//! fail. It exists to show the check is sensitive; it never touches the loss
//! code itself.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::loss::{
    aam_transform, combined_loss, combined_loss_grad, cross_entropy, entropy_term, jeffreys_direct,
    jeffreys_loss, label_smoothing_term, objective_grad_logits, objective_loss, softmax, AamConfig,
    LogitVector, LossWeights, PosteriorDistribution,
};
use crate::probe::{mean_kl_gap, mean_kl_gap_dot};
use crate::scoring::{compute_det, compute_eer, compute_min_dcf, DcfParams, ScoreSet};
use crate::trainer::{init_params, Activation, LossKind, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfTestOptions {
    pub seed: u64,
    pub mutate_entropy_sign: bool,
}

impl Default for SelfTestOptions {
    fn default() -> Self {
        Self {
            seed: 20220,
            mutate_entropy_sign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Largest observed error, in the units of `tolerance`.
    pub max_error: f64,
    pub tolerance: f64,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTestSummary {
    pub passed: bool,
    pub mutated: bool,
    pub checks: Vec<CheckResult>,
    pub elapsed_ms: u128,
}

/// Random posterior: softmax of Gaussian logits with a random temperature,
/// so both near-uniform and very peaked cases occur.
pub fn random_posterior(rng: &mut impl Rng, k: usize) -> PosteriorDistribution {
    let scale = 10f64.powf(rng.random_range(-1.0..1.2));
    let z: Vec<f64> = (0..k).map(|_| scale * gauss(rng)).collect();
    let target = rng.random_range(0..k);
    softmax(&LogitVector::new(z).expect("finite logits"), target).expect("valid target")
}

/// Posterior with target mass `pk` and the rest spread evenly.
pub fn uniform_non_target_posterior(k: usize, target: usize, pk: f64) -> PosteriorDistribution {
    let rest = (1.0 - pk) / (k - 1) as f64;
    let probs: Vec<f64> = (0..k).map(|i| if i == target { pk } else { rest }).collect();
    PosteriorDistribution::from_probs(&probs, target).expect("valid posterior")
}

fn gauss(rng: &mut impl Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

fn rel_close(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, 1e-8)`
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + h;
            let up = f(&buf);
            buf[i] = x[i] - h;
            let down = f(&buf);
            buf[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `(P_miss, P_fa)` at threshold `t` by direct counting.
fn rates_at(scores: &ScoreSet, t: f64) -> (f64, f64) {
    let miss = scores.target_scores.iter().filter(|&&s| s < t).count();
    let fa = scores.nontarget_scores.iter().filter(|&&s| s >= t).count();
    (
        miss as f64 / scores.target_scores.len() as f64,
        fa as f64 / scores.nontarget_scores.len() as f64,
    )
}

/// Brute-force EER and minDCF: every distinct score and both infinities are
/// tried as thresholds, each evaluated by a full pass over the scores.
pub fn sweep_oracle(scores: &ScoreSet, dcf: &DcfParams) -> (f64, f64) {
    let mut thresholds: Vec<f64> = scores
        .target_scores
        .iter()
        .chain(&scores.nontarget_scores)
        .copied()
        .collect();
    thresholds.push(f64::NEG_INFINITY);
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let rates: Vec<(f64, f64)> = thresholds.iter().map(|&t| rates_at(scores, t)).collect();

    let miss_w = dcf.c_miss * dcf.p_target;
    let fa_w = dcf.c_fa * (1.0 - dcf.p_target);
    let min_dcf = rates
        .iter()
        .map(|&(m, f)| (miss_w * m + fa_w * f) / miss_w.min(fa_w))
        .fold(f64::INFINITY, f64::min);

    let mut eer = 1.0;
    for w in rates.windows(2) {
        let (d0, d1) = (w[0].0 - w[0].1, w[1].0 - w[1].1);
        if d0 < 0.0 && d1 >= 0.0 {
            eer = if d1 == 0.0 {
                w[1].0
            } else {
                let t = -d0 / (d1 - d0);
                w[0].1 + t * (w[1].1 - w[0].1)
            };
            break;
        }
    }
    (eer, min_dcf)
}

struct Tracker {
    cases: usize,
    max_error: f64,
}

impl Tracker {
    fn new() -> Self {
        Self { cases: 0, max_error: 0.0 }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        if err.is_nan() || err > self.max_error {
            self.max_error = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    fn finish(self, name: &str, tolerance: f64, start: Instant) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            passed: self.max_error <= tolerance,
            cases: self.cases,
            max_error: self.max_error,
            tolerance,
            elapsed_ms: start.elapsed().as_millis(),
        }
    }
}

const SIZES: [usize; 5] = [2, 3, 10, 100, 512];

fn check_divergence_equivalence(rng: &mut ChaCha8Rng, mutate: bool) -> CheckResult {
    let start = Instant::now();
    let mut t = Tracker::new();
    for n in 0..10_000 {
        let p = random_posterior(rng, SIZES[n % SIZES.len()]);
        let two_term = if mutate {
            label_smoothing_term(&p) - entropy_term(&p)
        } else {
            jeffreys_loss(&p)
        };
        let direct = jeffreys_direct(&p);
        // tolerance 1e-9 + 1e-9·|value|, expressed as a ratio to that bound
        t.record((direct - two_term).abs() / (1e-9 + 1e-9 * direct.abs()));
    }
    t.finish("divergence_two_term_equals_direct", 1.0, start)
}

fn check_nonnegative_and_uniform_zero(rng: &mut ChaCha8Rng) -> CheckResult {
    let start = Instant::now();
    let mut t = Tracker::new();
    for n in 0..10_000 {
        let p = random_posterior(rng, SIZES[n % SIZES.len()]);
        t.record((-jeffreys_loss(&p) - 1e-12).max(0.0) * 1e12);
    }
    for n in 0..1_000 {
        let k = SIZES[1 + n % (SIZES.len() - 1)];
        let p = uniform_non_target_posterior(k, rng.random_range(0..k), rng.random_range(0.0..1.0));
        t.record(jeffreys_loss(&p).abs() / 1e-10);
    }
    t.finish("divergence_nonnegative_and_zero_at_uniform", 1.0, start)
}

fn check_reductions(rng: &mut ChaCha8Rng) -> CheckResult {
    let start = Instant::now();
    let mut t = Tracker::new();
    for n in 0..2_000 {
        let p = random_posterior(rng, SIZES[n % SIZES.len()]);
        let a = rng.random_range(0.0..1.0);
        let total = combined_loss(&p, &LossWeights { alpha: a, beta: a }).total;
        t.record(rel_close(total, cross_entropy(&p) + a * jeffreys_loss(&p)) / 1e-12);
        let total = combined_loss(&p, &LossWeights { alpha: a, beta: 0.0 }).total;
        t.record(rel_close(total, cross_entropy(&p) + a * label_smoothing_term(&p)) / 1e-12);
    }
    t.finish("weight_reductions", 1.0, start)
}

fn check_loss_gradients(rng: &mut ChaCha8Rng) -> CheckResult {
    let start = Instant::now();
    let mut t = Tracker::new();
    for n in 0..200 {
        let k = [3, 5, 10][n % 3];
        let target = rng.random_range(0..k);
        let weights = LossWeights {
            alpha: rng.random_range(0.0..0.5),
            beta: rng.random_range(0.0..0.5),
        };
        if n % 2 == 0 {
            let z: Vec<f64> = (0..k).map(|_| 3.0 * gauss(rng)).collect();
            let g = combined_loss_grad(&z, target, &weights, None).expect("valid input");
            let fd = central_difference(&z, 1e-5, |x| {
                let p = softmax(&LogitVector::new(x.to_vec()).unwrap(), target).unwrap();
                combined_loss(&p, &weights).total
            });
            t.record(relative_error(&g, &fd));
        } else {
            let aam = AamConfig {
                scale: rng.random_range(2.0..10.0),
                margin: rng.random_range(0.0..0.5),
            };
            let c: Vec<f64> = (0..k).map(|_| rng.random_range(-0.9..0.9)).collect();
            let g = combined_loss_grad(&c, target, &weights, Some(&aam)).expect("valid input");
            let fd = central_difference(&c, 1e-5, |x| {
                let p = softmax(&aam_transform(x, target, &aam).unwrap(), target).unwrap();
                combined_loss(&p, &weights).total
            });
            t.record(relative_error(&g, &fd));
        }
    }
    // The full-distribution penalty goes through the generic objective path.
    for _ in 0..50 {
        let k = 6;
        let target = rng.random_range(0..k);
        let objective = LossKind::CePereyra.objective(LossWeights { alpha: 0.1, beta: 0.3 });
        let z: Vec<f64> = (0..k).map(|_| 3.0 * gauss(rng)).collect();
        let (_, g) = objective_grad_logits(&LogitVector::new(z.clone()).unwrap(), target, &objective).unwrap();
        let fd = central_difference(&z, 1e-5, |x| {
            let p = softmax(&LogitVector::new(x.to_vec()).unwrap(), target).unwrap();
            objective_loss(&p, &objective).total
        });
        t.record(relative_error(&g, &fd));
    }
    t.finish("loss_gradient_finite_difference", 1e-6, start)
}

fn check_network_gradients(rng: &mut ChaCha8Rng) -> CheckResult {
    let start = Instant::now();
    let mut t = Tracker::new();
    let spec = NetworkSpec {
        input_dim: 3,
        hidden_dims: vec![4],
        embed_dim: 3,
        num_classes: 4,
        activation: Activation::Tanh,
    };
    let weights = LossWeights { alpha: 0.2, beta: 0.3 };
    for (n, kind) in LossKind::ALL.iter().cycle().take(24).enumerate() {
        let aam = AamConfig {
            scale: 4.0,
            margin: if n % 2 == 0 { 0.0 } else { 0.2 },
        };
        let objective = kind.objective(weights);
        let mut params = init_params(&spec, rng.random()).expect("valid spec");
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| gauss(rng)).collect()).collect();
        let inputs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
        let (_, grads) = params
            .loss_and_grad(&inputs, &labels, &objective, &aam)
            .expect("finite loss");
        let analytic: Vec<f64> = (0..grads.num_values()).map(|i| grads.value(i)).collect();
        let x0: Vec<f64> = (0..params.tensors.num_values()).map(|i| params.tensors.value(i)).collect();
        let fd = central_difference(&x0, 1e-5, |x| {
            for (i, &v) in x.iter().enumerate() {
                *params.tensors.value_mut(i) = v;
            }
            params
                .batch_loss(&inputs, &labels, &objective, &aam)
                .expect("finite loss")
                .total
        });
        t.record(relative_error(&analytic, &fd));
    }
    t.finish("network_gradient_finite_difference", 1e-5, start)
}

fn check_metrics(rng: &mut ChaCha8Rng) -> CheckResult {
    let start = Instant::now();
    let mut t = Tracker::new();
    let dcf = DcfParams::default();
    let mut sets = vec![ScoreSet::new(vec![0.9, 0.8, 0.4], vec![0.5, 0.2, 0.1])];
    for _ in 0..100 {
        let nt = rng.random_range(1..100);
        let nn = rng.random_range(1..100);
        let shift = rng.random_range(-1.0..3.0);
        // Rounding creates ties, which exercise the threshold convention.
        let q = if rng.random_bool(0.5) { 10.0 } else { 1e6 };
        let mut draw = |mu: f64| (q * (mu + gauss(rng))).round() / q;
        let tgt = (0..nt).map(|_| draw(shift)).collect();
        let non = (0..nn).map(|_| draw(0.0)).collect();
        sets.push(ScoreSet::new(tgt, non));
    }
    for (i, s) in sets.iter().enumerate() {
        let curve = compute_det(s).expect("non-empty scores");
        let (eer, min_dcf) = sweep_oracle(s, &dcf);
        let mut err = (compute_eer(&curve) - eer).abs().max((compute_min_dcf(&curve, &dcf) - min_dcf).abs());
        if i == 0 {
            err = err.max((eer - 1.0 / 3.0).abs()).max((min_dcf - 1.0 / 3.0).abs());
        }
        if !curve.is_monotone() {
            err = f64::INFINITY;
        }
        t.record(err);
    }
    t.finish("metrics_match_threshold_sweep", 1e-12, start)
}

fn check_kl_identity(rng: &mut ChaCha8Rng) -> CheckResult {
    let start = Instant::now();
    let mut t = Tracker::new();
    for n in 0..200 {
        let k = [5, 10, 50][n % 3];
        let set: Vec<PosteriorDistribution> = (0..20).map(|_| random_posterior(rng, k)).collect();
        let q1 = random_posterior(rng, k);
        let q2 = random_posterior(rng, k);
        let (a, b) = mean_kl_gap(&set, &q1, &q2).expect("matching sizes");
        let dot = mean_kl_gap_dot(&set, &q1, &q2).expect("matching sizes");
        t.record(((a - b) - dot).abs());
    }
    t.finish("expected_kl_gap_identity", 1e-10, start)
}

pub fn self_test(opts: &SelfTestOptions) -> SelfTestSummary {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let checks = vec![
        check_divergence_equivalence(&mut rng, opts.mutate_entropy_sign),
        check_nonnegative_and_uniform_zero(&mut rng),
        check_reductions(&mut rng),
        check_loss_gradients(&mut rng),
        check_network_gradients(&mut rng),
        check_metrics(&mut rng),
        check_kl_identity(&mut rng),
    ];
    SelfTestSummary {
        passed: checks.iter().all(|c| c.passed),
        mutated: opts.mutate_entropy_sign,
        checks,
        elapsed_ms: start.elapsed().as_millis(),
    }
}
