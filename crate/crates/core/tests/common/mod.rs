//! Reference computations for the integration tests, written independently
//! of the library code they check.
#![allow(dead_code)]

use jeffreys_core::loss::{softmax, LogitVector, PosteriorDistribution};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gauss(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Softmax of Gaussian logits with a log-uniform temperature in [0.1, 16].
pub fn random_posterior(rng: &mut impl Rng, k: usize) -> PosteriorDistribution {
    let scale = 10f64.powf(rng.random_range(-1.0..1.2));
    let z: Vec<f64> = (0..k).map(|_| scale * gauss(rng)).collect();
    softmax(&LogitVector::new(z).unwrap(), rng.random_range(0..k)).unwrap()
}

/// `KL(u || q) + KL(q || u)` with `q` the renormalized non-target
/// probabilities and `u` uniform over them, from the raw probability vector.
pub fn symmetric_kl_oracle(probs: &[f64], target: usize) -> f64 {
    let rest: Vec<f64> = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .map(|(_, &p)| p)
        .collect();
    let mass: f64 = rest.iter().sum();
    let u = 1.0 / rest.len() as f64;
    rest.iter()
        .map(|&p| {
            let q = p / mass;
            u * (u / q).ln() + q * (q / u).ln()
        })
        .sum()
}

pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        buf[i] = x[i] + h;
        let up = f(&buf);
        buf[i] = x[i] - h;
        let down = f(&buf);
        buf[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Norm-wise relative error `‖a - b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(b)).max(1e-8)
}

/// EER and minDCF by trying every candidate threshold and recounting
/// misses and false alarms from scratch each time: O(n²).
pub fn threshold_sweep(targets: &[f64], nontargets: &[f64], p_target: f64, c_miss: f64, c_fa: f64) -> (f64, f64) {
    let mut cands = vec![f64::NEG_INFINITY, f64::INFINITY];
    cands.extend(targets.iter().chain(nontargets));
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    let mut pts = Vec::new();
    for &t in &cands {
        let pm = targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;
        let pf = nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64;
        pts.push((pm, pf));
    }
    let a = c_miss * p_target;
    let b = c_fa * (1.0 - p_target);
    let dcf = pts.iter().map(|&(pm, pf)| (a * pm + b * pf) / a.min(b)).fold(f64::INFINITY, f64::min);
    let mut eer = f64::NAN;
    for i in 1..pts.len() {
        let (m0, f0) = pts[i - 1];
        let (m1, f1) = pts[i];
        if m0 - f0 < 0.0 && m1 - f1 >= 0.0 {
            let d0 = m0 - f0;
            let d1 = m1 - f1;
            eer = if d1 == 0.0 { m1 } else { f0 + (-d0 / (d1 - d0)) * (f1 - f0) };
            break;
        }
    }
    (eer, dcf)
}
