//! Output-distribution diagnostics for unseen utterances.
//!
//! The "top training speakers" of an utterance are the training classes that
//! carry most of its posterior mass. Many top speakers means a flat posterior,
//! which is what out-of-domain data tends to produce.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::PosteriorDistribution;

/// Default cumulative-mass level for [`top_training_speakers`].
pub const DEFAULT_TAU: f64 = 0.9;

/// Slack on the cumulative-mass comparison, so that e.g. nine labels of 0.1
/// reach 0.9 despite rounding.
const MASS_SLACK: f64 = 1e-12;

/// Size of the smallest prefix of labels, sorted by decreasing probability
/// (ties by lower index), whose mass reaches `tau`.
pub fn top_training_speakers(p: &PosteriorDistribution, tau: f64) -> usize {
    top_count(p.probs(), tau)
}

fn top_count(probs: &[f64], tau: f64) -> usize {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    for (n, &i) in order.iter().enumerate() {
        mass += probs[i];
        if mass >= tau - MASS_SLACK {
            return n + 1;
        }
    }
    probs.len()
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidConfig(format!("tau must lie in (0, 1], got {tau}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub per_utterance_top_counts: Vec<usize>,
    pub mean_top_count: f64,
    pub domain_tag: String,
}

pub fn probe_dataset(
    posteriors: &[PosteriorDistribution],
    tau: f64,
    domain_tag: &str,
) -> Result<ProbeResult> {
    check_tau(tau)?;
    if posteriors.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let counts: Vec<usize> = posteriors.iter().map(|p| top_training_speakers(p, tau)).collect();
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    Ok(ProbeResult {
        per_utterance_top_counts: counts,
        mean_top_count: mean,
        domain_tag: domain_tag.to_string(),
    })
}

/// `D_KL(p || q)`
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&pi, &qi)| pi * (pi / qi).ln()).sum()
}

/// `(E_p[D_KL(p || q1)], E_p[D_KL(p || q2)])` over a set of posteriors.
///
/// Their difference is `E[p] · (log q2 - log q1)`, see [`mean_kl_gap_dot`].
pub fn mean_kl_gap(
    posteriors: &[PosteriorDistribution],
    q1: &PosteriorDistribution,
    q2: &PosteriorDistribution,
) -> Result<(f64, f64)> {
    check_references(posteriors, q1, q2)?;
    let n = posteriors.len() as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for p in posteriors {
        a += kl_divergence(p.probs(), q1.probs());
        b += kl_divergence(p.probs(), q2.probs());
    }
    Ok((a / n, b / n))
}

/// `E[p] · (log q2 - log q1)`, the dot-product form of the KL gap.
pub fn mean_kl_gap_dot(
    posteriors: &[PosteriorDistribution],
    q1: &PosteriorDistribution,
    q2: &PosteriorDistribution,
) -> Result<f64> {
    check_references(posteriors, q1, q2)?;
    let k = q1.num_classes();
    let mut mean = vec![0.0; k];
    for p in posteriors {
        for (m, &pi) in mean.iter_mut().zip(p.probs()) {
            *m += pi;
        }
    }
    let n = posteriors.len() as f64;
    Ok(mean
        .iter()
        .zip(q1.probs().iter().zip(q2.probs()))
        .map(|(m, (a, b))| m / n * (b.ln() - a.ln()))
        .sum())
}

fn check_references(
    posteriors: &[PosteriorDistribution],
    q1: &PosteriorDistribution,
    q2: &PosteriorDistribution,
) -> Result<()> {
    if posteriors.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = q1.num_classes();
    for n in std::iter::once(q2.num_classes()).chain(posteriors.iter().map(|p| p.num_classes())) {
        if n != k {
            return Err(Error::DimensionMismatch { expected: k, got: n });
        }
    }
    Ok(())
}

pub fn write_probe_json(path: &Path, result: &ProbeResult) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(result)? + "\n")?;
    Ok(())
}

/// Writes `utterance,top_count`, one row per probed utterance.
pub fn write_top_counts_csv(path: &Path, utterance_ids: &[usize], result: &ProbeResult) -> Result<()> {
    if utterance_ids.len() != result.per_utterance_top_counts.len() {
        return Err(Error::DimensionMismatch {
            expected: result.per_utterance_top_counts.len(),
            got: utterance_ids.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["utterance", "top_count"])?;
    for (id, c) in utterance_ids.iter().zip(&result.per_utterance_top_counts) {
        w.write_record([id.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
