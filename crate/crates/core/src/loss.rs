//! Classification losses over softmax posteriors and their logit gradients.
//!
//! Every loss here is a function of a [`PosteriorDistribution`]: a clamped
//! point on the probability simplex together with the index of the target
//! class. The regularizers only look at the non-target part of the
//! distribution:
//!
//! - [`label_smoothing_term`]: `-(1/(K-1)) Σ_{i≠k} log p_i`
//! - [`entropy_term`]: `Σ_{i≠k} p_i log p_i / (1 - p_k)`
//! - [`jeffreys_loss`]: the sum of the two, which equals the symmetric KL
//!   divergence between the renormalized non-target distribution and the
//!   uniform distribution ([`jeffreys_direct`] computes it that way).
//!
//! The training objective is `CE + α·LS + β·H` ([`combined_loss`]); with
//! `α = β` this is cross-entropy plus a single weighted Jeffreys term, with
//! `β = 0` it is plain label smoothing.
//!
//! All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for probabilities; the upper clamp is `1 - PROB_EPS`.
pub const PROB_EPS: f64 = 1e-12;

/// Cosines may exceed `[-1, 1]` by this much before they are rejected.
pub const COSINE_SLACK: f64 = 1e-9;

/// Floor on `sin θ` in the margin derivative, which is singular at `cos θ = ±1`.
const MIN_SIN_THETA: f64 = 1e-8;

/// Raw pre-softmax scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewClasses(values.len()));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }
}

/// A clamped softmax output with a designated target class.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDistribution {
    probs: Vec<f64>,
    target: usize,
}

impl PosteriorDistribution {
    /// Builds a posterior from an explicit probability vector.
    ///
    /// Entries must be finite, nonnegative and sum to one within `1e-6`; they
    /// are then clamped to `[ε, 1-ε]` and renormalized like [`softmax`] output.
    pub fn from_probs(probs: &[f64], target: usize) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::TooFewClasses(probs.len()));
        }
        check_target(target, probs.len())?;
        if let Some((index, &value)) = probs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        if probs.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidDistribution("negative probability".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Self {
            probs: clamp_and_renormalize(probs.to_vec()),
            target,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn target_prob(&self) -> f64 {
        self.probs[self.target]
    }

    /// Iterator over `(index, p_i)` for every `i ≠ k`.
    pub fn non_targets(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let target = self.target;
        self.probs
            .iter()
            .copied()
            .enumerate()
            .filter(move |&(i, _)| i != target)
    }

    /// Non-target mass `1 - p_k`, summed directly so it stays accurate when
    /// `p_k` is close to one.
    pub fn non_target_mass(&self) -> f64 {
        self.non_targets().map(|(_, p)| p).sum()
    }

    /// Same distribution with a different target.
    pub fn with_target(&self, target: usize) -> Result<Self> {
        check_target(target, self.probs.len())?;
        Ok(Self {
            probs: self.probs.clone(),
            target,
        })
    }
}

/// The non-target probabilities renormalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NonTargetDistribution(Vec<f64>);

impl NonTargetDistribution {
    pub fn from_posterior(p: &PosteriorDistribution) -> Self {
        let mass = p.non_target_mass();
        Self(p.non_targets().map(|(_, pi)| pi / mass).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Value of the uniform reference distribution, `1/(K-1)`.
    pub fn uniform_value(&self) -> f64 {
        1.0 / self.0.len() as f64
    }
}

/// Weights of the label-smoothing (`alpha`) and non-target entropy (`beta`) terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.025,
        }
    }
}

impl LossWeights {
    pub const NONE: LossWeights = LossWeights {
        alpha: 0.0,
        beta: 0.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "loss weight {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Additive angular margin head: `s·cos(θ_k + m)` for the target, `s·cos θ_i` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AamConfig {
    pub scale: f64,
    pub margin: f64,
}

impl Default for AamConfig {
    fn default() -> Self {
        Self {
            scale: 30.0,
            margin: 0.2,
        }
    }
}

impl AamConfig {
    pub fn new(scale: f64, margin: f64) -> Result<Self> {
        let cfg = Self { scale, margin };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "AAM scale must be positive, got {}",
                self.scale
            )));
        }
        if !(self.margin.is_finite() && (0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin)) {
            return Err(Error::InvalidConfig(format!(
                "AAM margin must lie in [0, π/2), got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Which entropy-like penalty the `beta` weight multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyPenalty {
    /// `Σ_{i≠k} p_i log p_i / (1 - p_k)`, the second Jeffreys term.
    #[default]
    NonTarget,
    /// `Σ_i p_i log p_i` over all labels, target included, no denominator.
    FullDistribution,
}

/// A complete per-example objective: weights plus the entropy penalty variant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Objective {
    pub weights: LossWeights,
    pub penalty: EntropyPenalty,
}

/// Per-example (or batch-mean) decomposition of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ls_term: f64,
    pub entropy_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.ce += weight * other.ce;
        self.ls_term += weight * other.ls_term;
        self.entropy_term += weight * other.entropy_term;
        self.total += weight * other.total;
    }

    /// Arithmetic mean of a slice of breakdowns; zero for an empty slice.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let mut acc = LossBreakdown::default();
        if items.is_empty() {
            return acc;
        }
        let w = 1.0 / items.len() as f64;
        for item in items {
            acc.accumulate(item, w);
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.ce.is_finite()
            && self.ls_term.is_finite()
            && self.entropy_term.is_finite()
            && self.total.is_finite()
    }
}

fn check_target(target: usize, classes: usize) -> Result<()> {
    if target >= classes {
        return Err(Error::TargetOutOfRange { target, classes });
    }
    Ok(())
}

fn clamp_and_renormalize(mut probs: Vec<f64>) -> Vec<f64> {
    for p in probs.iter_mut() {
        *p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    }
    let sum: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= sum;
    }
    probs
}

/// Unclamped softmax with max-subtraction.
fn raw_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

pub fn softmax(logits: &LogitVector, target: usize) -> Result<PosteriorDistribution> {
    check_target(target, logits.num_classes())?;
    Ok(PosteriorDistribution {
        probs: clamp_and_renormalize(raw_softmax(logits.values())),
        target,
    })
}

/// Applies the additive angular margin to the target cosine and scales everything.
pub fn aam_transform(cosines: &[f64], target: usize, cfg: &AamConfig) -> Result<LogitVector> {
    let clamped = validate_cosines(cosines)?;
    check_target(target, clamped.len())?;
    let mut z: Vec<f64> = clamped.iter().map(|&c| cfg.scale * c).collect();
    z[target] = cfg.scale * (clamped[target].acos() + cfg.margin).cos();
    LogitVector::new(z)
}

fn validate_cosines(cosines: &[f64]) -> Result<Vec<f64>> {
    cosines
        .iter()
        .enumerate()
        .map(|(index, &c)| {
            if !c.is_finite() {
                Err(Error::NonFinite { index, value: c })
            } else if c.abs() > 1.0 + COSINE_SLACK {
                Err(Error::CosineOutOfRange { index, value: c })
            } else {
                Ok(c.clamp(-1.0, 1.0))
            }
        })
        .collect()
}

/// `-log p_k`
pub fn cross_entropy(p: &PosteriorDistribution) -> f64 {
    -p.target_prob().ln()
}

/// `-(1/(K-1)) Σ_{i≠k} log p_i`; positive, smallest when the non-targets are uniform.
pub fn label_smoothing_term(p: &PosteriorDistribution) -> f64 {
    let n = (p.num_classes() - 1) as f64;
    -p.non_targets().map(|(_, pi)| pi.ln()).sum::<f64>() / n
}

/// `Σ_{i≠k} p_i log p_i / (1 - p_k)`; always ≤ 0.
pub fn entropy_term(p: &PosteriorDistribution) -> f64 {
    let weighted: f64 = p.non_targets().map(|(_, pi)| pi * pi.ln()).sum();
    weighted / p.non_target_mass()
}

/// Symmetric KL divergence between the renormalized non-target distribution
/// and the uniform distribution, evaluated from both KL definitions.
pub fn jeffreys_direct(p: &PosteriorDistribution) -> f64 {
    let q = NonTargetDistribution::from_posterior(p);
    let u = q.uniform_value();
    let kl_uq: f64 = q.probs().iter().map(|&qi| u * (u / qi).ln()).sum();
    let kl_qu: f64 = q.probs().iter().map(|&qi| qi * (qi / u).ln()).sum();
    kl_uq + kl_qu
}

/// Jeffreys loss in its simplified form, `label_smoothing_term + entropy_term`.
///
/// With two classes there is a single non-target, which always equals the
/// uniform reference, so the loss is defined as exactly zero.
pub fn jeffreys_loss(p: &PosteriorDistribution) -> f64 {
    if p.num_classes() == 2 {
        return 0.0;
    }
    label_smoothing_term(p) + entropy_term(p)
}

/// Negative entropy `Σ_i p_i log p_i` over all labels, target included.
pub fn confidence_penalty_variant(p: &PosteriorDistribution) -> f64 {
    p.probs().iter().map(|&pi| pi * pi.ln()).sum()
}

/// `CE + α·LS + β·H` with the non-target entropy term.
pub fn combined_loss(p: &PosteriorDistribution, w: &LossWeights) -> LossBreakdown {
    objective_loss(
        p,
        &Objective {
            weights: *w,
            penalty: EntropyPenalty::NonTarget,
        },
    )
}

pub fn objective_loss(p: &PosteriorDistribution, objective: &Objective) -> LossBreakdown {
    let ce = cross_entropy(p);
    let ls_term = label_smoothing_term(p);
    let entropy_term = match objective.penalty {
        EntropyPenalty::NonTarget => entropy_term(p),
        EntropyPenalty::FullDistribution => confidence_penalty_variant(p),
    };
    let w = objective.weights;
    // Non-target penalty: CE + β·J + (α-β)·LS, so that J keeps its exact
    // two-class value and the α = β and β = 0 cases reduce without rounding.
    let total = match objective.penalty {
        EntropyPenalty::NonTarget => ce + w.beta * jeffreys_loss(p) + (w.alpha - w.beta) * ls_term,
        EntropyPenalty::FullDistribution => ce + w.alpha * ls_term + w.beta * entropy_term,
    };
    LossBreakdown {
        ce,
        ls_term,
        entropy_term,
        total,
    }
}

/// Loss and its gradient with respect to the logits.
///
/// Uses `∂L/∂z_l = h_l - p_l Σ_j h_j` where `h_j = p_j ∂L/∂p_j`, which avoids
/// dividing by small probabilities. Clamping is treated as inactive.
pub fn objective_grad_logits(
    logits: &LogitVector,
    target: usize,
    objective: &Objective,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let p = softmax(logits, target)?;
    let breakdown = objective_loss(&p, objective);
    let probs = p.probs();
    let k = p.num_classes();
    let n = (k - 1) as f64;
    let LossWeights { alpha, beta } = objective.weights;

    let mut h = vec![0.0; k];
    h[target] -= 1.0;
    if alpha != 0.0 {
        for (i, hi) in h.iter_mut().enumerate() {
            if i != target {
                *hi -= alpha / n;
            }
        }
    }
    if beta != 0.0 {
        match objective.penalty {
            EntropyPenalty::NonTarget => {
                let mass = p.non_target_mass();
                let weighted: f64 = p.non_targets().map(|(_, pi)| pi * pi.ln()).sum();
                for (i, hi) in h.iter_mut().enumerate() {
                    if i != target {
                        let pi = probs[i];
                        let d = (pi.ln() + 1.0) / mass - weighted / (mass * mass);
                        *hi += beta * pi * d;
                    }
                }
            }
            EntropyPenalty::FullDistribution => {
                for (hi, &pi) in h.iter_mut().zip(probs) {
                    *hi += beta * pi * (pi.ln() + 1.0);
                }
            }
        }
    }
    let h_sum: f64 = h.iter().sum();
    let grad = h
        .iter()
        .zip(probs)
        .map(|(&hl, &pl)| hl - pl * h_sum)
        .collect();
    Ok((breakdown, grad))
}

/// Loss and gradient with respect to cosines passed through the AAM head.
pub fn objective_grad_cosines(
    cosines: &[f64],
    target: usize,
    objective: &Objective,
    cfg: &AamConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let logits = aam_transform(cosines, target, cfg)?;
    let (breakdown, mut grad) = objective_grad_logits(&logits, target, objective)?;
    for g in grad.iter_mut() {
        *g *= cfg.scale;
    }
    let c = cosines[target].clamp(-1.0, 1.0);
    let theta = c.acos();
    let sin_theta = theta.sin().max(MIN_SIN_THETA);
    grad[target] *= (theta + cfg.margin).sin() / sin_theta;
    Ok((breakdown, grad))
}

/// Gradient of [`combined_loss`] with respect to the input vector.
///
/// Without `aam` the input is a logit vector; with it the input is a cosine
/// vector that first goes through [`aam_transform`].
pub fn combined_loss_grad(
    input: &[f64],
    target: usize,
    w: &LossWeights,
    aam: Option<&AamConfig>,
) -> Result<Vec<f64>> {
    let objective = Objective {
        weights: *w,
        penalty: EntropyPenalty::NonTarget,
    };
    let (_, grad) = match aam {
        Some(cfg) => objective_grad_cosines(input, target, &objective, cfg)?,
        None => objective_grad_logits(&LogitVector::new(input.to_vec())?, target, &objective)?,
    };
    Ok(grad)
}
