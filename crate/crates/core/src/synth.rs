//! Synthetic speakers, utterances, domain shifts and verification trials.
//!
//! A speaker is a unit direction in input space. An utterance is
//! `R·(μ + σ·ν·g) + b` with `g ~ N(0, I)`, where `(R, b, ν)` is the
//! [`DomainShift`] of the recording domain. The identity shift is the training
//! ("in-domain") condition.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum `|RᵀR - I|` accepted for a rotation.
pub const ORTHOGONALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerPrototype {
    pub id: usize,
    pub mean_direction: Vec<f64>,
    pub within_spread: f64,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// `n` speakers with directions uniform on the unit sphere, ids `0..n`.
pub fn generate_speakers(
    n: usize,
    input_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Vec<SpeakerPrototype>> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 speakers, got {n}")));
    }
    if input_dim == 0 {
        return Err(Error::InvalidConfig("input_dim must be positive".into()));
    }
    if !(spread.is_finite() && spread > 0.0) {
        return Err(Error::InvalidConfig(format!("spread must be positive, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut speakers = Vec::with_capacity(n);
    while speakers.len() < n {
        let v = gaussian_vec(&mut rng, input_dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        speakers.push(SpeakerPrototype {
            id: speakers.len(),
            mean_direction: v.iter().map(|x| x / norm).collect(),
            within_spread: spread,
        });
    }
    Ok(speakers)
}

/// Training and evaluation speakers drawn together, so their ids are disjoint:
/// `0..n_train` and `n_train..n_train + n_eval`.
pub fn disjoint_speaker_sets(
    n_train: usize,
    n_eval: usize,
    input_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(Vec<SpeakerPrototype>, Vec<SpeakerPrototype>)> {
    if n_train < 2 || n_eval < 2 {
        return Err(Error::InvalidConfig(
            "need at least 2 training and 2 evaluation speakers".into(),
        ));
    }
    let mut all = generate_speakers(n_train + n_eval, input_dim, spread, seed)?;
    let eval = all.split_off(n_train);
    Ok((all, eval))
}

/// Strength of a shift at severity 1; scaled linearly by the severity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftParams {
    /// Rotation angle (radians) in every plane of the random rotation.
    pub max_angle: f64,
    /// Norm of the additive offset.
    pub bias_norm: f64,
    /// Extra within-speaker noise: `noise_scale = 1 + severity · noise_inflation`.
    pub noise_inflation: f64,
}

impl Default for ShiftParams {
    fn default() -> Self {
        Self {
            max_angle: 0.6,
            bias_norm: 0.6,
            noise_inflation: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainShift {
    pub rotation: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub noise_scale: f64,
}

impl DomainShift {
    pub fn identity(dim: usize) -> Self {
        Self {
            rotation: DMatrix::identity(dim, dim),
            bias: DVector::zeros(dim),
            noise_scale: 1.0,
        }
    }

    pub fn new(rotation: DMatrix<f64>, bias: DVector<f64>, noise_scale: f64) -> Result<Self> {
        let shift = Self {
            rotation,
            bias,
            noise_scale,
        };
        shift.validate()?;
        Ok(shift)
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.bias.len();
        if self.rotation.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.rotation.nrows(),
            });
        }
        let err = orthogonality_error(&self.rotation);
        if err > ORTHOGONALITY_TOL {
            return Err(Error::InvalidConfig(format!(
                "rotation is not orthogonal (max |RᵀR - I| = {err:e})"
            )));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_scale must be positive, got {}",
                self.noise_scale
            )));
        }
        Ok(())
    }

    /// Random shift whose strength grows with `severity` (0 gives the identity).
    ///
    /// The rotation is `Q·B·Qᵀ` with `Q` Haar-random and `B` block-diagonal
    /// 2×2 rotations, each by an angle drawn from
    /// `[0.75, 1] · severity · max_angle`.
    pub fn from_severity(dim: usize, severity: f64, params: &ShiftParams, seed: u64) -> Result<Self> {
        if !(severity.is_finite() && severity >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "severity must be finite and nonnegative, got {severity}"
            )));
        }
        if severity == 0.0 {
            return Ok(Self::identity(dim));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_orthogonal(dim, &mut rng);
        let mut blocks = DMatrix::identity(dim, dim);
        for plane in 0..dim / 2 {
            let angle = severity * params.max_angle * rng.random_range(0.75..=1.0);
            let (s, c) = angle.sin_cos();
            let (i, j) = (2 * plane, 2 * plane + 1);
            blocks[(i, i)] = c;
            blocks[(i, j)] = -s;
            blocks[(j, i)] = s;
            blocks[(j, j)] = c;
        }
        let rotation = &q * blocks * q.transpose();

        let dir = DVector::from_vec(gaussian_vec(&mut rng, dim));
        let bias = dir.normalize() * (severity * params.bias_norm);
        Self::new(rotation, bias, 1.0 + severity * params.noise_inflation)
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.rotation * x + &self.bias
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    q
}

pub fn orthogonality_error(m: &DMatrix<f64>) -> f64 {
    let p = m.transpose() * m;
    let d = p.nrows();
    (p - DMatrix::<f64>::identity(d, d)).amax()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: usize,
    pub label: usize,
    pub domain: String,
    pub features: Vec<f64>,
}

/// `per_speaker` utterances of every speaker, recorded through `shift`.
///
/// Utterance ids are assigned sequentially from 0 in speaker order.
pub fn sample_utterances(
    speakers: &[SpeakerPrototype],
    per_speaker: usize,
    shift: &DomainShift,
    domain: &str,
    seed: u64,
) -> Result<Vec<Utterance>> {
    if per_speaker == 0 {
        return Err(Error::InvalidConfig("per_speaker must be at least 1".into()));
    }
    shift.validate()?;
    let dim = shift.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(speakers.len() * per_speaker);
    for spk in speakers {
        if spk.mean_direction.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: spk.mean_direction.len(),
            });
        }
        let mean = DVector::from_column_slice(&spk.mean_direction);
        let sigma = spk.within_spread * shift.noise_scale;
        for _ in 0..per_speaker {
            let g = DVector::from_vec(gaussian_vec(&mut rng, dim));
            let x = shift.apply(&(&mean + g * sigma));
            out.push(Utterance {
                id: out.len(),
                label: spk.id,
                domain: domain.to_string(),
                features: x.iter().copied().collect(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trial {
    pub utt_a: usize,
    pub utt_b: usize,
    pub is_target: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.trials.iter().filter(|t| t.is_target).count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.len() - self.n_target()
    }
}

/// Splits a total trial budget 1:4 into target and non-target counts.
pub fn default_trial_counts(total: usize) -> (usize, usize) {
    let n_target = total / 5;
    (n_target, total - n_target)
}

/// Samples distinct unordered pairs: `n_target` same-label pairs and
/// `n_nontarget` different-label pairs, returned in shuffled order.
///
/// With `same_class_balance` each target pair first picks a speaker uniformly,
/// otherwise target pairs are drawn uniformly over all same-label pairs.
pub fn make_trials(
    utterances: &[Utterance],
    n_target: usize,
    n_nontarget: usize,
    seed: u64,
    same_class_balance: bool,
) -> Result<TrialList> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut seen_ids = HashSet::with_capacity(utterances.len());
    for u in utterances {
        if !seen_ids.insert(u.id) {
            return Err(Error::InvalidConfig(format!("duplicate utterance id {}", u.id)));
        }
        by_label.entry(u.label).or_default().push(u.id);
    }
    let n = utterances.len();
    let possible_target: usize = by_label.values().map(|v| v.len() * v.len().saturating_sub(1) / 2).sum();
    let possible_nontarget = n * n.saturating_sub(1) / 2 - possible_target;
    if n_target > possible_target {
        return Err(Error::InsufficientData(format!(
            "requested {n_target} target pairs, only {possible_target} exist"
        )));
    }
    if n_nontarget > possible_nontarget {
        return Err(Error::InsufficientData(format!(
            "requested {n_nontarget} non-target pairs, only {possible_nontarget} exist"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label_of: BTreeMap<usize, usize> = utterances.iter().map(|u| (u.id, u.label)).collect();
    let ids: Vec<usize> = utterances.iter().map(|u| u.id).collect();
    let groups: Vec<&Vec<usize>> = by_label.values().filter(|v| v.len() >= 2).collect();

    let key = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    let mut trials = Vec::with_capacity(n_target + n_nontarget);

    // Targets.
    if n_target * 2 > possible_target {
        let mut all: Vec<(usize, usize)> = Vec::with_capacity(possible_target);
        for g in &groups {
            for i in 0..g.len() {
                for j in i + 1..g.len() {
                    all.push(key(g[i], g[j]));
                }
            }
        }
        all.shuffle(&mut rng);
        trials.extend(all.into_iter().take(n_target).map(|(a, b)| Trial { utt_a: a, utt_b: b, is_target: true }));
    } else {
        let weights: Vec<usize> = groups.iter().map(|g| g.len() * (g.len() - 1) / 2).collect();
        let mut seen = HashSet::with_capacity(n_target);
        while seen.len() < n_target {
            let g = if same_class_balance {
                groups[rng.random_range(0..groups.len())]
            } else {
                let mut r = rng.random_range(0..possible_target);
                let mut idx = 0;
                while r >= weights[idx] {
                    r -= weights[idx];
                    idx += 1;
                }
                groups[idx]
            };
            let i = rng.random_range(0..g.len());
            let mut j = rng.random_range(0..g.len() - 1);
            if j >= i {
                j += 1;
            }
            let pair = key(g[i], g[j]);
            if seen.insert(pair) {
                trials.push(Trial { utt_a: pair.0, utt_b: pair.1, is_target: true });
            }
        }
    }

    // Non-targets.
    if n_nontarget * 2 > possible_nontarget {
        let mut all = Vec::with_capacity(possible_nontarget);
        for i in 0..n {
            for j in i + 1..n {
                if label_of[&ids[i]] != label_of[&ids[j]] {
                    all.push(key(ids[i], ids[j]));
                }
            }
        }
        all.shuffle(&mut rng);
        trials.extend(all.into_iter().take(n_nontarget).map(|(a, b)| Trial { utt_a: a, utt_b: b, is_target: false }));
    } else {
        let mut seen = HashSet::with_capacity(n_nontarget);
        while seen.len() < n_nontarget {
            let a = ids[rng.random_range(0..n)];
            let b = ids[rng.random_range(0..n)];
            if label_of[&a] == label_of[&b] {
                continue;
            }
            let pair = key(a, b);
            if seen.insert(pair) {
                trials.push(Trial { utt_a: pair.0, utt_b: pair.1, is_target: false });
            }
        }
    }

    trials.shuffle(&mut rng);
    Ok(TrialList { trials })
}

/// Writes `id,label,domain,f0,f1,...`.
pub fn write_utterances(path: &Path, utterances: &[Utterance]) -> Result<()> {
    let dim = utterances.first().map_or(0, |u| u.features.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "label".into(), "domain".into()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for u in utterances {
        if u.features.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: u.features.len() });
        }
        let mut rec = vec![u.id.to_string(), u.label.to_string(), u.domain.clone()];
        // `{:?}` prints the shortest representation that round-trips exactly.
        rec.extend(u.features.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_utterances(path: &Path) -> Result<Vec<Utterance>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" || &header[2] != "domain" {
        return Err(Error::format(path, "expected header id,label,domain,f0,..."));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::format(path, format!("row {}: bad {what}", line + 2));
        let id = rec[0].parse().map_err(|_| bad("id"))?;
        let label = rec[1].parse().map_err(|_| bad("label"))?;
        let features = rec
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>().map_err(|_| bad("feature")))
            .collect::<Result<Vec<_>>>()?;
        out.push(Utterance { id, label, domain: rec[2].to_string(), features });
    }
    Ok(out)
}

/// Writes `utt_a,utt_b,is_target` with `is_target` as 1/0.
pub fn write_trials(path: &Path, trials: &TrialList) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["utt_a", "utt_b", "is_target"])?;
    for t in &trials.trials {
        w.write_record([
            t.utt_a.to_string(),
            t.utt_b.to_string(),
            u8::from(t.is_target).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials(path: &Path) -> Result<TrialList> {
    let mut r = csv::Reader::from_path(path)?;
    let mut trials = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::format(path, format!("row {}: expected utt_a,utt_b,is_target", line + 2));
        if rec.len() != 3 {
            return Err(bad());
        }
        let is_target = match &rec[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad()),
        };
        trials.push(Trial {
            utt_a: rec[0].parse().map_err(|_| bad())?,
            utt_b: rec[1].parse().map_err(|_| bad())?,
            is_target,
        });
    }
    Ok(TrialList { trials })
}
