//! Cosine scoring back-end and detection metrics (DET, EER, minDCF).
//!
//! Decision rule: a trial is accepted when `score ≥ θ`. For a threshold θ,
//! `P_miss(θ)` is the fraction of target scores below θ and `P_fa(θ)` the
//! fraction of non-target scores at or above θ.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::TrialList;

/// Centered embeddings shorter than this are rejected.
pub const MIN_CENTERED_NORM: f64 = 1e-12;

/// Cosine similarity after subtracting the training mean from both sides.
pub fn center_and_cosine_score(
    enroll: &DVector<f64>,
    test: &DVector<f64>,
    train_mean: &DVector<f64>,
) -> Result<f64> {
    if enroll.len() != train_mean.len() || test.len() != train_mean.len() {
        return Err(Error::DimensionMismatch {
            expected: train_mean.len(),
            got: if enroll.len() != train_mean.len() { enroll.len() } else { test.len() },
        });
    }
    let a = enroll - train_mean;
    let b = test - train_mean;
    let (na, nb) = (a.norm(), b.norm());
    if na < MIN_CENTERED_NORM || nb < MIN_CENTERED_NORM {
        return Err(Error::ZeroVector);
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean of a set of embeddings.
pub fn mean_embedding(embeddings: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = embeddings.first().ok_or(Error::EmptyDataset)?;
    let mut sum = DVector::zeros(first.len());
    for e in embeddings {
        sum += e;
    }
    Ok(sum / embeddings.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    pub target_scores: Vec<f64>,
    pub nontarget_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(target_scores: Vec<f64>, nontarget_scores: Vec<f64>) -> Self {
        Self {
            target_scores,
            nontarget_scores,
        }
    }

    fn check(&self) -> Result<()> {
        if self.target_scores.is_empty() || self.nontarget_scores.is_empty() {
            return Err(Error::EmptyScores {
                n_target: self.target_scores.len(),
                n_nontarget: self.nontarget_scores.len(),
            });
        }
        if let Some((index, &value)) = self
            .target_scores
            .iter()
            .chain(&self.nontarget_scores)
            .enumerate()
            .find(|(_, s)| !s.is_finite())
        {
            return Err(Error::NonFinite { index, value });
        }
        Ok(())
    }
}

/// Scores every trial; embeddings are looked up by utterance id.
pub fn score_trials(
    trials: &TrialList,
    embeddings: &HashMap<usize, DVector<f64>>,
    train_mean: &DVector<f64>,
) -> Result<ScoreSet> {
    let scored: Vec<(f64, bool)> = trials
        .trials
        .par_iter()
        .map(|t| {
            let a = embeddings.get(&t.utt_a).ok_or(Error::MissingEmbedding(t.utt_a))?;
            let b = embeddings.get(&t.utt_b).ok_or(Error::MissingEmbedding(t.utt_b))?;
            Ok((center_and_cosine_score(a, b, train_mean)?, t.is_target))
        })
        .collect::<Result<_>>()?;
    let mut set = ScoreSet::default();
    for (s, is_target) in scored {
        if is_target {
            set.target_scores.push(s);
        } else {
            set.nontarget_scores.push(s);
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub p_fa: f64,
    pub p_miss: f64,
}

/// Empirical DET curve: `-∞`, every distinct score, `+∞`, in increasing threshold order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub points: Vec<OperatingPoint>,
}

impl DetCurve {
    /// True if `P_fa` never increases and `P_miss` never decreases along the curve.
    pub fn is_monotone(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].threshold > w[0].threshold && w[1].p_fa <= w[0].p_fa && w[1].p_miss >= w[0].p_miss)
    }
}

pub fn compute_det(scores: &ScoreSet) -> Result<DetCurve> {
    scores.check()?;
    let nt = scores.target_scores.len();
    let nn = scores.nontarget_scores.len();
    let mut all: Vec<(f64, bool)> = scores
        .target_scores
        .iter()
        .map(|&s| (s, true))
        .chain(scores.nontarget_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::with_capacity(all.len() + 2);
    points.push(OperatingPoint {
        threshold: f64::NEG_INFINITY,
        p_fa: 1.0,
        p_miss: 0.0,
    });
    // Counts of scores strictly below the current threshold.
    let (mut tgt_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        points.push(OperatingPoint {
            threshold,
            p_fa: (nn - non_below) as f64 / nn as f64,
            p_miss: tgt_below as f64 / nt as f64,
        });
        while i < all.len() && all[i].0 == threshold {
            if all[i].1 {
                tgt_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        p_fa: 0.0,
        p_miss: 1.0,
    });
    Ok(DetCurve { points })
}

/// Equal error rate: the crossing of `P_miss - P_fa` through zero, linearly
/// interpolated between the two bracketing operating points.
pub fn compute_eer(curve: &DetCurve) -> f64 {
    let pts = &curve.points;
    let diff = |p: &OperatingPoint| p.p_miss - p.p_fa;
    let Some(i) = pts.iter().position(|p| diff(p) >= 0.0) else {
        return 1.0;
    };
    let hi = &pts[i];
    if diff(hi) == 0.0 || i == 0 {
        return hi.p_fa.max(hi.p_miss);
    }
    let lo = &pts[i - 1];
    let (d0, d1) = (diff(lo), diff(hi));
    let t = -d0 / (d1 - d0);
    lo.p_fa + t * (hi.p_fa - lo.p_fa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfParams {
    pub fn normalized_cost(&self, p: &OperatingPoint) -> f64 {
        let miss = self.c_miss * self.p_target;
        let fa = self.c_fa * (1.0 - self.p_target);
        (miss * p.p_miss + fa * p.p_fa) / miss.min(fa)
    }
}

/// Normalized minimum detection cost and the operating point reaching it.
pub fn min_dcf_point(curve: &DetCurve, params: &DcfParams) -> (f64, OperatingPoint) {
    curve
        .points
        .iter()
        .map(|p| (params.normalized_cost(p), *p))
        .fold((f64::INFINITY, curve.points[0]), |best, cur| if cur.0 < best.0 { cur } else { best })
}

pub fn compute_min_dcf(curve: &DetCurve, params: &DcfParams) -> f64 {
    min_dcf_point(curve, params).0
}

/// Operating point on the curve closest to the EER crossing (for plotting).
pub fn eer_point(curve: &DetCurve) -> OperatingPoint {
    *curve
        .points
        .iter()
        .min_by(|a, b| (a.p_miss - a.p_fa).abs().total_cmp(&(b.p_miss - b.p_fa).abs()))
        .expect("curve has boundary points")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eer: f64,
    pub min_dcf: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub loss_kind: String,
    pub domain_tag: String,
    pub seed: u64,
}

impl MetricsReport {
    pub fn from_scores(
        scores: &ScoreSet,
        dcf: &DcfParams,
        loss_kind: &str,
        domain_tag: &str,
        seed: u64,
    ) -> Result<Self> {
        let curve = compute_det(scores)?;
        Ok(Self {
            eer: compute_eer(&curve),
            min_dcf: compute_min_dcf(&curve, dcf),
            n_target: scores.target_scores.len(),
            n_nontarget: scores.nontarget_scores.len(),
            loss_kind: loss_kind.to_string(),
            domain_tag: domain_tag.to_string(),
            seed,
        })
    }
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t:?}")
    }
}

/// Writes `threshold,p_fa,p_miss`; the boundary thresholds appear as `-inf`/`inf`.
pub fn write_det_csv(path: &Path, curve: &DetCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "p_fa", "p_miss"])?;
    for p in &curve.points {
        w.write_record([fmt_threshold(p.threshold), format!("{:?}", p.p_fa), format!("{:?}", p.p_miss)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_det_csv(path: &Path) -> Result<DetCurve> {
    let mut r = csv::Reader::from_path(path)?;
    let mut points = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::format(path, format!("row {}: expected threshold,p_fa,p_miss", line + 2));
        if rec.len() != 3 {
            return Err(bad());
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| bad());
        points.push(OperatingPoint {
            threshold: parse(&rec[0])?,
            p_fa: parse(&rec[1])?,
            p_miss: parse(&rec[2])?,
        });
    }
    Ok(DetCurve { points })
}

/// Writes `score,is_target` rows.
pub fn write_scores_csv(path: &Path, scores: &ScoreSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["score", "is_target"])?;
    for &s in &scores.target_scores {
        w.write_record([format!("{s:?}"), "1".into()])?;
    }
    for &s in &scores.nontarget_scores {
        w.write_record([format!("{s:?}"), "0".into()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<ScoreSet> {
    let mut r = csv::Reader::from_path(path)?;
    let mut set = ScoreSet::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::format(path, format!("row {}: expected score,is_target", line + 2));
        if rec.len() != 2 {
            return Err(bad());
        }
        let s: f64 = rec[0].parse().map_err(|_| bad())?;
        match &rec[1] {
            "1" => set.target_scores.push(s),
            "0" => set.nontarget_scores.push(s),
            _ => return Err(bad()),
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Trial;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn worked() -> ScoreSet {
        ScoreSet::new(vec![0.9, 0.8, 0.4], vec![0.5, 0.2, 0.1])
    }

    #[test]
    fn cosine_scoring_cases() {
        let zero = v(&[0.0, 0.0, 0.0]);
        let a = v(&[1.0, 2.0, -1.0]);
        assert!((center_and_cosine_score(&a, &a, &zero).unwrap() - 1.0).abs() < 1e-15);
        let b = v(&[2.0, -1.0, 0.0]);
        assert!(center_and_cosine_score(&a, &b, &zero).unwrap().abs() < 1e-15);
        assert!(matches!(center_and_cosine_score(&a, &b, &a), Err(Error::ZeroVector)));
        // Centering changes the geometry.
        let m = v(&[1.0, 0.0, 0.0]);
        let s = center_and_cosine_score(&v(&[2.0, 0.0, 0.0]), &v(&[1.0, 1.0, 0.0]), &m).unwrap();
        assert!(s.abs() < 1e-15);
    }

    #[test]
    fn worked_example() {
        let curve = compute_det(&worked()).unwrap();
        assert!(curve.is_monotone());
        assert!((compute_eer(&curve) - 1.0 / 3.0).abs() < 1e-15);
        let (dcf, at) = min_dcf_point(&curve, &DcfParams::default());
        assert!((dcf - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(at.p_fa, 0.0);
        assert!((at.p_miss - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_inverted_separation() {
        let perfect = compute_det(&ScoreSet::new(vec![1.0], vec![0.0])).unwrap();
        assert!(perfect.points.iter().any(|p| p.p_fa == 0.0 && p.p_miss == 0.0));
        assert_eq!(compute_eer(&perfect), 0.0);
        assert_eq!(compute_min_dcf(&perfect, &DcfParams::default()), 0.0);

        let inverted = compute_det(&ScoreSet::new(vec![0.0, 0.1], vec![0.5, 0.7])).unwrap();
        assert_eq!(compute_eer(&inverted), 1.0);
        assert!(compute_min_dcf(&inverted, &DcfParams::default()) <= 1.0);
    }

    #[test]
    fn all_equal_scores() {
        let curve = compute_det(&ScoreSet::new(vec![0.3, 0.3], vec![0.3])).unwrap();
        let corners: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.p_fa, p.p_miss)).collect();
        assert_eq!(corners, vec![(1.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        assert_eq!(compute_eer(&curve), 0.5);
    }

    #[test]
    fn empty_scores_rejected() {
        assert!(matches!(
            compute_det(&ScoreSet::new(vec![], vec![0.1])),
            Err(Error::EmptyScores { n_target: 0, n_nontarget: 1 })
        ));
        assert!(compute_det(&ScoreSet::new(vec![f64::NAN], vec![0.1])).is_err());
    }

    #[test]
    fn score_trials_partitions_and_checks_ids() {
        let mut emb = HashMap::new();
        emb.insert(0, v(&[1.0, 0.0]));
        emb.insert(1, v(&[1.0, 0.0]));
        emb.insert(2, v(&[0.0, 1.0]));
        let zero = v(&[0.0, 0.0]);
        let trials = TrialList {
            trials: vec![
                Trial { utt_a: 0, utt_b: 1, is_target: true },
                Trial { utt_a: 0, utt_b: 2, is_target: false },
            ],
        };
        let s = score_trials(&trials, &emb, &zero).unwrap();
        assert_eq!(s.target_scores, vec![1.0]);
        assert_eq!(s.nontarget_scores, vec![0.0]);

        let missing = TrialList { trials: vec![Trial { utt_a: 0, utt_b: 9, is_target: true }] };
        assert!(matches!(score_trials(&missing, &emb, &zero), Err(Error::MissingEmbedding(9))));
        let empty = score_trials(&TrialList::default(), &emb, &zero).unwrap();
        assert!(compute_det(&empty).is_err());
    }

    #[test]
    fn csv_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let curve = compute_det(&worked()).unwrap();
        let p = dir.path().join("det.csv");
        write_det_csv(&p, &curve).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("threshold,p_fa,p_miss\n-inf,1.0,0.0\n"));
        assert_eq!(read_det_csv(&p).unwrap(), curve);

        let s = dir.path().join("scores.csv");
        write_scores_csv(&s, &worked()).unwrap();
        assert_eq!(read_scores_csv(&s).unwrap(), worked());
    }

    #[test]
    fn metrics_report_json_fields() {
        let r = MetricsReport::from_scores(&worked(), &DcfParams::default(), "ce", "in_domain", 3).unwrap();
        let json: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["domain_tag", "eer", "loss_kind", "min_dcf", "n_nontarget", "n_target", "seed"]);
    }
}
