//! End-to-end comparison of loss variants on synthetic domains.
//!
//! For every seed the pipeline generates disjoint training and evaluation
//! speakers, records the evaluation speakers once per domain (identity shift
//! for in-domain, increasing severities for out-of-domain), then for every
//! loss variant trains a network, scores the trials of each domain and probes
//! the posteriors. Results are collected into an [`ExperimentReport`].
//!
//! Output directory layout:
//!
//! ```text
//! report.json
//! scores/seed-<seed>/<variant>/<domain>.csv      score,is_target
//! det/seed-<seed>/<variant>__<domain>.csv        written by `emit_det`
//! det/seed-<seed>/<variant>__<domain>.json
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{softmax, LogitVector, PosteriorDistribution};
use crate::probe::{probe_dataset, DEFAULT_TAU};
use crate::scoring::{
    compute_det, compute_eer, eer_point, mean_embedding, min_dcf_point, read_scores_csv,
    score_trials, write_det_csv, write_scores_csv, DcfParams, OperatingPoint, ScoreSet,
};
use crate::synth::{
    disjoint_speaker_sets, make_trials, sample_utterances, DomainShift, ShiftParams, TrialList,
    Utterance,
};
use crate::trainer::{fit, Activation, LossKind, NetworkParams, NetworkSpec, TrainConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_speakers_train: usize,
    pub n_speakers_eval: usize,
    pub per_speaker: usize,
    pub spread: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_speakers_train: 50,
            n_speakers_eval: 20,
            per_speaker: 40,
            spread: 0.12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub tag: String,
    pub severity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialConfig {
    pub n_target: usize,
    pub n_nontarget: usize,
    pub same_class_balance: bool,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            n_target: 4000,
            n_nontarget: 16000,
            same_class_balance: true,
        }
    }
}

/// One row of the comparison: a loss kind trained with or without weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub loss_kind: LossKind,
    pub weight_decay: bool,
}

impl Variant {
    pub const fn new(loss_kind: LossKind, weight_decay: bool) -> Self {
        Self {
            loss_kind,
            weight_decay,
        }
    }

    /// `ce+wd`, `ce_ls`, ...
    pub fn label(&self) -> String {
        if self.weight_decay {
            format!("{}+wd", self.loss_kind)
        } else {
            self.loss_kind.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub network: NetworkSpec,
    /// `loss_kind`, `seed` and `optimizer.weight_decay_enabled` are set per run.
    pub train: TrainConfig,
    pub data: DataConfig,
    pub shift: ShiftParams,
    pub domains: Vec<DomainSpec>,
    pub trials: TrialConfig,
    /// The first variant is the baseline for relative gains.
    pub variants: Vec<Variant>,
    pub dcf: DcfParams,
    pub tau: f64,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::paper_mini()
    }
}

impl ExperimentConfig {
    /// The default benchmark: 50 training and 20 evaluation speakers, three
    /// domains, five seeds, and the four comparison rows (CE with weight
    /// decay, LS with and without, Jeffreys without). Uses a tanh hidden layer.
    pub fn paper_mini() -> Self {
        Self {
            network: NetworkSpec {
                activation: Activation::Tanh,
                ..NetworkSpec::default()
            },
            train: TrainConfig::default(),
            data: DataConfig::default(),
            shift: ShiftParams::default(),
            domains: vec![
                DomainSpec { tag: "in_domain".into(), severity: 0.0 },
                DomainSpec { tag: "mild".into(), severity: 0.5 },
                DomainSpec { tag: "strong".into(), severity: 1.0 },
            ],
            trials: TrialConfig::default(),
            variants: vec![
                Variant::new(LossKind::Ce, true),
                Variant::new(LossKind::CeLs, true),
                Variant::new(LossKind::CeLs, false),
                Variant::new(LossKind::CeJeffreys, false),
            ],
            dcf: DcfParams::default(),
            tau: DEFAULT_TAU,
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.network.validate()?;
        self.train.validate()?;
        if self.network.num_classes != self.data.n_speakers_train {
            return bad(format!(
                "network.num_classes ({}) must equal data.n_speakers_train ({})",
                self.network.num_classes, self.data.n_speakers_train
            ));
        }
        if self.data.per_speaker < 2 {
            return bad("data.per_speaker must be at least 2 to form target trials".into());
        }
        if self.data.n_speakers_eval < 2 {
            return bad("data.n_speakers_eval must be at least 2".into());
        }
        if !(self.data.spread.is_finite() && self.data.spread > 0.0) {
            return bad(format!("data.spread must be positive, got {}", self.data.spread));
        }
        if self.domains.is_empty() || self.variants.is_empty() || self.seeds.is_empty() {
            return bad("domains, variants and seeds must all be non-empty".into());
        }
        let mut tags = HashSet::new();
        for d in &self.domains {
            if d.tag.is_empty() || d.tag.contains(['/', '\\']) || !tags.insert(&d.tag) {
                return bad(format!("domain tag `{}` is empty, duplicated or not a file name", d.tag));
            }
            if !(d.severity.is_finite() && d.severity >= 0.0) {
                return bad(format!("domain `{}` has invalid severity {}", d.tag, d.severity));
            }
        }
        let mut labels = HashSet::new();
        for v in &self.variants {
            if !labels.insert(v.label()) {
                return bad(format!("variant `{}` listed twice", v.label()));
            }
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.trials.n_target == 0 || self.trials.n_nontarget == 0 {
            return bad("trial counts must be positive".into());
        }
        if !(self.dcf.p_target > 0.0 && self.dcf.p_target < 1.0 && self.dcf.c_miss > 0.0 && self.dcf.c_fa > 0.0) {
            return bad("dcf needs p_target in (0, 1) and positive costs".into());
        }
        Ok(())
    }

    /// Parses a JSON config, rejecting unknown keys.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::load(Some(text), &[])
    }

    /// Applies `path=value` overrides (dotted paths, `-` read as `_`) to the
    /// JSON form of `base`. Values are parsed as JSON, falling back to strings.
    pub fn with_overrides(base: &Self, overrides: &[(String, String)]) -> Result<Self> {
        Self::apply(serde_json::to_value(base)?, overrides)
    }

    /// Config from an optional JSON document (defaults when absent) plus
    /// overrides; validation runs once, after the overrides.
    pub fn load(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let doc = match text {
            Some(t) => serde_json::from_str(t).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?,
            None => serde_json::to_value(Self::default())?,
        };
        Self::apply(doc, overrides)
    }

    fn apply(mut doc: serde_json::Value, overrides: &[(String, String)]) -> Result<Self> {
        for (path, raw) in overrides {
            let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
            set_path(&mut doc, path, value)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(doc: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let keys: Vec<String> = path.split('.').map(|k| k.replace('-', "_")).collect();
    let mut cur = doc;
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("`{path}`: `{key}` is not inside an object")))?;
        if i + 1 == keys.len() {
            obj.insert(key.clone(), value);
            return Ok(());
        }
        cur = obj
            .entry(key.clone())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
        if cur.is_null() {
            *cur = serde_json::Value::Object(Default::default());
        }
    }
    Err(Error::InvalidConfig("empty override path".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRow {
    pub seed: u64,
    pub variant: String,
    pub loss_kind: LossKind,
    pub weight_decay: bool,
    pub domain_tag: String,
    pub severity: f64,
    pub eer: f64,
    pub min_dcf: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub mean_top_count: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryRow {
    pub variant: String,
    pub domain_tag: String,
    pub severity: f64,
    pub n_seeds: usize,
    pub median_eer: f64,
    pub median_min_dcf: f64,
    pub median_mean_top_count: f64,
}

/// Relative improvement over the baseline variant: `(base - x) / base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainRow {
    pub variant: String,
    pub baseline: String,
    pub domain_tag: String,
    pub eer_gain: Option<f64>,
    pub min_dcf_gain: Option<f64>,
}

/// Spearman correlation, across domains, between median top count and median EER.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeTrendRow {
    pub variant: String,
    pub spearman_top_count_vs_eer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub generated_at: Option<String>,
    /// `complete`, or `aborted` when a run failed (rows hold what finished).
    pub status: String,
    pub error: Option<String>,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
    pub relative_gains: Vec<GainRow>,
    pub probe_trend: Vec<ProbeTrendRow>,
}

impl ExperimentReport {
    pub fn summary_for(&self, variant: &str, domain: &str) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.variant == variant && r.domain_tag == domain)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Everything generated for one seed: the training set and, per domain, the
/// evaluation utterances and their trial list.
#[derive(Debug, Clone)]
pub struct SeedDatasets {
    pub train: Vec<Utterance>,
    pub domains: Vec<DomainData>,
}

#[derive(Debug, Clone)]
pub struct DomainData {
    pub spec: DomainSpec,
    pub utterances: Vec<Utterance>,
    pub trials: TrialList,
}

impl SeedDatasets {
    pub fn train_inputs(&self) -> Vec<&[f64]> {
        self.train.iter().map(|u| u.features.as_slice()).collect()
    }

    pub fn train_labels(&self) -> Vec<usize> {
        self.train.iter().map(|u| u.label).collect()
    }
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Deterministic in `(config, seed)`; every variant of a seed sees the same data.
pub fn generate_datasets(cfg: &ExperimentConfig, seed: u64) -> Result<SeedDatasets> {
    let dim = cfg.network.input_dim;
    let (train_spk, eval_spk) = disjoint_speaker_sets(
        cfg.data.n_speakers_train,
        cfg.data.n_speakers_eval,
        dim,
        cfg.data.spread,
        sub_seed(seed, 1),
    )?;
    let train = sample_utterances(
        &train_spk,
        cfg.data.per_speaker,
        &DomainShift::identity(dim),
        "train",
        sub_seed(seed, 2),
    )?;
    let mut domains = Vec::with_capacity(cfg.domains.len());
    for (j, d) in cfg.domains.iter().enumerate() {
        let j = j as u64;
        let shift = DomainShift::from_severity(dim, d.severity, &cfg.shift, sub_seed(seed, 100 + j))?;
        let utterances = sample_utterances(&eval_spk, cfg.data.per_speaker, &shift, &d.tag, sub_seed(seed, 200 + j))?;
        let trials = make_trials(
            &utterances,
            cfg.trials.n_target,
            cfg.trials.n_nontarget,
            sub_seed(seed, 300 + j),
            cfg.trials.same_class_balance,
        )?;
        domains.push(DomainData {
            spec: d.clone(),
            utterances,
            trials,
        });
    }
    Ok(SeedDatasets { train, domains })
}

/// Per-domain outcome of one trained network.
struct DomainOutcome {
    row: RunRow,
    scores: ScoreSet,
}

/// Embeds every utterance; returns embeddings by id and the cosine-head
/// posteriors (scaled cosines, no margin).
pub fn embed_and_probe(
    params: &NetworkParams,
    utterances: &[Utterance],
    scale: f64,
) -> Result<(HashMap<usize, DVector<f64>>, Vec<PosteriorDistribution>)> {
    let mut embeddings = HashMap::with_capacity(utterances.len());
    let mut posteriors = Vec::with_capacity(utterances.len());
    for u in utterances {
        let e = params.embed(&u.features)?;
        let cos = params.cosines(&e)?;
        let logits = LogitVector::new(cos.iter().map(|c| scale * c).collect())?;
        posteriors.push(softmax(&logits, 0)?);
        embeddings.insert(u.id, e);
    }
    Ok((embeddings, posteriors))
}

/// Mean training embedding, used to center both sides of every trial.
pub fn training_mean(params: &NetworkParams, inputs: &[&[f64]]) -> Result<DVector<f64>> {
    let embs = inputs.iter().map(|x| params.embed(x)).collect::<Result<Vec<_>>>()?;
    mean_embedding(&embs)
}

fn run_one(cfg: &ExperimentConfig, seed: u64, variant: Variant, data: &SeedDatasets) -> Result<Vec<DomainOutcome>> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.loss_kind = variant.loss_kind;
    train_cfg.seed = seed;
    train_cfg.optimizer.weight_decay_enabled = variant.weight_decay;

    let inputs = data.train_inputs();
    let (params, history) = fit(&cfg.network, &inputs, &data.train_labels(), &train_cfg)?;
    let final_train_loss = history.last().map_or(f64::NAN, |h| h.total);
    let train_mean = training_mean(&params, &inputs)?;

    let mut out = Vec::with_capacity(data.domains.len());
    for dd in &data.domains {
        let d = &dd.spec;
        let (embeddings, posteriors) = embed_and_probe(&params, &dd.utterances, train_cfg.aam.scale)?;
        let scores = score_trials(&dd.trials, &embeddings, &train_mean)?;
        let curve = compute_det(&scores)?;
        let probe = probe_dataset(&posteriors, cfg.tau, &d.tag)?;
        out.push(DomainOutcome {
            row: RunRow {
                seed,
                variant: variant.label(),
                loss_kind: variant.loss_kind,
                weight_decay: variant.weight_decay,
                domain_tag: d.tag.clone(),
                severity: d.severity,
                eer: compute_eer(&curve),
                min_dcf: min_dcf_point(&curve, &cfg.dcf).0,
                n_target: scores.target_scores.len(),
                n_nontarget: scores.nontarget_scores.len(),
                mean_top_count: probe.mean_top_count,
                final_train_loss,
            },
            scores,
        });
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant or there are fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn summarize(cfg: &ExperimentConfig, runs: &[RunRow]) -> (Vec<SummaryRow>, Vec<GainRow>, Vec<ProbeTrendRow>) {
    let mut summary = Vec::new();
    for v in &cfg.variants {
        let label = v.label();
        for d in &cfg.domains {
            let rows: Vec<&RunRow> = runs.iter().filter(|r| r.variant == label && r.domain_tag == d.tag).collect();
            if rows.is_empty() {
                continue;
            }
            let col = |f: fn(&RunRow) -> f64| median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            summary.push(SummaryRow {
                variant: label.clone(),
                domain_tag: d.tag.clone(),
                severity: d.severity,
                n_seeds: rows.len(),
                median_eer: col(|r| r.eer),
                median_min_dcf: col(|r| r.min_dcf),
                median_mean_top_count: col(|r| r.mean_top_count),
            });
        }
    }

    let baseline = cfg.variants[0].label();
    let gain = |base: f64, x: f64| (base > 0.0).then(|| (base - x) / base);
    let mut gains = Vec::new();
    for v in cfg.variants.iter().skip(1) {
        let label = v.label();
        for d in &cfg.domains {
            let (Some(b), Some(x)) = (
                summary.iter().find(|r| r.variant == baseline && r.domain_tag == d.tag),
                summary.iter().find(|r| r.variant == label && r.domain_tag == d.tag),
            ) else {
                continue;
            };
            gains.push(GainRow {
                variant: label.clone(),
                baseline: baseline.clone(),
                domain_tag: d.tag.clone(),
                eer_gain: gain(b.median_eer, x.median_eer),
                min_dcf_gain: gain(b.median_min_dcf, x.median_min_dcf),
            });
        }
    }

    let trend = cfg
        .variants
        .iter()
        .map(|v| {
            let label = v.label();
            let rows: Vec<&SummaryRow> = summary.iter().filter(|r| r.variant == label).collect();
            let tops: Vec<f64> = rows.iter().map(|r| r.median_mean_top_count).collect();
            let eers: Vec<f64> = rows.iter().map(|r| r.median_eer).collect();
            ProbeTrendRow {
                variant: label,
                spearman_top_count_vs_eer: spearman(&tops, &eers),
            }
        })
        .collect();
    (summary, gains, trend)
}

fn scores_path(root: &Path, seed: u64, variant: &str, domain: &str) -> PathBuf {
    root.join("scores")
        .join(format!("seed-{seed}"))
        .join(variant)
        .join(format!("{domain}.csv"))
}

/// Runs the whole comparison. When `config.output_dir` is set, writes
/// `report.json` and the per-run score files there; if a run fails, a report
/// with the rows that did finish is written before the error is returned.
pub fn run_experiment(config: &ExperimentConfig, generated_at: Option<String>) -> Result<ExperimentReport> {
    config.validate()?;

    let seed_data: Vec<SeedDatasets> = config
        .seeds
        .par_iter()
        .map(|&s| generate_datasets(config, s))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, Variant)> = (0..config.seeds.len())
        .flat_map(|i| config.variants.iter().map(move |&v| (i, v)))
        .collect();
    let results: Vec<Result<Vec<DomainOutcome>>> = jobs
        .par_iter()
        .map(|&(i, v)| run_one(config, config.seeds[i], v, &seed_data[i]))
        .collect();

    let mut runs = Vec::new();
    let mut first_error = None;
    for (&(i, v), res) in jobs.iter().zip(results) {
        match res {
            Ok(outcomes) => {
                for o in outcomes {
                    if let Some(dir) = &config.output_dir {
                        let path = scores_path(dir, config.seeds[i], &v.label(), &o.row.domain_tag);
                        std::fs::create_dir_all(path.parent().expect("scores path has a parent"))?;
                        write_scores_csv(&path, &o.scores)?;
                    }
                    runs.push(o.row);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }

    let (summary, relative_gains, probe_trend) = summarize(config, &runs);
    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        generated_at,
        status: if first_error.is_some() { "aborted" } else { "complete" }.into(),
        error: first_error.as_ref().map(|e| e.to_string()),
        config: config.clone(),
        runs,
        summary,
        relative_gains,
        probe_trend,
    };
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(REPORT_FILE), report.to_json()?)?;
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Sidecar of a DET CSV: the EER and minDCF operating points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetMarkers {
    pub run_id: String,
    pub variant: String,
    pub domain_tag: String,
    pub eer: f64,
    pub eer_point: OperatingPoint,
    pub min_dcf: f64,
    pub min_dcf_point: OperatingPoint,
    pub dcf: DcfParams,
}

/// Writes one DET CSV plus marker sidecar per (variant, domain) of run
/// `run_id` (`seed-<n>`) under `<output_dir>/det/<run_id>/`. Returns the CSV
/// paths in sorted order.
pub fn emit_det(output_dir: &Path, run_id: &str, dcf: &DcfParams) -> Result<Vec<PathBuf>> {
    let run_dir = output_dir.join("scores").join(run_id);
    if run_id.is_empty() || run_id.contains(['/', '\\']) || !run_dir.is_dir() {
        return Err(Error::UnknownRun(run_id.to_string()));
    }
    let mut inputs: BTreeMap<(String, String), PathBuf> = BTreeMap::new();
    for variant in std::fs::read_dir(&run_dir)? {
        let variant = variant?;
        if !variant.file_type()?.is_dir() {
            continue;
        }
        let vname = variant.file_name().to_string_lossy().into_owned();
        for f in std::fs::read_dir(variant.path())? {
            let path = f?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                let domain = path.file_stem().expect("csv has a stem").to_string_lossy().into_owned();
                inputs.insert((vname.clone(), domain), path);
            }
        }
    }
    if inputs.is_empty() {
        return Err(Error::UnknownRun(run_id.to_string()));
    }

    let out_dir = output_dir.join("det").join(run_id);
    std::fs::create_dir_all(&out_dir)?;
    let mut written = Vec::with_capacity(inputs.len());
    for ((variant, domain), path) in inputs {
        let curve = compute_det(&read_scores_csv(&path)?)?;
        let (min_dcf, min_dcf_at) = min_dcf_point(&curve, dcf);
        let markers = DetMarkers {
            run_id: run_id.to_string(),
            variant: variant.clone(),
            domain_tag: domain.clone(),
            eer: compute_eer(&curve),
            eer_point: eer_point(&curve),
            min_dcf,
            min_dcf_point: min_dcf_at,
            dcf: *dcf,
        };
        let stem = format!("{variant}__{domain}");
        let csv_path = out_dir.join(format!("{stem}.csv"));
        write_det_csv(&csv_path, &curve)?;
        std::fs::write(out_dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&markers)? + "\n")?;
        written.push(csv_path);
    }
    Ok(written)
}
