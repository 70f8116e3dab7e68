//! `jeffreys-lab`: generate synthetic speakers, train, score, probe and run
//! the loss comparison from the command line.
//!
//! Configuration is one JSON document (`--config`); any field can be
//! overridden with a flag named after its path, e.g.
//! `--train.loss-kind=ce_jeffreys` or `--seeds=[1,2]`.
//!
//! Exit codes: 0 success, 1 I/O or data error, 2 configuration error,
//! 3 numerical divergence, 4 self-test failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Parser, Subcommand};
use jeffreys_core::experiment::{
    embed_and_probe, emit_det, generate_datasets, run_experiment, training_mean, ExperimentConfig,
    ExperimentReport,
};
use jeffreys_core::probe::{probe_dataset, write_probe_json, write_top_counts_csv};
use jeffreys_core::scoring::{compute_det, score_trials, write_det_csv, write_scores_csv, MetricsReport};
use jeffreys_core::selftest::{self_test, SelfTestOptions};
use jeffreys_core::synth::{read_trials, read_utterances, write_trials, write_utterances, Utterance};
use jeffreys_core::trainer::{fit, read_params, write_loss_history, write_params};
use jeffreys_core::Error;

const OUT_DIR_ENV: &str = "JEFFREYS_LAB_OUT_DIR";

/// Top-level config keys; `--<key>...=value` flags starting with one of these
/// are config overrides rather than command options.
const CONFIG_ROOTS: [&str; 12] = [
    "network", "train", "data", "shift", "domains", "trials", "variants", "dcf", "tau", "seeds",
    "output-dir", "output_dir",
];

#[derive(Parser, Debug)]
#[command(name = "jeffreys-lab", version, about = "Jeffreys-divergence loss experiments on synthetic speakers")]
struct Cli {
    /// JSON experiment config; defaults to the built-in benchmark.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (the config's `output_dir` wins for run-experiment).
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "jeffreys-out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training set and every domain's utterances and trials as CSV.
    Generate {
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one network (`train.*` config fields) on a training CSV.
    Train {
        #[arg(long)]
        train_data: PathBuf,
    },
    /// Score a trial list and write metrics, scores and the DET curve.
    Evaluate {
        #[arg(long)]
        params: PathBuf,
        /// Training CSV, used for the centering mean.
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        utterances: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value = "eval")]
        domain_tag: String,
    },
    /// Count top training speakers per utterance.
    Probe {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        utterances: PathBuf,
        #[arg(long, default_value = "eval")]
        domain_tag: String,
    },
    /// Train and evaluate every (seed, variant) and write report.json.
    RunExperiment,
    /// Write DET CSVs and marker sidecars for one run (`seed-<n>`).
    EmitDet {
        #[arg(long)]
        run_id: String,
    },
    /// Run the built-in invariant suite and print a JSON summary.
    SelfTest {
        #[arg(long)]
        seed: Option<u64>,
        /// Flip the entropy-term sign in the equivalence check; the suite must fail.
        #[arg(long)]
        mutate_entropy_sign: bool,
    },
}

/// Splits `--a.b-c=value` config overrides out of the argument list.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let parsed = arg.strip_prefix("--").and_then(|flag| {
            let (key, value) = flag.split_once('=')?;
            let root = key.split('.').next()?;
            CONFIG_ROOTS.contains(&root).then(|| (key.to_string(), value.to_string()))
        });
        match parsed {
            Some(kv) => overrides.push(kv),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}

fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> anyhow::Result<ExperimentConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?),
        None => None,
    };
    Ok(ExperimentConfig::load(text.as_deref(), overrides)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn features(utts: &[Utterance]) -> Vec<&[f64]> {
    utts.iter().map(|u| u.features.as_slice()).collect()
}

fn run(cli: Cli, overrides: &[(String, String)]) -> anyhow::Result<ExitCode> {
    if let Command::SelfTest { seed, mutate_entropy_sign } = cli.command {
        let mut opts = SelfTestOptions { mutate_entropy_sign, ..SelfTestOptions::default() };
        if let Some(s) = seed {
            opts.seed = s;
        }
        let summary = self_test(&opts);
        println!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(if summary.passed { ExitCode::SUCCESS } else { ExitCode::from(4) });
    }

    let cfg = load_config(cli.config.as_deref(), overrides)?;
    let out = cli.out_dir;
    match cli.command {
        Command::Generate { seed } => {
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let data = generate_datasets(&cfg, seed)?;
            let dir = out.join("data").join(format!("seed-{seed}"));
            std::fs::create_dir_all(&dir)?;
            write_utterances(&dir.join("train.csv"), &data.train)?;
            for d in &data.domains {
                write_utterances(&dir.join(format!("{}.csv", d.spec.tag)), &d.utterances)?;
                write_trials(&dir.join(format!("{}_trials.csv", d.spec.tag)), &d.trials)?;
            }
            println!("{}", dir.display());
        }
        Command::Train { train_data } => {
            let train = read_utterances(&train_data)?;
            let labels: Vec<usize> = train.iter().map(|u| u.label).collect();
            let (params, history) = fit(&cfg.network, &features(&train), &labels, &cfg.train)?;
            std::fs::create_dir_all(&out)?;
            write_params(&out.join("params.bin"), &params)?;
            write_loss_history(&out.join("loss_history.csv"), &history)?;
            if let Some(last) = history.last() {
                println!("epoch {} total loss {:.6}", last.epoch, last.total);
            }
        }
        Command::Evaluate { params, train_data, utterances, trials, domain_tag } => {
            let params = read_params(&params)?;
            let train = read_utterances(&train_data)?;
            let utts = read_utterances(&utterances)?;
            let trials = read_trials(&trials)?;
            let mean = training_mean(&params, &features(&train))?;
            let (embeddings, _) = embed_and_probe(&params, &utts, cfg.train.aam.scale)?;
            let scores = score_trials(&trials, &embeddings, &mean)?;
            let report = MetricsReport::from_scores(&scores, &cfg.dcf, cfg.train.loss_kind.as_str(), &domain_tag, cfg.train.seed)?;
            std::fs::create_dir_all(&out)?;
            write_scores_csv(&out.join(format!("scores_{domain_tag}.csv")), &scores)?;
            write_det_csv(&out.join(format!("det_{domain_tag}.csv")), &compute_det(&scores)?)?;
            write_json(&out.join(format!("metrics_{domain_tag}.json")), &report)?;
            println!("eer {:.6} min_dcf {:.6}", report.eer, report.min_dcf);
        }
        Command::Probe { params, utterances, domain_tag } => {
            let params = read_params(&params)?;
            let utts = read_utterances(&utterances)?;
            let (_, posteriors) = embed_and_probe(&params, &utts, cfg.train.aam.scale)?;
            let result = probe_dataset(&posteriors, cfg.tau, &domain_tag)?;
            std::fs::create_dir_all(&out)?;
            write_probe_json(&out.join(format!("probe_{domain_tag}.json")), &result)?;
            let ids: Vec<usize> = utts.iter().map(|u| u.id).collect();
            write_top_counts_csv(&out.join(format!("top_counts_{domain_tag}.csv")), &ids, &result)?;
            println!("mean top count {:.4}", result.mean_top_count);
        }
        Command::RunExperiment => {
            let mut cfg = cfg;
            cfg.output_dir.get_or_insert(out);
            let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            let report = run_experiment(&cfg, Some(format!("unix:{stamp}")))?;
            print_summary(&report);
        }
        Command::EmitDet { run_id } => {
            let dir = cfg.output_dir.clone().unwrap_or(out);
            for path in emit_det(&dir, &run_id, &cfg.dcf)? {
                println!("{}", path.display());
            }
        }
        Command::SelfTest { .. } => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(report: &ExperimentReport) {
    println!("{:<14} {:<10} {:>8} {:>8} {:>8}", "variant", "domain", "eer", "min_dcf", "top");
    for r in &report.summary {
        println!(
            "{:<14} {:<10} {:>8.4} {:>8.4} {:>8.3}",
            r.variant, r.domain_tag, r.median_eer, r.median_min_dcf, r.median_mean_top_count
        );
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidConfig(_) | Error::TooFewClasses(_)) => 2,
        Some(Error::NonFiniteLoss { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(cli, &overrides) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_split_by_config_root() {
        let args = ["prog", "--config", "c.json", "--train.loss-kind=ce_ls", "--seeds=[1]", "--out-dir=x", "run-experiment"]
            .map(String::from)
            .to_vec();
        let (rest, ov) = split_overrides(args);
        assert_eq!(rest, ["prog", "--config", "c.json", "--out-dir=x", "run-experiment"]);
        assert_eq!(
            ov,
            [("train.loss-kind".to_string(), "ce_ls".to_string()), ("seeds".to_string(), "[1]".to_string())]
        );
    }

    #[test]
    fn config_errors_map_to_exit_two() {
        let err = load_config(None, &[("train.epochs".into(), "\"many\"".into())]).unwrap_err();
        assert_eq!(exit_code_for(&err), 2);
        let err: anyhow::Error = Error::NonFiniteLoss { step: 3 }.into();
        assert_eq!(exit_code_for(&err), 3);
    }
}
