use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::dataset::{load_dataset, partition_dataset, DataSplits};
use super::round::{make_hospitals, run_round, Federation, RoundReport};
use crate::capsnet::{evaluate, train_local, CapsNet, Dataset, Evaluation, TrainParams};
use crate::chain::Ledger;
use crate::error::{Error, Result};
use crate::rng;

pub const CSV_HEADER: &str = "round,providers,accuracy,loss,vc,us,accepted,wall_time_ms";

#[derive(Serialize)]
struct CsvRow {
    round: u64,
    providers: usize,
    accuracy: f64,
    loss: f64,
    vc: f64,
    us: f64,
    accepted: usize,
    wall_time_ms: f64,
}

impl From<&RoundReport> for CsvRow {
    fn from(r: &RoundReport) -> Self {
        CsvRow {
            round: r.round,
            providers: r.providers,
            accuracy: r.accuracy,
            loss: r.loss,
            vc: r.vc,
            us: r.us,
            accepted: r.accepted,
            wall_time_ms: r.wall_time_ms,
        }
    }
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub reports: Vec<RoundReport>,
    pub csv: PathBuf,
    pub jsonl: PathBuf,
    /// One ledger per provider count, in sweep order.
    pub ledgers: Vec<PathBuf>,
    pub baseline: Option<Evaluation>,
}

/// Result of running `rounds` rounds with a fixed set of hospitals.
#[derive(Debug)]
pub struct FederatedRun {
    pub reports: Vec<RoundReport>,
    pub federation: Federation,
}

/// Runs all rounds with the first `providers` partitions.
pub fn run_federation(
    cfg: &ExperimentConfig,
    splits: &DataSplits,
    partitions: &[Dataset],
    providers: usize,
    ledger: Ledger,
) -> Result<FederatedRun> {
    if providers == 0 || providers > partitions.len() {
        return Err(Error::invalid(format!("{providers} providers requested, {} partitions available", partitions.len())));
    }
    let seed = cfg.experiment.seed;
    let initial = CapsNet::init(cfg.model_config(splits.input_len)?, seed)?;
    let mut hospitals = make_hospitals(seed, &partitions[..providers], &initial)?;
    let mut federation = Federation::new(
        initial,
        &hospitals,
        &cfg.chain.category,
        splits.validation.clone(),
        splits.test.clone(),
        ledger,
    )?;
    let mut reports = Vec::with_capacity(cfg.experiment.rounds);
    for _ in 0..cfg.experiment.rounds {
        let report = run_round(&mut federation, &mut hospitals, cfg)?;
        log::info!(
            "providers {providers} round {}: accuracy {:.4} loss {:.4} accepted {}/{}",
            report.round,
            report.accuracy,
            report.loss,
            report.accepted,
            report.sampled
        );
        reports.push(report);
    }
    federation.log.audit(federation.global.params().len())?;
    Ok(FederatedRun { reports, federation })
}

/// One model trained on the union of the training pool for as many epochs
/// as a hospital sees over the whole federation.
pub fn centralized_baseline(cfg: &ExperimentConfig, splits: &DataSplits) -> Result<(CapsNet, Evaluation)> {
    let seed = cfg.experiment.seed;
    let initial = CapsNet::init(cfg.model_config(splits.input_len)?, seed)?;
    let t = cfg.trainer;
    let params = TrainParams { epochs: t.epochs * cfg.experiment.rounds, learning_rate: t.learning_rate, batch_size: t.batch_size };
    let train_seed = rand::RngCore::next_u64(&mut rng::stream(seed, "centralized"));
    let (model, _) = train_local(&initial, &splits.train, &params, train_seed)?;
    let eval = evaluate(&model, &splits.test)?;
    Ok((model, eval))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Sweeps the configured provider counts and writes `rounds.csv`,
/// `rounds.jsonl` and one `ledger-p<N>.jsonl` per count to the output
/// directory. Existing files there are replaced.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let out = &cfg.experiment.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let splits = load_dataset(&cfg.dataset, cfg.experiment.seed)?;
    let partitions =
        partition_dataset(&splits.train, cfg.experiment.n_hospitals, &cfg.experiment.partition, cfg.experiment.seed)?;

    let mut reports = Vec::new();
    let mut ledgers = Vec::new();
    for providers in cfg.provider_counts() {
        let path = out.join(format!("ledger-p{providers}.jsonl"));
        if path.exists() {
            fs::remove_file(&path).map_err(io_err(&path))?;
        }
        let ledger = Ledger::create(&path, cfg.chain.genesis_timestamp)?;
        let run = run_federation(cfg, &splits, &partitions, providers, ledger)?;
        reports.extend(run.reports);
        ledgers.push(path);
    }

    let csv = out.join("rounds.csv");
    write_csv(&csv, &reports)?;
    let jsonl = out.join("rounds.jsonl");
    write_jsonl(&jsonl, &reports)?;

    let baseline = if cfg.experiment.centralized_baseline {
        let (_, eval) = centralized_baseline(cfg, &splits)?;
        let path = out.join("baseline.json");
        let text = serde_json::to_string_pretty(&eval).expect("evaluation serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        Some(eval)
    } else {
        None
    };
    Ok(ExperimentOutput { reports, csv, jsonl, ledgers, baseline })
}

pub fn write_csv(path: &Path, reports: &[RoundReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in reports {
        w.serialize(CsvRow::from(r)).map_err(|e| csv_err(path, e))?;
    }
    if reports.is_empty() {
        w.write_record(CSV_HEADER.split(',')).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Format { what: "csv report", detail: format!("{other:?}") },
    }
}

pub fn write_jsonl(path: &Path, reports: &[RoundReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for r in reports {
        let line = serde_json::to_string(r).expect("reports serialize");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}
