//! Sweep artifacts: row and aggregate CSVs, a config snapshot and optional
//! embedding dumps. Column layouts are documented in `docs/csv-schemas.md`.

use std::fs;
use std::path::{Path, PathBuf};

use ovo_core::autodiff::Tensor;
use ovo_core::eval::MetricsRecord;
use ovo_core::fusion::Task;
use ovo_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{Regime, RunConfig};
use crate::sweep::{aggregate, subset_key, AggregateRow, RunStatus, SweepResult, SweepRow};

pub const SCHEMA_VERSION: u32 = 1;
pub const ROWS_FILE: &str = "rows.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const CONFIG_FILE: &str = "config.toml";

pub const ROW_COLUMNS: [&str; 16] = [
    "schema_version",
    "subset",
    "regime",
    "task",
    "seed",
    "status",
    "error",
    "auroc",
    "auprc",
    "group_key",
    "label_group",
    "alignment_top5",
    "pretrain_loss",
    "best_epoch",
    "epochs_run",
    "wall_time_s",
];

pub const AGGREGATE_COLUMNS: [&str; 13] = [
    "schema_version",
    "subset",
    "regime",
    "task",
    "n_seeds",
    "n_failed",
    "auroc_mean",
    "auroc_std",
    "auprc_mean",
    "auprc_std",
    "alignment_top5_mean",
    "alignment_top5_std",
    "k",
];

#[derive(Debug, Serialize, Deserialize)]
struct RowRecord {
    schema_version: u32,
    subset: String,
    regime: Regime,
    task: Task,
    seed: u64,
    status: String,
    error: Option<String>,
    auroc: Option<f64>,
    auprc: Option<f64>,
    group_key: Option<String>,
    label_group: Option<String>,
    alignment_top5: Option<f64>,
    pretrain_loss: Option<f64>,
    best_epoch: Option<usize>,
    epochs_run: Option<usize>,
    wall_time_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct AggregateRecord {
    schema_version: u32,
    subset: String,
    regime: Regime,
    task: Task,
    n_seeds: usize,
    n_failed: usize,
    auroc_mean: Option<f64>,
    auroc_std: Option<f64>,
    auprc_mean: Option<f64>,
    auprc_std: Option<f64>,
    alignment_top5_mean: Option<f64>,
    alignment_top5_std: Option<f64>,
    k: usize,
}

impl From<&SweepRow> for RowRecord {
    fn from(r: &SweepRow) -> Self {
        let (status, error) = match &r.status {
            RunStatus::Ok => ("ok".to_string(), None),
            RunStatus::Failed(e) => ("failed".to_string(), Some(e.clone())),
        };
        let m = r.metrics.as_ref();
        Self {
            schema_version: SCHEMA_VERSION,
            subset: subset_key(&r.subset),
            regime: r.regime,
            task: r.task,
            seed: r.seed,
            status,
            error,
            auroc: m.map(|m| m.auroc),
            auprc: m.map(|m| m.auprc),
            group_key: m.and_then(|m| m.group_key.clone()),
            label_group: m.and_then(|m| m.label_group.clone()),
            alignment_top5: r.alignment_top5,
            pretrain_loss: r.pretrain_loss,
            best_epoch: r.best_epoch,
            epochs_run: r.epochs_run,
            wall_time_s: r.wall_time_s,
        }
    }
}

impl RowRecord {
    fn into_row(self) -> Result<SweepRow> {
        let status = match (self.status.as_str(), self.error) {
            ("ok", None) => RunStatus::Ok,
            ("failed", Some(e)) => RunStatus::Failed(e),
            ("failed", None) => RunStatus::Failed(String::new()),
            (s, _) => return Err(Error::Parse(format!("unknown status `{s}`"))),
        };
        let metrics = match (self.auroc, self.auprc) {
            (Some(auroc), Some(auprc)) => Some(MetricsRecord {
                task: self.task.as_str().into(),
                auroc,
                auprc,
                seed: self.seed,
                group_key: self.group_key,
                label_group: self.label_group,
            }),
            (None, None) => None,
            _ => return Err(Error::Parse("auroc and auprc must be both present or both empty".into())),
        };
        Ok(SweepRow {
            subset: self.subset.split('+').map(str::to_string).collect(),
            regime: self.regime,
            task: self.task,
            seed: self.seed,
            status,
            metrics,
            alignment_top5: self.alignment_top5,
            pretrain_loss: self.pretrain_loss,
            best_epoch: self.best_epoch,
            epochs_run: self.epochs_run,
            wall_time_s: self.wall_time_s,
        })
    }
}

impl From<&AggregateRow> for AggregateRecord {
    fn from(a: &AggregateRow) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            k: a.subset.split('+').count(),
            subset: a.subset.clone(),
            regime: a.regime,
            task: a.task,
            n_seeds: a.n_seeds,
            n_failed: a.n_failed,
            auroc_mean: a.auroc.as_ref().map(|s| s.mean),
            auroc_std: a.auroc.as_ref().and_then(|s| s.std),
            auprc_mean: a.auprc.as_ref().map(|s| s.mean),
            auprc_std: a.auprc.as_ref().and_then(|s| s.std),
            alignment_top5_mean: a.alignment_top5.as_ref().map(|s| s.mean),
            alignment_top5_std: a.alignment_top5.as_ref().and_then(|s| s.std),
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    // explicit header so an empty file still carries the schema
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Parse(format!("{}: unexpected header {found:?}", path.display())));
    }
    r.deserialize().map(|rec| rec.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(path, &ROW_COLUMNS, rows.iter().map(RowRecord::from))
}

pub fn write_aggregates(path: &Path, aggregates: &[AggregateRow]) -> Result<()> {
    write_csv(path, &AGGREGATE_COLUMNS, aggregates.iter().map(AggregateRecord::from))
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>> {
    let records: Vec<RowRecord> = read_csv(path, &ROW_COLUMNS)?;
    records
        .into_iter()
        .map(|r| {
            if r.schema_version != SCHEMA_VERSION {
                return Err(Error::Parse(format!("schema version {} is not {SCHEMA_VERSION}", r.schema_version)));
            }
            r.into_row()
        })
        .collect()
}

/// Number of data rows in an aggregate CSV, after checking its header.
pub fn count_aggregate_rows(path: &Path) -> Result<usize> {
    Ok(read_csv::<AggregateRecord>(path, &AGGREGATE_COLUMNS)?.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmittedFiles {
    pub rows: PathBuf,
    pub aggregate: PathBuf,
    pub config: PathBuf,
}

/// Writes rows, aggregates and the base config snapshot into `dir`.
pub fn emit(result: &SweepResult, base: &RunConfig, dir: &Path) -> Result<EmittedFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = EmittedFiles {
        rows: dir.join(ROWS_FILE),
        aggregate: dir.join(AGGREGATE_FILE),
        config: dir.join(CONFIG_FILE),
    };
    write_rows(&files.rows, &result.rows)?;
    write_aggregates(&files.aggregate, &result.aggregates)?;
    fs::write(&files.config, base.to_toml()).map_err(|e| Error::io(&files.config, e))?;
    Ok(files)
}

/// Re-aggregates a row CSV into `out`.
pub fn report(rows_csv: &Path, out: &Path) -> Result<Vec<AggregateRow>> {
    let rows = read_rows(rows_csv)?;
    let agg = aggregate(&rows);
    write_aggregates(out, &agg)?;
    Ok(agg)
}

/// One CSV per checkpoint: `patient_id, modality, e0 .. e{n-1}`.
pub fn dump_embeddings(path: &Path, patient_ids: &[String], modalities: &[(String, Tensor)]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let n = modalities.first().map_or(0, |m| m.1.cols());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["patient_id".to_string(), "modality".to_string()];
    header.extend((0..n).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (name, t) in modalities {
        for (r, pid) in patient_ids.iter().enumerate() {
            let mut rec = vec![pid.clone(), name.clone()];
            rec.extend(t.row(r).iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
