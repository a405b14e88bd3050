//! Run records on disk: `epochs.jsonl` (one epoch per line),
//! `summary.json`, and a `timing.log` sidecar holding the only
//! non-deterministic value.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::{EpochRecord, RunRecord};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.log";

#[derive(Serialize, Deserialize)]
struct Summary {
    config: TrainConfig,
    epochs_run: usize,
    best_epoch: usize,
    best_val_ap: Option<f64>,
    stopped_early: bool,
    test: MetricsReport,
}

/// Writes the three record files into `dir`, creating it if needed.
pub fn save_run(record: &RunRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = Vec::new();
    for e in &record.epochs {
        serde_json::to_writer(&mut lines, e)?;
        lines.push(b'\n');
    }
    let path = dir.join(EPOCHS_FILE);
    fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;

    let summary = Summary {
        config: record.config.clone(),
        epochs_run: record.epochs.len(),
        best_epoch: record.best_epoch,
        best_val_ap: record.best_val_ap,
        stopped_early: record.stopped_early,
        test: record.test,
    };
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;

    let path = dir.join(TIMING_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    writeln!(f, "seconds={}", record.seconds).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Reads a record written by [`save_run`]. A missing timing sidecar reads
/// as zero seconds.
pub fn load_run(dir: &Path) -> Result<RunRecord> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let summary: Summary = serde_json::from_str(&text)?;

    let path = dir.join(EPOCHS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let epochs = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str::<EpochRecord>)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if epochs.len() != summary.epochs_run {
        return Err(Error::Load {
            path: path.clone(),
            reason: format!("{} epoch lines, summary says {}", epochs.len(), summary.epochs_run),
        });
    }

    let seconds = fs::read_to_string(dir.join(TIMING_FILE))
        .ok()
        .and_then(|t| t.trim().strip_prefix("seconds=").and_then(|s| s.parse().ok()))
        .unwrap_or(0.0);
    Ok(RunRecord {
        config: summary.config,
        epochs,
        best_epoch: summary.best_epoch,
        best_val_ap: summary.best_val_ap,
        stopped_early: summary.stopped_early,
        test: summary.test,
        seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::model::LossValues;

    #[test]
    fn round_trip_is_exact() {
        let record = RunRecord {
            config: TrainConfig::default(),
            epochs: (1..=3)
                .map(|epoch| EpochRecord {
                    epoch,
                    losses: LossValues {
                        total: 0.1 + 1.0 / 3.0 * epoch as f64,
                        jsd: -1.2345678901234567,
                        ..LossValues::default()
                    },
                    val_ap: Some(std::f64::consts::FRAC_1_SQRT_2),
                })
                .collect(),
            best_epoch: 2,
            best_val_ap: Some(0.7071),
            stopped_early: false,
            test: MetricsReport::from_values([0.1, 0.2, 0.3, 0.4, 0.5, 1.0 / 7.0]),
            seconds: 1.5,
        };
        let dir = tempfile::tempdir().unwrap();
        save_run(&record, dir.path()).unwrap();
        assert_eq!(load_run(dir.path()).unwrap(), record);
    }
}
