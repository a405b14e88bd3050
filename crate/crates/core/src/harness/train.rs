use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use super::model::{LossValues, Mode, Model, Targets};
use crate::data::{apply_missingness, generate_synthetic, split_dataset, MissingnessSpec, MultiViewDataset, Split};
use crate::error::{Error, Result};
use crate::imputation::{fragment_length, fragment_mask, impute_views, mean_impute};
use crate::labelgraph::{cooccurrence, neighborhood_mask};
use crate::metrics::{evaluate, MetricsReport, MetricsSummary};
use crate::numerics::{derive_seed, grad_check, GradCheckReport, Matrix, ParamStore, RngStream, Tape};

const INIT_STREAM: u64 = 1;
const EPOCH_STREAM_BASE: u64 = 1 << 32;

/// One line of the per-epoch log. Loss values are those of the pass that
/// produced the epoch's update; `val_ap` is measured after the update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossValues,
    pub val_ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_ap: Option<f64>,
    pub stopped_early: bool,
    pub test: MetricsReport,
    /// Wall-clock training time; stored apart from the deterministic files.
    #[serde(skip)]
    pub seconds: f64,
}

/// A trained network with everything needed to score new data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub model: Model,
    pub params: ParamStore,
    /// Label neighborhood mask built from the training labels.
    pub graph_mask: Matrix,
}

impl TrainedModel {
    /// Completes the views of `ds` the way training did and scores the rows
    /// of `split`.
    pub fn predict_split(&self, ds: &MultiViewDataset, split: Split) -> Result<(Matrix, Vec<usize>)> {
        if ds.view_dims() != self.model.view_dims || ds.n_labels() != self.model.classes {
            return Err(Error::invalid("dataset shape does not match the model"));
        }
        let views = complete_views(ds, &self.config)?;
        let rows = ds.indices(split);
        let inputs: Vec<Matrix> = views.iter().map(|x| x.select_rows(&rows)).collect();
        Ok((self.model.predict(&self.params, &inputs, &self.graph_mask)?, rows))
    }

    /// Metrics on the rows of `split` against the full label matrix.
    pub fn evaluate_split(&self, ds: &MultiViewDataset, split: Split) -> Result<MetricsReport> {
        let (p, rows) = self.predict_split(ds, split)?;
        if rows.is_empty() {
            return Err(Error::invalid(format!("dataset has no {split:?} rows")));
        }
        evaluate(&p, &ds.labels.select_rows(&rows))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn complete_views(ds: &MultiViewDataset, cfg: &TrainConfig) -> Result<Vec<Matrix>> {
    if cfg.use_s1 {
        impute_views(ds, &cfg.imputation())
    } else {
        mean_impute(ds)
    }
}

fn tag_epoch(err: Error, epoch: usize) -> Error {
    match err {
        Error::Divergence { op } => Error::Divergence {
            op: format!("epoch {epoch}: {op}"),
        },
        other => other,
    }
}

/// Trains on the training rows of a split, masked dataset.
pub fn train(ds: &MultiViewDataset, cfg: &TrainConfig) -> Result<RunRecord> {
    train_model(ds, cfg).map(|(_, record)| record)
}

/// Full-batch gradient descent on the training rows. Fragment masks, sampling
/// noise and negative pairs are redrawn every epoch; the parameters with the
/// best validation AP are kept and scored on the test rows.
pub fn train_model(ds: &MultiViewDataset, cfg: &TrainConfig) -> Result<(TrainedModel, RunRecord)> {
    cfg.validate()?;
    ds.validate()?;
    let start = Instant::now();
    let train_rows = ds.indices(Split::Train);
    let val_rows = ds.indices(Split::Val);
    let test_rows = ds.indices(Split::Test);
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(Error::invalid("training needs train and test rows; run split first"));
    }

    let views = complete_views(ds, cfg)?;
    let graph_mask = neighborhood_mask(&cooccurrence(&ds.labels, &ds.label_mask, &train_rows)?);
    let pick = |rows: &[usize]| -> Vec<Matrix> { views.iter().map(|x| x.select_rows(rows)).collect() };
    let (train_x, val_x, test_x) = (pick(&train_rows), pick(&val_rows), pick(&test_rows));
    let train_y = ds.labels.select_rows(&train_rows);
    let train_g = ds.label_mask.select_rows(&train_rows);
    // unobserved validation labels count as irrelevant
    let val_y = ds
        .labels
        .select_rows(&val_rows)
        .zip_map(&ds.label_mask.select_rows(&val_rows), |y, g| y * g)?;
    let lengths: Vec<usize> = ds.view_dims().iter().map(|&dv| fragment_length(dv, cfg.fragment)).collect();

    let mut store = ParamStore::new();
    let mut init = RngStream::new(cfg.seed, INIT_STREAM);
    let model = Model::new(&mut store, cfg, &ds.view_dims(), ds.n_labels(), &mut init);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let mut rng = RngStream::new(cfg.seed, EPOCH_STREAM_BASE + epoch as u64);
        let losses = (|| {
            let inputs = train_x
                .iter()
                .zip(&lengths)
                .map(|(x, &l)| fragment_mask(x, l, &mut rng).map(|(z, _)| z))
                .collect::<Result<Vec<_>>>()?;
            let mut tape = Tape::new();
            let targets = Targets {
                labels: &train_y,
                mask: &train_g,
            };
            let out = model.forward(&mut tape, &store, &inputs, &graph_mask, Some(targets), Mode::Train(&mut rng), None)?;
            let loss = out.loss.ok_or_else(|| Error::invalid("forward pass returned no loss"))?;
            tape.backward(loss)?.accumulate_into(&mut store)?;
            store.sgd_step(cfg.lr)?;
            Ok(out.values)
        })()
        .map_err(|e| tag_epoch(e, epoch))?;

        let val_ap = if val_rows.is_empty() {
            None
        } else {
            let p = model.predict(&store, &val_x, &graph_mask).map_err(|e| tag_epoch(e, epoch))?;
            evaluate(&p, &val_y).ok().map(|r| r.ap)
        };
        log::debug!("epoch {epoch}: loss {:.6} val AP {val_ap:?}", losses.total);
        epochs.push(EpochRecord { epoch, losses, val_ap });

        let score = val_ap.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => score > *b,
        };
        if improved || val_rows.is_empty() {
            best = Some((score, epoch, store.clone()));
        } else if cfg.patience > 0 && epoch - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let (best_score, best_epoch, params) = best.expect("at least one epoch runs");
    let test_p = model.predict(&params, &test_x, &graph_mask)?;
    let test = evaluate(&test_p, &ds.labels.select_rows(&test_rows))?;
    let record = RunRecord {
        config: cfg.clone(),
        epochs,
        best_epoch,
        best_val_ap: best_score.is_finite().then_some(best_score),
        stopped_early,
        test,
        seconds: start.elapsed().as_secs_f64(),
    };
    let trained = TrainedModel {
        config: cfg.clone(),
        model,
        params,
        graph_mask,
    };
    Ok((trained, record))
}

/// [`train`] with `variant`'s component switched off.
pub fn ablate(ds: &MultiViewDataset, cfg: &TrainConfig, variant: Variant) -> Result<RunRecord> {
    train(ds, &cfg.clone().with_variant(variant))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub seeds: Vec<u64>,
    pub reports: Vec<MetricsReport>,
    pub summary: MetricsSummary,
}

/// Seed of repetition `r` under base seed `seed`.
pub fn repetition_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, r as u64)
}

/// Splits, masks, and trains once per derived seed, then summarizes the test
/// metrics.
pub fn repeat_protocol(source: &MultiViewDataset, cfg: &TrainConfig) -> Result<ProtocolOutcome> {
    if cfg.repetitions < 2 {
        return Err(Error::invalid("repetitions must be at least 2"));
    }
    let seeds: Vec<u64> = (0..cfg.repetitions).map(|r| repetition_seed(cfg.seed, r)).collect();
    repeat_with_seeds(source, cfg, &seeds)
}

/// [`repeat_protocol`] with explicit per-repetition seeds. Each seed drives
/// the split, the missingness masks and the initialization.
pub fn repeat_with_seeds(source: &MultiViewDataset, cfg: &TrainConfig, seeds: &[u64]) -> Result<ProtocolOutcome> {
    cfg.validate()?;
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let ds = prepare_repetition(source, cfg, seed)?;
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let record = train(&ds, &run_cfg)?;
        log::info!("repetition seed {seed}: test AP {:.4}", record.test.ap);
        reports.push(record.test);
    }
    Ok(ProtocolOutcome {
        seeds: seeds.to_vec(),
        summary: MetricsSummary::from_reports(&reports)?,
        reports,
    })
}

/// Split and missingness masks for one repetition of a fully observed
/// dataset.
pub fn prepare_repetition(source: &MultiViewDataset, cfg: &TrainConfig, seed: u64) -> Result<MultiViewDataset> {
    let split = split_dataset(source, cfg.ratios, derive_seed(seed, 1))?;
    apply_missingness(&split, &MissingnessSpec::new(cfg.fmr, cfg.lmr, derive_seed(seed, 2))?)
}

/// Finite-difference check of the whole objective on a small model.
///
/// Sampling noise, negative pairs and fragment masks are fixed, and the
/// fusion weights are held at the values of the unperturbed pass, since the
/// training step treats them as constants.
pub fn full_model_gradcheck(
    ds: &MultiViewDataset,
    cfg: &TrainConfig,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let views = complete_views(ds, cfg)?;
    let rows: Vec<usize> = (0..ds.n_samples()).collect();
    let graph_mask = neighborhood_mask(&cooccurrence(&ds.labels, &ds.label_mask, &rows)?);
    let mut store = ParamStore::new();
    let mut init = RngStream::new(cfg.seed, INIT_STREAM);
    let model = Model::new(&mut store, cfg, &ds.view_dims(), ds.n_labels(), &mut init);
    let mut mask_rng = RngStream::new(cfg.seed, EPOCH_STREAM_BASE);
    let inputs = views
        .iter()
        .map(|x| fragment_mask(x, fragment_length(x.cols(), cfg.fragment), &mut mask_rng).map(|(z, _)| z))
        .collect::<Result<Vec<_>>>()?;

    let pass = |tape: &mut Tape, s: &ParamStore, frozen: Option<&[Vec<f64>]>| {
        let mut rng = RngStream::new(cfg.seed, EPOCH_STREAM_BASE + 1);
        let targets = Targets {
            labels: &ds.labels,
            mask: &ds.label_mask,
        };
        model.forward(tape, s, &inputs, &graph_mask, Some(targets), Mode::Train(&mut rng), frozen)
    };
    let weights = pass(&mut Tape::new(), &store, None)?.fusion_weights;
    let build = |tape: &mut Tape, s: &ParamStore| {
        let out = pass(tape, s, Some(&weights))?;
        out.loss.ok_or_else(|| Error::invalid("forward pass returned no loss"))
    };
    grad_check(build, &store, step, tolerance)
}

/// Finite-difference step and tolerance of [`tiny_gradcheck`].
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// [`full_model_gradcheck`] at the smallest useful scale: 8 samples, 2 views,
/// 3 labels, `d = 4`, `hidden = 8`, 2 attention heads, with a quarter of the
/// views and labels masked out.
pub fn tiny_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let source = generate_synthetic(8, 2, 3, 2, 1, 0.1, seed)?.dataset;
    let ds = apply_missingness(&source, &MissingnessSpec::new(0.25, 0.25, seed)?)?;
    let cfg = TrainConfig {
        d: 4,
        hidden: 8,
        heads: 2,
        k: 3,
        seed,
        ..TrainConfig::default()
    };
    full_model_gradcheck(&ds, &cfg, GRADCHECK_STEP, GRADCHECK_TOLERANCE)
}
