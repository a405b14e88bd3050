use std::fs;
use std::path::Path;

use adrl::data::{
    apply_missingness, generate_synthetic, load_dataset, parse_ratios, split_dataset, write_dataset, MissingnessSpec,
    MultiViewDataset, Split,
};
use adrl::harness::{
    prepare_repetition, repetition_seed, save_run, tiny_gradcheck, train_model, RunRecord, TrainConfig, TrainedModel,
};
use adrl::metrics::MetricsReport;

use crate::{
    AblateArgs, ConfigArgs, EvalArgs, Failure, GradcheckArgs, MaskArgs, Scale, SplitArgs, SplitName, SynthArgs,
    TrainArgs,
};

pub const MODEL_FILE: &str = "model.json";

type Outcome = Result<(), Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Invalid(format!("{}: {e}", path.display()))
}

pub fn synth(a: SynthArgs) -> Outcome {
    let data = generate_synthetic(a.n, a.v, a.c, a.shared_dim, a.private_dim, a.noise, a.seed)?;
    let manifest = write_dataset(&data.dataset, &a.out)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

pub fn split(a: SplitArgs) -> Outcome {
    let ratios = parse_ratios(&a.ratios)?;
    let ds = load_dataset(&a.dataset)?;
    let out = split_dataset(&ds, ratios, a.seed)?;
    let manifest = write_dataset(&out, &a.out)?;
    let count = |s| out.indices(s).len();
    println!(
        "wrote {} (train {}, val {}, test {})",
        manifest.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(())
}

pub fn mask(a: MaskArgs) -> Outcome {
    let spec = MissingnessSpec::new(a.fmr, a.lmr, a.seed)?;
    let ds = load_dataset(&a.dataset)?;
    let out = apply_missingness(&ds, &spec)?;
    let manifest = write_dataset(&out, &a.out)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn resolve_config(a: &ConfigArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    for item in &a.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::Invalid(format!("--set expects key=value, got `{item}`")))?;
        cfg.set(key, value)?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        cfg.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains, then writes the run record and the model into `out`.
fn train_into(ds: &MultiViewDataset, cfg: &TrainConfig, out: &Path) -> Result<RunRecord, Failure> {
    let (model, record) = train_model(ds, cfg)?;
    save_run(&record, out)?;
    model.save(&out.join(MODEL_FILE))?;
    println!(
        "{}: best epoch {} of {}, test AP {:.4}",
        out.display(),
        record.best_epoch,
        record.epochs.len(),
        record.test.ap
    );
    Ok(record)
}

pub fn train(a: TrainArgs) -> Outcome {
    let cfg = resolve_config(&a.config)?;
    let ds = load_dataset(&a.dataset)?;
    train_into(&ds, &cfg, &a.out)?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> Outcome {
    let model = TrainedModel::load(&a.model)?;
    let ds = load_dataset(&a.dataset)?;
    let split = match a.split {
        SplitName::Train => Split::Train,
        SplitName::Val => Split::Val,
        SplitName::Test => Split::Test,
    };
    let report: MetricsReport = model.evaluate_split(&ds, split)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Invalid(e.to_string()))? + "\n";
    match a.out {
        Some(path) => fs::write(&path, json).map_err(|e| io_failure(&path, e))?,
        None => print!("{json}"),
    }
    Ok(())
}

/// One run per variant in `out/<variant>`, or with `--repetitions` one run
/// per variant and repetition in `out/<variant>/rep<r>`.
pub fn ablate(a: AblateArgs) -> Outcome {
    let cfg = resolve_config(&a.config)?;
    if a.repetitions == Some(0) {
        return Err(Failure::Invalid("repetitions must be at least 1".into()));
    }
    let ds = load_dataset(&a.dataset)?;
    for &variant in &a.variant.0 {
        let cfg = cfg.clone().with_variant(variant);
        let dir = a.out.join(variant.name());
        match a.repetitions {
            None => {
                train_into(&ds, &cfg, &dir)?;
            }
            Some(reps) => {
                for r in 0..reps {
                    let seed = repetition_seed(cfg.seed, r);
                    let prepared = prepare_repetition(&ds, &cfg, seed)?;
                    let run_cfg = TrainConfig { seed, ..cfg.clone() };
                    train_into(&prepared, &run_cfg, &dir.join(format!("rep{r}")))?;
                }
            }
        }
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Outcome {
    let report = match a.scale {
        Scale::Tiny => tiny_gradcheck(a.seed)?,
    };
    for p in &report.params {
        println!(
            "{:<28} {:>5} entries  max rel error {:.3e}  {}",
            p.name,
            p.entries,
            p.max_rel_error,
            if p.passed() { "ok" } else { "FAIL" }
        );
    }
    println!(
        "max rel error {:.3e} (tolerance {:.0e}, step {:.0e})",
        report.max_rel_error(),
        report.tolerance,
        report.step
    );
    if let Some(path) = &a.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Invalid(e.to_string()))?;
        fs::write(path, json + "\n").map_err(|e| io_failure(path, e))?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.params.iter().filter(|p| !p.passed()).map(|p| p.name.as_str()).collect();
        Err(Failure::Invalid(format!("gradient check failed for {}", failed.join(", "))))
    }
}
