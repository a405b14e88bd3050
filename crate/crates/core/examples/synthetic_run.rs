//! Trains the full model once on the synthetic benchmark and prints the
//! per-epoch log and the test metrics.
//!
//! cargo run --release --example synthetic_run -- [seed] [variant] [key=value ...]

use adrl::data::generate_synthetic;
use adrl::harness::{prepare_repetition, train, TrainConfig, Variant};

fn main() -> adrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let variant: Variant = args.next().map(|s| s.parse()).transpose()?.unwrap_or(Variant::Full);
    let source = generate_synthetic(2000, 2, 6, 8, 4, 0.1, seed)?.dataset;
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    }
    .with_variant(variant);
    for kv in args {
        let (k, v) = kv.split_once('=').ok_or_else(|| adrl::Error::Invalid(format!("expected key=value, got {kv}")))?;
        cfg.set(k, v)?;
    }
    let ds = prepare_repetition(&source, &cfg, seed)?;
    let record = train(&ds, &cfg)?;
    for e in &record.epochs {
        let l = &e.losses;
        println!(
            "{:4} total {:.4} mce {:.4} re {:.4} pseudo {:.4} gc {:.4} dis {:+.5} jsd {:+.4} ovl {:+.4} val {:.4}",
            e.epoch,
            l.total,
            l.mce,
            l.re,
            l.pseudo,
            l.manifold,
            l.dis,
            l.jsd,
            l.overlap,
            e.val_ap.unwrap_or(f64::NAN)
        );
    }
    println!("best epoch {} test {:?}", record.best_epoch, record.test);
    println!("seconds {:.1}", record.seconds);
    Ok(())
}
