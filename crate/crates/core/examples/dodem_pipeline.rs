//! End-to-end desk run: ingest, train, attack, detect, transfer, retrain
//! and the selective evaluation, printed as a table.
//!
//! ```text
//! cargo run --release --example dodem_pipeline [CMAPSS_DIR]
//! ```
//!
//! Without a directory argument (or `CMAPSS_DIR`) the run uses synthetic
//! fleets. Outputs land under `DODEM_OUTPUT_ROOT` (default `dodem-out`).

use std::path::PathBuf;
use std::time::Instant;

use dodem::experiment::{ExperimentManifest, Run};

fn main() -> dodem::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir = std::env::args().nth(1).or_else(|| std::env::var("CMAPSS_DIR").ok()).map(PathBuf::from);
    let run = Run::open(ExperimentManifest::desk_default(dir.as_deref()))?;
    println!("run directory: {}", run.dir.display());

    let t = Instant::now();
    for s in run.ingest()? {
        println!("{}: {} train / {} test units, {} train windows", s.id, s.train_units, s.test_units, s.train_windows);
    }
    run.train_all()?;
    println!("trained in {:.1}s", t.elapsed().as_secs_f64());

    let det = run.detection()?;
    for s in &det.sweeps {
        let b = s.sweep.best_entry();
        println!("{:>5} {} rho={:<5} best F2 {:.3} at {}", s.sweep.kind.name(), s.method, s.ratio, b.f2, b.param);
    }
    let t2 = run.transfer()?;
    println!("substitute ranking: {:?}", t2.ranking);
    let r = run.retrain()?.robustness;
    println!(
        "clean RMSE {:.2} -> {:.2}; FGSM (every window) {:.2} -> {:.2}",
        r.standard_clean, r.retrained_clean, r.standard_perturbed, r.retrained_perturbed
    );
    println!("{:<5} {:>5} {:>9} {:>11} {:>7}", "attack", "rho", "standard", "adversarial", "dodem");
    for e in run.dodem()? {
        println!(
            "{:<5} {:>5} {:>9.3} {:>11.3} {:>7.3}",
            e.method, e.ratio, e.eval.rmse_standard, e.eval.rmse_adversarial, e.eval.rmse_dodem
        );
    }
    run.report()?;
    println!("total {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
