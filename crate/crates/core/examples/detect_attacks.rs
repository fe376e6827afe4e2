//! Novelty detection of FGSM-perturbed windows: OCSVM and LOF swept over
//! their parameter grids at several adversarial ratios.
//!
//! ```text
//! cargo run --release --example detect_attacks
//! ```
//!
//! Uses (and caches) the desk run under `DODEM_OUTPUT_ROOT`.

use dodem::experiment::{ExperimentManifest, Run};
use dodem::features::feature_csv;

fn main() -> dodem::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let dir = std::env::var_os("CMAPSS_DIR").map(std::path::PathBuf::from);
    let run = Run::open(ExperimentManifest::desk_default(dir.as_deref()))?;
    let stage = run.detection()?;
    for s in &stage.sweeps {
        println!("{} {} at ratio {}", s.sweep.kind, s.method, s.ratio);
        for (i, e) in s.sweep.entries.iter().enumerate() {
            let auc = e.auc.map_or("-".into(), |a| format!("{a:.3}"));
            let mark = if i == s.sweep.best { "*" } else { "" };
            println!("  {:>6}  F2 {:.3}  P {:.3}  R {:.3}  AUC {auc} {mark}", e.param, e.f2, e.precision, e.recall);
        }
    }
    println!("routing detector: {} with parameter {}", stage.detector.kind(), stage.routing_param);

    let features = run.features()?;
    let cell = run.attack_cells(dodem::experiment::CellPurpose::Detect)?.pop().expect("at least one cell");
    let rows = features.featurize_all(&cell.data.samples)?;
    let out = run.dir.join("detect").join("features.csv");
    dodem::io::write_atomic(&out, feature_csv(&cell.data.samples, &rows, &cell.data.mask)?.as_bytes())?;
    println!("feature table for {} at ratio {} written to {}", cell.method, cell.ratio, out.display());
    Ok(())
}
