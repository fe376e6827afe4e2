//! Transfer-attack adversarial retraining of the target set, with the
//! round log and the clean/perturbed trade-off.
//!
//! ```text
//! cargo run --release --example adversarial_retraining
//! ```

use dodem::experiment::{ExperimentManifest, Run};

fn main() -> dodem::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir = std::env::var_os("CMAPSS_DIR").map(std::path::PathBuf::from);
    let run = Run::open(ExperimentManifest::desk_default(dir.as_deref()))?;
    let stage = run.retrain()?;
    print!("{}", std::fs::read_to_string(run.dir.join("retrain").join("rounds.csv")).unwrap_or_default());
    let r = stage.robustness;
    println!("{:<10} {:>8} {:>14}", "set", "clean", "FGSM, all");
    println!("{:<10} {:>8.3} {:>14.3}", "standard", r.standard_clean, r.standard_perturbed);
    println!("{:<10} {:>8.3} {:>14.3}", "retrained", r.retrained_clean, r.retrained_perturbed);
    Ok(())
}
