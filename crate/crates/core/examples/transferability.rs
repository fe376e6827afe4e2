//! Transferability analysis: substitutes trained on each dataset attack the
//! target models of every dataset; substitutes are ranked per target.
//!
//! ```text
//! cargo run --release --example transferability
//! ```

use dodem::experiment::{ExperimentManifest, Run};

fn main() -> dodem::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let dir = std::env::var_os("CMAPSS_DIR").map(std::path::PathBuf::from);
    let run = Run::open(ExperimentManifest::desk_default(dir.as_deref()))?;
    let t = run.transfer()?;
    let m = &t.matrix;
    print!("{:<12}", "sub \\ target");
    for d in &m.datasets {
        print!("{d:>9}");
    }
    println!();
    for (s, row) in m.datasets.iter().zip(&m.rmse) {
        print!("{s:<12}");
        for v in row {
            print!("{v:>9.2}");
        }
        println!();
    }
    for target in &m.datasets {
        println!("{target}: {:?}", dodem::defense::rank_substitutes(m, target)?);
    }
    Ok(())
}
