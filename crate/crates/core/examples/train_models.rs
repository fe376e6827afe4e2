//! Train every architecture at a small width on a synthetic fleet and
//! compare test RMSE.
//!
//! ```text
//! cargo run --release --example train_models
//! ```

use std::time::Instant;

use dodem::defense::rmse_of;
use dodem::experiment::{load_raw, prepare, DataConfig, DatasetEntry};
use dodem::nn::{build_model, train, Architecture, ModelSpec, TrainConfig};
use dodem::synthetic::FleetConfig;

fn main() -> dodem::Result<()> {
    let fleet = FleetConfig {
        train_units: 16,
        test_units: 16,
        seed: 7,
        ..FleetConfig::default()
    };
    let data = DataConfig {
        train_stride: 6,
        test_stride: 4,
        ..DataConfig::default()
    };
    let d = prepare("SYN", &load_raw(&DatasetEntry::synthetic("SYN", fleet))?, &data, 1)?;
    let cfg = TrainConfig {
        batch_size: 32,
        max_epochs: 40,
        ..TrainConfig::default()
    };
    println!("{} train / {} val / {} test windows", d.train.len(), d.val.len(), d.test.len());
    println!("{:<6} {:>8} {:>7} {:>9} {:>7}", "model", "params", "epochs", "test RMSE", "secs");
    for (i, arch) in Architecture::ALL.into_iter().enumerate() {
        let t = Instant::now();
        let init = build_model(&ModelSpec::reference(arch).with_scale(0.15), 80, 24, 10 + i as u64)?;
        let m = train(&init, &d.train, &d.val, &cfg)?;
        println!(
            "{:<6} {:>8} {:>7} {:>9.2} {:>7.1}",
            arch.name(),
            m.n_params(),
            m.history.len(),
            rmse_of(&m, &d.test)?,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
