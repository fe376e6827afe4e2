//! FGSM, BIM and MIM against a trained GRU: perturbation size, RMSE
//! degradation and the effect of the iteration count.
//!
//! ```text
//! cargo run --release --example craft_attacks
//! ```

use dodem::attack::{attack_all, AttackMethod, AttackSpec};
use dodem::defense::rmse_of;
use dodem::experiment::{load_raw, prepare, DataConfig, DatasetEntry};
use dodem::nn::{build_model, train, Architecture, ModelSpec, TrainConfig};
use dodem::synthetic::FleetConfig;

fn main() -> dodem::Result<()> {
    let fleet = FleetConfig {
        train_units: 16,
        test_units: 12,
        seed: 3,
        ..FleetConfig::default()
    };
    let data = DataConfig {
        train_stride: 5,
        test_stride: 6,
        ..DataConfig::default()
    };
    let d = prepare("SYN", &load_raw(&DatasetEntry::synthetic("SYN", fleet))?, &data, 1)?;
    let cfg = TrainConfig {
        batch_size: 32,
        max_epochs: 60,
        ..TrainConfig::default()
    };
    let init = build_model(&ModelSpec::reference(Architecture::Gru).with_scale(0.25), 80, 24, 5)?;
    let model = train(&init, &d.train, &d.val, &cfg)?;
    let clean = rmse_of(&model, &d.test)?;
    println!("clean test RMSE {clean:.2} over {} windows", d.test.len());

    for eps in [0.05, 0.1, 0.2] {
        for method in AttackMethod::ALL {
            let spec = AttackSpec::new(method).with_epsilon(eps).with_iterations(20);
            let adv = attack_all(&model, &d.test, &spec)?;
            let linf = d.test.iter().zip(&adv).map(|(c, a)| c.window.linf_distance(&a.window)).fold(0.0, f64::max);
            println!("eps {eps:<4} {:<4} RMSE {:>6.2}  max Linf {linf:.3}", method.name(), rmse_of(&model, &adv)?);
        }
    }
    println!("BIM at eps 0.1 by iteration count:");
    for it in [1, 5, 20, 100] {
        let adv = attack_all(&model, &d.test, &AttackSpec::new(AttackMethod::Bim).with_iterations(it))?;
        println!("  I={it:<3} RMSE {:.2}", rmse_of(&model, &adv)?);
    }
    Ok(())
}
