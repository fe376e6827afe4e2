//! Chaos-theoretic measures on reference signals, then the full 37-D
//! feature vector of a clean and an attacked sensor window.
//!
//! ```text
//! cargo run --release --example chaos_features
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use dodem::attack::{fgsm, AttackMethod, AttackSpec};
use dodem::experiment::{fit_features, load_raw, prepare, DataConfig, DatasetEntry, FeatureSettings};
use dodem::features::{chaos_features, feature_names, ChaosConfig, CHAOS_NAMES};
use dodem::nn::{build_model, train, Architecture, ModelSpec, TrainConfig};
use dodem::synthetic::FleetConfig;

fn main() -> dodem::Result<()> {
    let cfg = ChaosConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let walk: Vec<f64> = noise.iter().scan(0.0, |s, v| {
        *s += v;
        Some(*s)
    }).collect();
    let sine: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.07).sin()).collect();
    let mut x = 0.3;
    let logistic: Vec<f64> = (0..1000)
        .map(|_| {
            x = 4.0 * x * (1.0 - x);
            x
        })
        .collect();
    println!("{:<12} {:>22} {:>10} {:>12} {:>15}", "signal", CHAOS_NAMES[0], CHAOS_NAMES[1], CHAOS_NAMES[2], CHAOS_NAMES[3]);
    for (name, s) in [("white noise", &noise), ("random walk", &walk), ("sine", &sine), ("logistic", &logistic)] {
        let f = chaos_features(s, &cfg)?;
        println!("{name:<12} {:>22.3} {:>10.3} {:>12.3} {:>15.3}", f[0], f[1], f[2], f[3]);
    }

    let fleet = FleetConfig {
        train_units: 10,
        test_units: 6,
        seed: 9,
        ..FleetConfig::default()
    };
    let data = DataConfig {
        train_stride: 8,
        test_stride: 10,
        ..DataConfig::default()
    };
    let d = prepare("SYN", &load_raw(&DatasetEntry::synthetic("SYN", fleet))?, &data, 1)?;
    let pipeline = fit_features(&d, &FeatureSettings::default(), 2)?;
    let tcfg = TrainConfig {
        batch_size: 32,
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let model = train(&build_model(&ModelSpec::reference(Architecture::Cnn1d).with_scale(0.25), 80, 24, 4)?, &d.train, &d.val, &tcfg)?;
    let s = &d.test[0];
    let eps = AttackSpec::new(AttackMethod::Fgsm).epsilon;
    let adv = fgsm(&model, &s.window, s.rul, eps)?;
    let clean_f = pipeline.featurize(&s.window)?;
    let adv_f = pipeline.featurize(&adv)?;
    println!("\n{:<22} {:>10} {:>10}", "feature", "clean", "FGSM");
    for (i, name) in feature_names().iter().enumerate().take(16) {
        println!("{name:<22} {:>10.4} {:>10.4}", clean_f.0[i], adv_f.0[i]);
    }
    println!("... {} features in total", feature_names().len());
    Ok(())
}
