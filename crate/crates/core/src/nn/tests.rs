use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{Window, WindowedSample};

fn random_window(steps: usize, channels: usize, seed: u64) -> Window {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Window::new(steps, channels, (0..steps * channels).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// One conv layer with kernel 1 feeding the output layer directly: a model
/// linear in its input.
fn linear_spec() -> ModelSpec {
    ModelSpec {
        architecture: Architecture::Cnn1d,
        recurrent_widths: vec![],
        dense_widths: vec![],
        conv: ConvConfig { layers: 1, kernel: 1, filters: 1, final_filters: 1 },
        activation: Activation::Linear,
        dropout: 0.0,
        width_scale: 1.0,
    }
}

/// Central-difference check of the loss gradient w.r.t. parameters and
/// inputs. Returns the worst relative error over coordinates whose
/// analytic gradient exceeds 1e-6 in magnitude.
fn finite_difference_error(model: &TrainedModel, x: &Window, y: f64) -> f64 {
    let h = 1e-4;
    let g = model.backward(std::slice::from_ref(x), &[y]).unwrap();
    let loss_at = |m: &TrainedModel, w: &Window| {
        let r = m.forward(std::slice::from_ref(w)).unwrap()[0] - y;
        r * r
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs());
    let mut worst: f64 = 0.0;
    let mut m = model.clone();
    for i in 0..m.params.len() {
        let a = g.param_grads[i];
        if a.abs() <= 1e-6 {
            continue;
        }
        let orig = m.params[i];
        m.params[i] = orig + h;
        let up = loss_at(&m, x);
        m.params[i] = orig - h;
        let down = loss_at(&m, x);
        m.params[i] = orig;
        worst = worst.max(rel(a, (up - down) / (2.0 * h)));
    }
    let mut xw = x.clone();
    for i in 0..xw.data.len() {
        let a = g.input_grads[0].data[i];
        if a.abs() <= 1e-6 {
            continue;
        }
        let orig = xw.data[i];
        xw.data[i] = orig + h;
        let up = loss_at(model, &xw);
        xw.data[i] = orig - h;
        let down = loss_at(model, &xw);
        xw.data[i] = orig;
        worst = worst.max(rel(a, (up - down) / (2.0 * h)));
    }
    worst
}

#[test]
fn gradients_match_central_differences_for_every_architecture() {
    for (k, arch) in Architecture::ALL.into_iter().enumerate() {
        let spec = ModelSpec::reference(arch).with_scale(0.1);
        let model = build_model(&spec, 12, 5, 11 + k as u64).unwrap();
        let x = random_window(12, 5, 100 + k as u64);
        let y = model.forward(std::slice::from_ref(&x)).unwrap()[0] + 0.7;
        let err = finite_difference_error(&model, &x, y);
        assert!(err < 1e-4, "{arch}: max relative error {err:.3e}");
    }
}

#[test]
fn build_is_deterministic() {
    let spec = ModelSpec::reference(Architecture::Bgru);
    let a = build_model(&spec, 20, 24, 3).unwrap();
    let b = build_model(&spec, 20, 24, 3).unwrap();
    assert_eq!(a, b);
    let c = build_model(&spec, 20, 24, 4).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn cnn_builds_for_reference_input() {
    let spec = ModelSpec::reference(Architecture::Cnn1d).with_scale(1.0);
    let m = build_model(&spec, 80, 24, 0).unwrap();
    let convs = m.network().tensors().filter(|(n, _, _)| n.starts_with("conv") && n.ends_with("weight")).count();
    assert_eq!(convs, 5);
    let y = m.forward(&[random_window(80, 24, 1)]).unwrap();
    assert!(y[0].is_finite());
}

#[test]
fn degenerate_specs_are_rejected() {
    let mut spec = ModelSpec::reference(Architecture::Lstm);
    spec.recurrent_widths = vec![0, 0, 0];
    assert!(matches!(build_model(&spec, 80, 24, 0), Err(Error::Construction(_))));
    spec.recurrent_widths = vec![];
    assert!(build_model(&spec, 80, 24, 0).is_err());
    let mut spec = ModelSpec::reference(Architecture::Cnn1d);
    spec.dropout = 1.0;
    assert!(build_model(&spec, 80, 24, 0).is_err());
}

#[test]
fn zero_weights_predict_the_output_bias() {
    let mut m = build_model(&ModelSpec::reference(Architecture::Gru), 10, 4, 0).unwrap();
    m.params.iter_mut().for_each(|p| *p = 0.0);
    let bias = m.network().output.bias;
    m.params[bias.offset] = 42.5;
    for s in 0..3 {
        assert_eq!(m.forward(&[random_window(10, 4, s)]).unwrap()[0], 42.5);
    }
}

#[test]
fn batch_permutation_permutes_outputs() {
    let m = build_model(&ModelSpec::reference(Architecture::Cgru), 16, 6, 2).unwrap();
    let batch: Vec<Window> = (0..4).map(|s| random_window(16, 6, s)).collect();
    let out = m.forward(&batch).unwrap();
    let perm = [2, 0, 3, 1];
    let permuted: Vec<Window> = perm.iter().map(|&i| batch[i].clone()).collect();
    let out_p = m.forward(&permuted).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(out_p[k], out[i]);
    }
}

#[test]
fn bidirectional_model_sees_time_direction() {
    let m = build_model(&ModelSpec::reference(Architecture::Blstm), 16, 6, 5).unwrap();
    let x = random_window(16, 6, 9);
    let a = m.forward(std::slice::from_ref(&x)).unwrap()[0];
    let b = m.forward(&[x.time_reversed()]).unwrap()[0];
    assert!((a - b).abs() > 1e-9, "{a} vs {b}");
}

#[test]
fn shape_mismatch_is_an_error() {
    let m = build_model(&ModelSpec::reference(Architecture::Rnn), 10, 4, 0).unwrap();
    assert!(matches!(m.forward(&[random_window(9, 4, 0)]), Err(Error::Shape { .. })));
}

#[test]
fn linear_model_input_gradient_has_closed_form() {
    let m = build_model(&linear_spec(), 3, 2, 7).unwrap();
    let net = m.network();
    // f(x) = sum_t v_t (w . x_t + c) + b
    let conv_w = net.tensors().find(|(n, _, _)| *n == "conv0.weight").unwrap().2;
    let w = conv_w.of(&m.params).to_vec();
    let v = net.output.weight.of(&m.params).to_vec();
    let batch = vec![random_window(3, 2, 1), random_window(3, 2, 2)];
    let targets = [0.3, -1.2];
    let preds = m.forward(&batch).unwrap();
    let g = m.backward(&batch, &targets).unwrap();
    for (i, x) in batch.iter().enumerate() {
        let scale = 2.0 / 2.0 * (preds[i] - targets[i]);
        for t in 0..3 {
            for c in 0..2 {
                let expected = scale * v[t] * w[c];
                assert!((g.input_grads[i].get(t, c) - expected).abs() < 1e-12);
            }
        }
        assert_eq!(x.steps, g.input_grads[i].steps);
    }
}

#[test]
fn zero_residual_gives_zero_gradients() {
    let m = build_model(&ModelSpec::reference(Architecture::Lstm), 8, 3, 1).unwrap();
    let x = random_window(8, 3, 4);
    let y = m.forward(std::slice::from_ref(&x)).unwrap()[0];
    let g = m.backward(&[x], &[y]).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.param_grads.iter().all(|&v| v == 0.0));
    assert!(g.input_grads[0].data.iter().all(|&v| v == 0.0));
}

#[test]
fn hybrid_with_one_branch_silenced_matches_the_other_branch() {
    for arch in [Architecture::Cgru, Architecture::Glstm] {
        let mut m = build_model(&ModelSpec::reference(arch).with_scale(0.2), 12, 4, 3).unwrap();
        let net = m.network().clone();
        let (slot, cols, range) = net.branch_columns(0).unwrap();
        let rows = slot.len / cols;
        for r in 0..rows {
            for c in range.clone() {
                m.params[slot.offset + r * cols + c] = 0.0;
            }
        }
        let x = random_window(12, 4, 8);
        let full = m.forward(std::slice::from_ref(&x)).unwrap()[0];
        // Reference: the surviving branch alone, through a head restricted to
        // its columns.
        let survivor = if arch == Architecture::Cgru { Architecture::Gru } else { Architecture::Lstm };
        let mut solo_spec = ModelSpec::reference(survivor).with_scale(0.2);
        solo_spec.dense_widths = vec![100];
        let mut solo = build_model(&solo_spec, 12, 4, 0).unwrap();
        let solo_net = solo.network().clone();
        let solo_cols = cols - range.len();
        for (name, _, dst) in solo_net.tensors() {
            let d = dst.of_mut(&mut solo.params);
            if name == "dense0.weight" {
                let src = slot.of(&m.params);
                for r in 0..rows {
                    for c in 0..solo_cols {
                        d[r * solo_cols + c] = src[r * cols + range.end + c];
                    }
                }
            } else {
                let src = net.tensors().find(|(n, _, _)| *n == name).unwrap().2;
                d.copy_from_slice(src.of(&m.params));
            }
        }
        let alone = solo.forward(&[x]).unwrap()[0];
        assert_eq!(full, alone, "{arch}");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut m = build_model(&ModelSpec::reference(Architecture::Glstm), 10, 3, 9).unwrap();
    m.target_offset = 61.123456789;
    m.target_scale = 1.0 / 3.0;
    m.params[0] = 1e-300;
    m.params[1] = -0.1 + 0.2;
    let back = TrainedModel::from_json(&m.to_json()).unwrap();
    assert_eq!(back, m);
    assert!(back.network.is_some());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let m = build_model(&ModelSpec::reference(Architecture::Rnn), 10, 3, 9).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
    v["model"]["params"].as_array_mut().unwrap().pop();
    assert!(TrainedModel::from_json(&v.to_string()).is_err());
    assert!(TrainedModel::from_json("{}").is_err());
}

fn linear_dataset(n: usize, seed: u64) -> Vec<WindowedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = [0.5, -1.0, 2.0];
    let b = [1.5, -0.5];
    (0..n)
        .map(|_| {
            let w = Window::new(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
            let y = 20.0 + (0..3).map(|t| a[t] * (b[0] * w.get(t, 0) + b[1] * w.get(t, 1))).sum::<f64>();
            WindowedSample { window: w, rul: y, unit_id: 1, end_cycle: 1 }
        })
        .collect()
}

#[test]
fn linear_data_is_fitted() {
    // The generating function lies in the model class, so least squares
    // attains zero loss.
    let train_set = linear_dataset(256, 1);
    let val_set = linear_dataset(64, 2);
    let cfg = TrainConfig { learning_rate: 0.01, batch_size: 32, max_epochs: 150, patience: 10 };
    let m = train(&build_model(&linear_spec(), 3, 2, 0).unwrap(), &train_set, &val_set, &cfg).unwrap();
    let preds = m.predict_rul(&train_set, false).unwrap();
    let mse = preds.iter().zip(&train_set).map(|(p, s)| (p - s.rul).powi(2)).sum::<f64>() / 256.0;
    assert!(mse < 1e-3, "train mse {mse}");
}

#[test]
fn patience_zero_stops_one_epoch_after_no_improvement() {
    let data = linear_dataset(16, 3);
    let cfg = TrainConfig { learning_rate: 0.0, batch_size: 8, max_epochs: 50, patience: 0 };
    let m = train(&build_model(&linear_spec(), 3, 2, 0).unwrap(), &data, &data, &cfg).unwrap();
    assert_eq!(m.history.len(), 2);
}

#[test]
fn training_is_reproducible_and_keeps_best_validation_parameters() {
    let train_set = linear_dataset(64, 4);
    let val_set = linear_dataset(32, 5);
    let cfg = TrainConfig { learning_rate: 0.05, batch_size: 16, max_epochs: 30, patience: 3 };
    let spec = ModelSpec::reference(Architecture::Cnn1d).with_scale(0.2);
    let init = build_model(&spec, 3, 2, 1).unwrap();
    let a = train(&init, &train_set, &val_set, &cfg).unwrap();
    let b = train(&init, &train_set, &val_set, &cfg).unwrap();
    assert_eq!(a, b);
    let best = a.history.iter().filter_map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
    let preds = a.predict_rul(&val_set, false).unwrap();
    let val = preds.iter().zip(&val_set).map(|(p, s)| (p - s.rul).powi(2)).sum::<f64>() / 32.0;
    assert!((val - best).abs() <= 1e-9 * best.max(1.0), "{val} vs {best}");
    assert!(a.history.iter().all(|h| h.train_loss.is_finite()));
}

#[test]
fn model_set_gradient_matches_finite_differences() {
    let set = ModelSet::new(vec![
        build_model(&ModelSpec::reference(Architecture::Gru).with_scale(0.1), 6, 3, 1).unwrap(),
        build_model(&ModelSpec::reference(Architecture::Cnn1d).with_scale(0.1), 6, 3, 2).unwrap(),
    ]);
    let x = random_window(6, 3, 3);
    let y = set.predict_window(&x) + 0.4;
    let (_, g) = set.loss_and_input_gradient(&x, y);
    let h = 1e-5;
    for i in 0..x.data.len() {
        let mut up = x.clone();
        up.data[i] += h;
        let mut dn = x.clone();
        dn.data[i] -= h;
        let fd = ((set.predict_window(&up) - y).powi(2) - (set.predict_window(&dn) - y).powi(2)) / (2.0 * h);
        assert!((fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
    }
}
