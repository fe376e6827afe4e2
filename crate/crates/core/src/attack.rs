//! White-box gradient-sign attacks and random injection into test sets.
//!
//! All three methods ascend the squared error `(f(x) - y)^2` of the crafting
//! model and stay inside the L-infinity ball of radius `epsilon` around the
//! clean window. `sign(0) = 0`, so coordinates with a zero gradient are left
//! untouched.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Window, WindowedSample};
use crate::error::{Error, Result};
use crate::nn::Regressor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AttackMethod {
    Fgsm,
    Bim,
    Mim,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 3] = [AttackMethod::Fgsm, AttackMethod::Bim, AttackMethod::Mim];

    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "FGSM",
            AttackMethod::Bim => "BIM",
            AttackMethod::Mim => "MIM",
        }
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown attack method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub method: AttackMethod,
    /// L-infinity budget in normalised units.
    pub epsilon: f64,
    pub iterations: usize,
    /// Momentum decay for MIM.
    pub decay: f64,
    /// Clip the final MIM iterate to the epsilon ball.
    #[serde(default = "default_true")]
    pub clip_mim: bool,
}

fn default_true() -> bool {
    true
}

impl AttackSpec {
    /// epsilon 0.1, 100 iterations (step 0.001), decay 1.
    pub fn new(method: AttackMethod) -> Self {
        AttackSpec {
            method,
            epsilon: 0.1,
            iterations: 100,
            decay: 1.0,
            clip_mim: true,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    /// Per-iteration step of the iterative methods: `epsilon / iterations`.
    pub fn step(&self) -> f64 {
        self.epsilon / self.iterations as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.method != AttackMethod::Fgsm && self.iterations == 0 {
            return Err(Error::Config("iterative attacks need at least one iteration".into()));
        }
        if !self.decay.is_finite() {
            return Err(Error::Config("momentum decay must be finite".into()));
        }
        Ok(())
    }

    /// Crafts one adversarial window.
    pub fn craft(&self, model: &dyn Regressor, x: &Window, y: f64) -> Result<Window> {
        match self.method {
            AttackMethod::Fgsm => fgsm(model, x, y, self.epsilon),
            AttackMethod::Bim => bim(model, x, y, self.epsilon, self.iterations),
            AttackMethod::Mim => mim(model, x, y, self.epsilon, self.iterations, self.decay, self.clip_mim),
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn input_gradient(model: &dyn Regressor, x: &Window, y: f64) -> Result<Vec<f64>> {
    let (steps, channels) = model.input_dims();
    if (x.steps, x.channels) != (steps, channels) {
        return Err(Error::Shape {
            expected: format!("{steps}x{channels}"),
            got: format!("{}x{}", x.steps, x.channels),
        });
    }
    let (_, g) = model.loss_and_input_gradient(x, y);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok(g)
}

fn clip_to_ball(adv: &mut Window, clean: &Window, epsilon: f64) {
    for (a, c) in adv.data.iter_mut().zip(&clean.data) {
        *a = a.clamp(c - epsilon, c + epsilon);
    }
}

/// `x + epsilon * sign(grad_x loss)`.
pub fn fgsm(model: &dyn Regressor, x: &Window, y: f64, epsilon: f64) -> Result<Window> {
    let g = input_gradient(model, x, y)?;
    let data = x.data.iter().zip(&g).map(|(v, d)| v + epsilon * sign(*d)).collect();
    Ok(Window::new(x.steps, x.channels, data))
}

/// `iterations` signed steps of `epsilon / iterations`, each followed by a
/// clip to the epsilon ball around `x`.
pub fn bim(model: &dyn Regressor, x: &Window, y: f64, epsilon: f64, iterations: usize) -> Result<Window> {
    if iterations == 0 {
        return Err(Error::Precondition("BIM needs at least one iteration".into()));
    }
    let alpha = epsilon / iterations as f64;
    let mut adv = x.clone();
    for _ in 0..iterations {
        let g = input_gradient(model, &adv, y)?;
        for (a, d) in adv.data.iter_mut().zip(&g) {
            *a += alpha * sign(*d);
        }
        clip_to_ball(&mut adv, x, epsilon);
    }
    Ok(adv)
}

/// Momentum iterative method. The accumulator collects L1-normalised
/// gradients with decay `decay`; a step whose gradient has L1 norm below
/// 1e-12 contributes nothing. With `clip`, the final iterate is clipped to
/// the epsilon ball.
pub fn mim(model: &dyn Regressor, x: &Window, y: f64, epsilon: f64, iterations: usize, decay: f64, clip: bool) -> Result<Window> {
    if iterations == 0 {
        return Err(Error::Precondition("MIM needs at least one iteration".into()));
    }
    let alpha = epsilon / iterations as f64;
    let mut adv = x.clone();
    let mut acc = vec![0.0; x.data.len()];
    for _ in 0..iterations {
        let g = input_gradient(model, &adv, y)?;
        let l1: f64 = g.iter().map(|v| v.abs()).sum();
        for (a, d) in acc.iter_mut().zip(&g) {
            *a *= decay;
            if l1 >= 1e-12 {
                *a += d / l1;
            }
        }
        for (v, a) in adv.data.iter_mut().zip(&acc) {
            *v += alpha * sign(*a);
        }
    }
    if clip {
        clip_to_ball(&mut adv, x, epsilon);
    }
    Ok(adv)
}

/// Attacks every sample; labels and identifiers are kept.
pub fn attack_all(model: &dyn Regressor, samples: &[WindowedSample], spec: &AttackSpec) -> Result<Vec<WindowedSample>> {
    spec.validate()?;
    samples
        .iter()
        .map(|s| {
            Ok(WindowedSample {
                window: spec.craft(model, &s.window, s.rul)?,
                ..s.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedDataset {
    pub samples: Vec<WindowedSample>,
    /// True where the sample was replaced by its attacked version.
    pub mask: Vec<bool>,
    pub ratio: f64,
    pub seed: u64,
}

impl PerturbedDataset {
    pub fn attacked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Number of samples attacked at ratio `ratio` out of `n`.
pub fn injection_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

/// Indices chosen for attack: `round(ratio * n)` drawn uniformly without
/// replacement, returned sorted.
pub fn injection_indices(n: usize, ratio: f64, seed: u64) -> Vec<usize> {
    let k = injection_count(ratio, n);
    let mut idx = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Replaces a random `ratio` of `test` with adversarial versions crafted on
/// `crafter`.
pub fn inject_random(
    test: &[WindowedSample],
    crafter: &dyn Regressor,
    spec: &AttackSpec,
    ratio: f64,
    seed: u64,
) -> Result<PerturbedDataset> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("adversarial ratio must lie in [0, 1], got {ratio}")));
    }
    spec.validate()?;
    let mut samples = test.to_vec();
    let mut mask = vec![false; test.len()];
    for i in injection_indices(test.len(), ratio, seed) {
        samples[i].window = spec.craft(crafter, &test[i].window, test[i].rul)?;
        mask[i] = true;
    }
    Ok(PerturbedDataset {
        samples,
        mask,
        ratio,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, Architecture, ModelSpec};
    use rand::Rng;

    /// f(x) = w . x + b over the flattened window.
    struct Linear {
        w: Vec<f64>,
        b: f64,
        steps: usize,
        channels: usize,
    }

    impl Regressor for Linear {
        fn input_dims(&self) -> (usize, usize) {
            (self.steps, self.channels)
        }

        fn predict_window(&self, x: &Window) -> f64 {
            self.b + self.w.iter().zip(&x.data).map(|(a, b)| a * b).sum::<f64>()
        }

        fn loss_and_input_gradient(&self, x: &Window, y: f64) -> (f64, Vec<f64>) {
            let r = self.predict_window(x) - y;
            (r * r, self.w.iter().map(|w| 2.0 * r * w).collect())
        }
    }

    fn linear2() -> Linear {
        Linear { w: vec![1.0, -2.0], b: 0.0, steps: 1, channels: 2 }
    }

    fn random_window(steps: usize, channels: usize, seed: u64) -> Window {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Window::new(steps, channels, (0..steps * channels).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn fgsm_on_linear_model() {
        let m = linear2();
        let x = Window::new(1, 2, vec![0.3, -0.4]);
        // f(x) = 1.1 > y = 0, residual positive: gradient sign follows w.
        let adv = fgsm(&m, &x, 0.0, 0.1).unwrap();
        assert_eq!(adv.data, vec![0.3 + 0.1, -0.4 - 0.1]);
        let y = m.predict_window(&x);
        assert_eq!(fgsm(&m, &x, y, 0.1).unwrap(), x);
    }

    #[test]
    fn fgsm_signs_match_finite_differences() {
        let model = build_model(&ModelSpec::reference(Architecture::Gru).with_scale(0.1), 10, 4, 3).unwrap();
        let x = random_window(10, 4, 1);
        let y = model.predict_window(&x) + 5.0;
        let (_, g) = model.loss_and_input_gradient(&x, y);
        let adv = fgsm(&model, &x, y, 0.1).unwrap();
        let h = 1e-5;
        let loss = |w: &Window| (model.predict_window(w) - y).powi(2);
        for i in 0..x.data.len() {
            if g[i].abs() <= 1e-6 {
                continue;
            }
            let mut up = x.clone();
            up.data[i] += h;
            let mut dn = x.clone();
            dn.data[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert_eq!(sign(fd), (adv.data[i] - x.data[i]).signum(), "coordinate {i}");
        }
    }

    #[test]
    fn bim_single_iteration_is_fgsm() {
        let model = build_model(&ModelSpec::reference(Architecture::Lstm).with_scale(0.1), 8, 3, 2).unwrap();
        for s in 0..5 {
            let x = random_window(8, 3, s);
            let y = 40.0;
            assert_eq!(bim(&model, &x, y, 0.1, 1).unwrap(), fgsm(&model, &x, y, 0.1).unwrap());
        }
    }

    #[test]
    fn bim_on_linear_model_reaches_the_corner() {
        let m = Linear { w: vec![0.5, -1.0, 2.0, 0.0], b: 1.0, steps: 2, channels: 2 };
        let x = Window::new(2, 2, vec![0.1, 0.2, -0.3, 0.4]);
        let y = -3.0;
        let adv = bim(&m, &x, y, 0.1, 100).unwrap();
        let expected = [0.1 + 0.1, 0.2 - 0.1, -0.3 + 0.1, 0.4];
        for (a, e) in adv.data.iter().zip(expected) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
    }

    #[test]
    fn mim_first_step_follows_gradient_sign() {
        let model = build_model(&ModelSpec::reference(Architecture::Cgru).with_scale(0.1), 12, 3, 4).unwrap();
        let x = random_window(12, 3, 2);
        let y = 10.0;
        let one = mim(&model, &x, y, 0.1, 1, 1.0, true).unwrap();
        let f = fgsm(&model, &x, y, 0.1).unwrap();
        for i in 0..x.data.len() {
            assert_eq!(sign(one.data[i] - x.data[i]), sign(f.data[i] - x.data[i]));
        }
    }

    #[test]
    fn mim_without_momentum_traces_normalised_bim() {
        let m = Linear { w: vec![0.3, -0.7, 0.0, 1.1, -0.2, 0.9], b: 0.2, steps: 3, channels: 2 };
        let x = Window::new(3, 2, vec![0.5, -0.1, 0.2, 0.0, 0.3, -0.6]);
        let y = 2.0;
        let iters = 20;
        let alpha = 0.1 / iters as f64;
        // Step-by-step oracle with the closed-form gradient 2 r w.
        let mut expect = x.data.clone();
        for _ in 0..iters {
            let r = m.b + m.w.iter().zip(&expect).map(|(a, b)| a * b).sum::<f64>() - y;
            let g: Vec<f64> = m.w.iter().map(|w| 2.0 * r * w).collect();
            let l1: f64 = g.iter().map(|v| v.abs()).sum();
            for (e, gi) in expect.iter_mut().zip(&g) {
                *e += alpha * sign(gi / l1);
            }
        }
        let got = mim(&m, &x, y, 0.1, iters, 0.0, false).unwrap();
        assert_eq!(got.data, expect);
        let b = bim(&m, &x, y, 0.1, iters).unwrap();
        for (a, e) in b.data.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn mim_skips_vanishing_gradients() {
        let m = Linear { w: vec![0.0, 0.0], b: 0.0, steps: 1, channels: 2 };
        let x = Window::new(1, 2, vec![0.1, 0.2]);
        assert_eq!(mim(&m, &x, 1.0, 0.1, 10, 1.0, true).unwrap(), x);
    }

    #[test]
    fn every_method_stays_in_the_ball() {
        let model = build_model(&ModelSpec::reference(Architecture::Bgru).with_scale(0.1), 10, 3, 1).unwrap();
        for method in AttackMethod::ALL {
            let spec = AttackSpec::new(method).with_iterations(10);
            for s in 0..3 {
                let x = random_window(10, 3, s);
                let adv = spec.craft(&model, &x, 80.0).unwrap();
                assert!(adv.linf_distance(&x) <= 0.1 + 1e-9, "{method}");
            }
        }
    }

    #[test]
    fn injection_counts() {
        let m = linear2();
        let test: Vec<WindowedSample> = (0..100)
            .map(|i| WindowedSample { window: Window::new(1, 2, vec![i as f64, 1.0]), rul: 3.0, unit_id: 1, end_cycle: i })
            .collect();
        let spec = AttackSpec::new(AttackMethod::Fgsm);
        let none = inject_random(&test, &m, &spec, 0.0, 1).unwrap();
        assert_eq!(none.samples, test);
        assert_eq!(none.attacked_count(), 0);
        let all = inject_random(&test, &m, &spec, 1.0, 1).unwrap();
        assert!(all.mask.iter().all(|&b| b));
        let some = inject_random(&test, &m, &spec, 0.2, 9).unwrap();
        assert_eq!(some.attacked_count(), 20);
        for ((a, b), &masked) in some.samples.iter().zip(&test).zip(&some.mask) {
            assert_eq!(a.rul, b.rul);
            assert_eq!(masked, a.window != b.window);
        }
        assert_eq!(inject_random(&test, &m, &spec, 0.2, 9).unwrap(), some);
        assert!(inject_random(&test, &m, &spec, 1.5, 9).is_err());
    }

    #[test]
    fn spec_defaults_and_validation() {
        let s = AttackSpec::new(AttackMethod::Bim);
        assert_eq!((s.epsilon, s.iterations, s.decay), (0.1, 100, 1.0));
        assert!((s.step() - 0.001).abs() < 1e-15);
        assert!(s.clone().with_iterations(0).validate().is_err());
        assert!(s.with_epsilon(-1.0).validate().is_err());
        assert_eq!("mim".parse::<AttackMethod>().unwrap(), AttackMethod::Mim);
    }
}
