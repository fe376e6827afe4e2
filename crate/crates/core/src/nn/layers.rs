//! Layer kernels with hand-written forward and reverse passes.
//!
//! Every layer reads its weights from a shared flat parameter slice through
//! stored offsets and accumulates parameter gradients into a slice of the
//! same length. Sequences are row-major `steps x width` buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// out += W x, with W `rows x cols` row-major.
#[inline]
pub(crate) fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// out += W^T g.
#[inline]
pub(crate) fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, g: &[f64], out: &mut [f64]) {
    for (r, &gr) in g.iter().enumerate().take(rows) {
        if gr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += gr * a;
        }
    }
}

/// dW += g x^T.
#[inline]
pub(crate) fn outer_acc(dw: &mut [f64], rows: usize, cols: usize, g: &[f64], x: &[f64]) {
    for (r, &gr) in g.iter().enumerate().take(rows) {
        if gr == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, a) in row.iter_mut().zip(x) {
            *d += gr * a;
        }
    }
}

/// Location of one parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    #[inline]
    pub fn of<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.len]
    }

    #[inline]
    pub fn of_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.offset..self.offset + self.len]
    }
}

/// Hands out consecutive slots and records tensor shapes.
#[derive(Debug, Default)]
pub(crate) struct SlotAllocator {
    pub next: usize,
    pub shapes: Vec<(String, Vec<usize>, Slot)>,
    /// Glorot limits for weight tensors; biases are `None`.
    pub init: Vec<Option<f64>>,
}

impl SlotAllocator {
    pub fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Slot {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.push(name, shape, Some(limit))
    }

    pub fn bias(&mut self, name: String, len: usize) -> Slot {
        self.push(name, vec![len], None)
    }

    fn push(&mut self, name: String, shape: Vec<usize>, limit: Option<f64>) -> Slot {
        let len = shape.iter().product();
        let slot = Slot {
            offset: self.next,
            len,
        };
        self.next += len;
        self.shapes.push((name, shape, slot));
        self.init.push(limit);
        slot
    }

    /// Glorot-uniform weights, zero biases.
    pub fn initialise<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.next];
        for ((_, _, slot), limit) in self.shapes.iter().zip(&self.init) {
            if let Some(l) = limit {
                for v in slot.of_mut(&mut p) {
                    *v = rng.random_range(-l..=*l);
                }
            }
        }
        p
    }
}

// ---------------------------------------------------------------- dense

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weight: Slot,
    pub bias: Slot,
}

#[derive(Debug, Clone, Default)]
pub struct DenseTrace {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

impl Dense {
    pub(crate) fn new(alloc: &mut SlotAllocator, name: &str, inputs: usize, outputs: usize, activation: Activation) -> Self {
        let weight = alloc.weight(format!("{name}.weight"), vec![outputs, inputs], inputs, outputs);
        let bias = alloc.bias(format!("{name}.bias"), outputs);
        Dense {
            inputs,
            outputs,
            activation,
            weight,
            bias,
        }
    }

    pub fn forward(&self, p: &[f64], input: Vec<f64>) -> DenseTrace {
        let mut pre = self.bias.of(p).to_vec();
        matvec_acc(self.weight.of(p), self.outputs, self.inputs, &input, &mut pre);
        let out = pre.iter().map(|&z| self.activation.apply(z)).collect();
        DenseTrace { input, pre, out }
    }

    /// Returns the gradient with respect to the layer input.
    pub fn backward(&self, p: &[f64], tr: &DenseTrace, d_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let d_pre: Vec<f64> = d_out
            .iter()
            .zip(tr.pre.iter().zip(&tr.out))
            .map(|(g, (&z, &a))| g * self.activation.derivative(z, a))
            .collect();
        for (b, g) in self.bias.of_mut(grads).iter_mut().zip(&d_pre) {
            *b += g;
        }
        outer_acc(self.weight.of_mut(grads), self.outputs, self.inputs, &d_pre, &tr.input);
        let mut d_in = vec![0.0; self.inputs];
        matvec_t_acc(self.weight.of(p), self.outputs, self.inputs, &d_pre, &mut d_in);
        d_in
    }
}

// ---------------------------------------------------------------- conv1d

/// 1-D convolution over time with "same" zero padding and stride 1.
/// Weights are laid out `[out_channel][tap][in_channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub weight: Slot,
    pub bias: Slot,
}

#[derive(Debug, Clone, Default)]
pub struct ConvTrace {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

impl Conv1d {
    pub(crate) fn new(
        alloc: &mut SlotAllocator,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
    ) -> Self {
        let weight = alloc.weight(
            format!("{name}.weight"),
            vec![out_channels, kernel, in_channels],
            kernel * in_channels,
            kernel * out_channels,
        );
        let bias = alloc.bias(format!("{name}.bias"), out_channels);
        Conv1d {
            in_channels,
            out_channels,
            kernel,
            activation,
            weight,
            bias,
        }
    }

    #[inline]
    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Tap `j` at output step `t` reads input step `t + j - pad_left`.
    #[inline]
    fn source(&self, t: usize, j: usize, steps: usize) -> Option<usize> {
        let s = (t + j).checked_sub(self.pad_left())?;
        (s < steps).then_some(s)
    }

    pub fn forward(&self, p: &[f64], input: Vec<f64>, steps: usize) -> ConvTrace {
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let w = self.weight.of(p);
        let b = self.bias.of(p);
        let mut pre = vec![0.0; steps * cout];
        for t in 0..steps {
            let row = &mut pre[t * cout..(t + 1) * cout];
            row.copy_from_slice(b);
            for j in 0..k {
                let Some(s) = self.source(t, j, steps) else { continue };
                let x = &input[s * cin..(s + 1) * cin];
                for (o, acc) in row.iter_mut().enumerate() {
                    let wr = &w[(o * k + j) * cin..(o * k + j + 1) * cin];
                    *acc += wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let out = pre.iter().map(|&z| self.activation.apply(z)).collect();
        ConvTrace { input, pre, out }
    }

    pub fn backward(&self, p: &[f64], tr: &ConvTrace, d_out: &[f64], steps: usize, grads: &mut [f64]) -> Vec<f64> {
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let d_pre: Vec<f64> = d_out
            .iter()
            .zip(tr.pre.iter().zip(&tr.out))
            .map(|(g, (&z, &a))| g * self.activation.derivative(z, a))
            .collect();
        {
            let db = self.bias.of_mut(grads);
            for t in 0..steps {
                for (o, d) in db.iter_mut().enumerate() {
                    *d += d_pre[t * cout + o];
                }
            }
        }
        let w = self.weight.of(p);
        let mut d_in = vec![0.0; steps * cin];
        let dw = self.weight.of_mut(grads);
        for t in 0..steps {
            for j in 0..k {
                let Some(s) = self.source(t, j, steps) else { continue };
                let x = &tr.input[s * cin..(s + 1) * cin];
                for o in 0..cout {
                    let g = d_pre[t * cout + o];
                    if g == 0.0 {
                        continue;
                    }
                    let base = (o * k + j) * cin;
                    for c in 0..cin {
                        dw[base + c] += g * x[c];
                        d_in[s * cin + c] += g * w[base + c];
                    }
                }
            }
        }
        d_in
    }
}

// ---------------------------------------------------------------- recurrent

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    /// h' = tanh(Wx + Uh + b)
    Simple,
    /// Gates ordered input, forget, candidate, output.
    Lstm,
    /// Gates ordered update, reset, candidate; reset applied after the
    /// recurrent product.
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Simple => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub kind: CellKind,
    pub inputs: usize,
    pub hidden: usize,
    pub kernel: Slot,
    pub recurrent: Slot,
    pub bias: Slot,
}

/// Per-step cache. `gates` holds post-nonlinearity gate values; `uh` the
/// raw recurrent product (needed by the GRU reset path); `c` the LSTM cell.
#[derive(Debug, Clone, Default)]
struct StepTrace {
    gates: Vec<f64>,
    uh: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct DirectionTrace {
    reverse: bool,
    /// Hidden states in processing order, `states[0]` is the zero state.
    states: Vec<Vec<f64>>,
    steps: Vec<StepTrace>,
}

impl Cell {
    pub(crate) fn new(alloc: &mut SlotAllocator, name: &str, kind: CellKind, inputs: usize, hidden: usize) -> Self {
        let g = kind.gates() * hidden;
        let kernel = alloc.weight(format!("{name}.kernel"), vec![g, inputs], inputs, g);
        let recurrent = alloc.weight(format!("{name}.recurrent"), vec![g, hidden], hidden, g);
        let bias = alloc.bias(format!("{name}.bias"), g);
        Cell {
            kind,
            inputs,
            hidden,
            kernel,
            recurrent,
            bias,
        }
    }

    /// Runs the cell over `seq` (forward or reversed time).
    pub fn run(&self, p: &[f64], seq: &[f64], steps: usize, reverse: bool) -> DirectionTrace {
        let h = self.hidden;
        let g = self.kind.gates() * h;
        let (wk, wr, b) = (self.kernel.of(p), self.recurrent.of(p), self.bias.of(p));
        let mut states = Vec::with_capacity(steps + 1);
        states.push(vec![0.0; h]);
        let mut c_prev = vec![0.0; h];
        let mut traces = Vec::with_capacity(steps);
        for k in 0..steps {
            let t = if reverse { steps - 1 - k } else { k };
            let x = &seq[t * self.inputs..(t + 1) * self.inputs];
            let h_prev = &states[k];
            let mut wx = b.to_vec();
            matvec_acc(wk, g, self.inputs, x, &mut wx);
            let mut uh = vec![0.0; g];
            matvec_acc(wr, g, h, h_prev, &mut uh);
            let mut st = StepTrace::default();
            let h_new: Vec<f64> = match self.kind {
                CellKind::Simple => {
                    let a: Vec<f64> = wx.iter().zip(&uh).map(|(a, b)| (a + b).tanh()).collect();
                    st.gates = a.clone();
                    a
                }
                CellKind::Lstm => {
                    let mut gates = vec![0.0; g];
                    for j in 0..h {
                        gates[j] = sigmoid(wx[j] + uh[j]);
                        gates[h + j] = sigmoid(wx[h + j] + uh[h + j]);
                        gates[2 * h + j] = (wx[2 * h + j] + uh[2 * h + j]).tanh();
                        gates[3 * h + j] = sigmoid(wx[3 * h + j] + uh[3 * h + j]);
                    }
                    let c: Vec<f64> = (0..h)
                        .map(|j| gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j])
                        .collect();
                    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
                    let out = (0..h).map(|j| gates[3 * h + j] * tanh_c[j]).collect();
                    st.gates = gates;
                    c_prev.clone_from(&c);
                    st.c = c;
                    st.tanh_c = tanh_c;
                    out
                }
                CellKind::Gru => {
                    let mut gates = vec![0.0; g];
                    for j in 0..h {
                        gates[j] = sigmoid(wx[j] + uh[j]);
                        gates[h + j] = sigmoid(wx[h + j] + uh[h + j]);
                    }
                    for j in 0..h {
                        gates[2 * h + j] = (wx[2 * h + j] + gates[h + j] * uh[2 * h + j]).tanh();
                    }
                    let out = (0..h)
                        .map(|j| gates[j] * h_prev[j] + (1.0 - gates[j]) * gates[2 * h + j])
                        .collect();
                    st.gates = gates;
                    st.uh = uh;
                    out
                }
            };
            states.push(h_new);
            traces.push(st);
        }
        DirectionTrace {
            reverse,
            states,
            steps: traces,
        }
    }

    /// Reverse pass. `d_states[t]` is the loss gradient flowing into the
    /// hidden state emitted at original time `t`. Input gradients are
    /// accumulated into `d_seq`.
    pub fn backward(
        &self,
        p: &[f64],
        tr: &DirectionTrace,
        seq: &[f64],
        d_states: &[Vec<f64>],
        d_seq: &mut [f64],
        grads: &mut [f64],
    ) {
        let h = self.hidden;
        let g = self.kind.gates() * h;
        let steps = tr.steps.len();
        let wk = self.kernel.of(p).to_vec();
        let wr = self.recurrent.of(p).to_vec();
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dk = vec![0.0; wk.len()];
        let mut dr = vec![0.0; wr.len()];
        let mut db = vec![0.0; g];
        for k in (0..steps).rev() {
            let t = if tr.reverse { steps - 1 - k } else { k };
            let st = &tr.steps[k];
            let h_prev = &tr.states[k];
            let dh: Vec<f64> = d_states[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            // d_wx: gradient w.r.t. (Wx + b); d_uh: w.r.t. Uh.
            let mut d_wx = vec![0.0; g];
            let mut d_uh = vec![0.0; g];
            let mut dh_prev = vec![0.0; h];
            match self.kind {
                CellKind::Simple => {
                    for j in 0..h {
                        let a = st.gates[j];
                        d_wx[j] = dh[j] * (1.0 - a * a);
                    }
                    d_uh.copy_from_slice(&d_wx);
                }
                CellKind::Lstm => {
                    let c_prev: &[f64] = if k == 0 { &[] } else { &tr.steps[k - 1].c };
                    for j in 0..h {
                        let (ig, fg, cg, og) = (
                            st.gates[j],
                            st.gates[h + j],
                            st.gates[2 * h + j],
                            st.gates[3 * h + j],
                        );
                        let tc = st.tanh_c[j];
                        let dc = dc_next[j] + dh[j] * og * (1.0 - tc * tc);
                        let cp = if k == 0 { 0.0 } else { c_prev[j] };
                        d_wx[j] = dc * cg * ig * (1.0 - ig);
                        d_wx[h + j] = dc * cp * fg * (1.0 - fg);
                        d_wx[2 * h + j] = dc * ig * (1.0 - cg * cg);
                        d_wx[3 * h + j] = dh[j] * tc * og * (1.0 - og);
                        dc_next[j] = dc * fg;
                    }
                    d_uh.copy_from_slice(&d_wx);
                }
                CellKind::Gru => {
                    for j in 0..h {
                        let (z, r, n) = (st.gates[j], st.gates[h + j], st.gates[2 * h + j]);
                        let dz = dh[j] * (h_prev[j] - n);
                        let dn = dh[j] * (1.0 - z);
                        dh_prev[j] = dh[j] * z;
                        let dan = dn * (1.0 - n * n);
                        let dr_gate = dan * st.uh[2 * h + j];
                        d_wx[j] = dz * z * (1.0 - z);
                        d_wx[h + j] = dr_gate * r * (1.0 - r);
                        d_wx[2 * h + j] = dan;
                        d_uh[j] = d_wx[j];
                        d_uh[h + j] = d_wx[h + j];
                        d_uh[2 * h + j] = dan * r;
                    }
                }
            }
            let x = &seq[t * self.inputs..(t + 1) * self.inputs];
            for (a, b) in db.iter_mut().zip(&d_wx) {
                *a += b;
            }
            outer_acc(&mut dk, g, self.inputs, &d_wx, x);
            matvec_t_acc(&wk, g, self.inputs, &d_wx, &mut d_seq[t * self.inputs..(t + 1) * self.inputs]);
            outer_acc(&mut dr, g, h, &d_uh, h_prev);
            matvec_t_acc(&wr, g, h, &d_uh, &mut dh_prev);
            dh_next = dh_prev;
        }
        for (a, b) in self.kernel.of_mut(grads).iter_mut().zip(&dk) {
            *a += b;
        }
        for (a, b) in self.recurrent.of_mut(grads).iter_mut().zip(&dr) {
            *a += b;
        }
        for (a, b) in self.bias.of_mut(grads).iter_mut().zip(&db) {
            *a += b;
        }
    }
}

impl DirectionTrace {
    /// Hidden state emitted at original time `t`.
    pub fn state_at(&self, t: usize) -> &[f64] {
        let steps = self.steps.len();
        let k = if self.reverse { steps - 1 - t } else { t };
        &self.states[k + 1]
    }

    /// Final state in processing order.
    pub fn last(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// Original time index of the last processed step.
    pub fn last_time(&self) -> usize {
        if self.reverse {
            0
        } else {
            self.steps.len() - 1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_derivative_is_continuous_at_zero() {
        let a = Activation::Elu;
        assert_eq!(a.apply(0.0), 0.0);
        assert!((a.derivative(-1e-12, a.apply(-1e-12)) - 1.0).abs() < 1e-9);
        assert_eq!(a.derivative(1e-12, 1e-12), 1.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn conv_same_padding_keeps_length() {
        let mut alloc = SlotAllocator::default();
        let conv = Conv1d::new(&mut alloc, "c", 1, 1, 3, Activation::Linear);
        let mut p = vec![0.0; alloc.next];
        // Taps (1, 0, 0): output t reads input t - 1.
        p[conv.weight.offset] = 1.0;
        let tr = conv.forward(&p, vec![1.0, 2.0, 3.0, 4.0], 4);
        assert_eq!(tr.out, vec![0.0, 1.0, 2.0, 3.0]);
    }
}
