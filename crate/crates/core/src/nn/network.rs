//! Architecture specs and their assembly into branch + head networks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::{Activation, Cell, CellKind, Conv1d, ConvTrace, Dense, DenseTrace, DirectionTrace, Slot, SlotAllocator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Architecture {
    Cnn1d,
    Rnn,
    Lstm,
    Blstm,
    Gru,
    Bgru,
    Cgru,
    Glstm,
}

impl Architecture {
    pub const ALL: [Architecture; 8] = [
        Architecture::Cnn1d,
        Architecture::Rnn,
        Architecture::Lstm,
        Architecture::Blstm,
        Architecture::Gru,
        Architecture::Bgru,
        Architecture::Cgru,
        Architecture::Glstm,
    ];

    /// The seven recurrent and hybrid target architectures.
    pub const TARGETS: [Architecture; 7] = [
        Architecture::Rnn,
        Architecture::Lstm,
        Architecture::Blstm,
        Architecture::Gru,
        Architecture::Bgru,
        Architecture::Cgru,
        Architecture::Glstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn1d => "CNN1D",
            Architecture::Rnn => "RNN",
            Architecture::Lstm => "LSTM",
            Architecture::Blstm => "BLSTM",
            Architecture::Gru => "GRU",
            Architecture::Bgru => "BGRU",
            Architecture::Cgru => "CGRU",
            Architecture::Glstm => "GLSTM",
        }
    }

    fn uses_recurrence(self) -> bool {
        self != Architecture::Cnn1d
    }

    fn uses_conv(self) -> bool {
        matches!(self, Architecture::Cnn1d | Architecture::Cgru)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("cnn") && *a == Architecture::Cnn1d))
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub layers: usize,
    pub kernel: usize,
    pub filters: usize,
    pub final_filters: usize,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig {
            layers: 5,
            kernel: 10,
            filters: 10,
            final_filters: 1,
        }
    }
}

/// Architecture description. Widths are full-scale values; `width_scale`
/// shrinks every hidden width (never below one unit) for desk-scale runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Recurrent stack widths (ignored by CNN1D).
    pub recurrent_widths: Vec<usize>,
    /// Hidden dense widths of the regression head.
    pub dense_widths: Vec<usize>,
    pub conv: ConvConfig,
    pub activation: Activation,
    /// Dropout on the flattened convolutional features, training only.
    pub dropout: f64,
    pub width_scale: f64,
}

pub const DEFAULT_WIDTH_SCALE: f64 = 0.25;

impl ModelSpec {
    /// Reference layout for each architecture: three recurrent layers of
    /// 64/32/16 units with two 8-unit dense layers, a five-layer CNN with a
    /// 100-unit dense layer, and a 100-unit head for the parallel hybrids.
    pub fn reference(architecture: Architecture) -> Self {
        let dense_widths = match architecture {
            Architecture::Cnn1d | Architecture::Cgru | Architecture::Glstm => vec![100],
            _ => vec![8, 8],
        };
        ModelSpec {
            architecture,
            recurrent_widths: vec![64, 32, 16],
            dense_widths,
            conv: ConvConfig::default(),
            activation: Activation::Elu,
            dropout: 0.5,
            width_scale: DEFAULT_WIDTH_SCALE,
        }
    }

    pub fn with_scale(mut self, width_scale: f64) -> Self {
        self.width_scale = width_scale;
        self
    }

    pub fn scaled(&self, width: usize) -> usize {
        ((width as f64 * self.width_scale).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Construction(m));
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return bad(format!("width scale must be positive, got {}", self.width_scale));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.dense_widths.contains(&0) {
            return bad("dense widths must be positive".into());
        }
        if self.architecture.uses_recurrence() && (self.recurrent_widths.is_empty() || self.recurrent_widths.contains(&0)) {
            return bad(format!(
                "{} needs at least one recurrent layer with positive width, got {:?}",
                self.architecture, self.recurrent_widths
            ));
        }
        if self.architecture.uses_conv() {
            let c = &self.conv;
            if c.layers == 0 || c.kernel == 0 || c.filters == 0 || c.final_filters == 0 {
                return bad(format!("convolution settings must be positive, got {c:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Branch {
    Conv {
        layers: Vec<Conv1d>,
        steps: usize,
    },
    /// Each layer has a forward cell and optionally a backward one. All but
    /// the last layer emit full sequences.
    Recurrent {
        layers: Vec<(Cell, Option<Cell>)>,
    },
}

impl Branch {
    fn output_width(&self) -> usize {
        match self {
            Branch::Conv { layers, steps } => steps * layers.last().unwrap().out_channels,
            Branch::Recurrent { layers } => {
                let (f, b) = layers.last().unwrap();
                f.hidden * if b.is_some() { 2 } else { 1 }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum BranchTrace {
    Conv { layers: Vec<ConvTrace>, mask: Option<Vec<f64>> },
    Recurrent { inputs: Vec<Vec<f64>>, dirs: Vec<(DirectionTrace, Option<DirectionTrace>)> },
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    branches: Vec<BranchTrace>,
    head: Vec<DenseTrace>,
    output: DenseTrace,
}

impl Trace {
    pub fn prediction(&self) -> f64 {
        self.output.out[0]
    }
}

/// Parallel branches whose features are concatenated and passed through a
/// dense head to a single linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub(crate) branches: Vec<Branch>,
    pub(crate) head: Vec<Dense>,
    pub(crate) output: Dense,
    pub steps: usize,
    pub channels: usize,
    pub n_params: usize,
    pub(crate) tensors: Vec<(String, Vec<usize>, Slot)>,
    pub(crate) init_limits: Vec<Option<f64>>,
}

impl Network {
    pub fn build(spec: &ModelSpec, steps: usize, channels: usize) -> Result<Self> {
        spec.validate()?;
        if steps == 0 || channels == 0 {
            return Err(Error::Construction("input dimensions must be positive".into()));
        }
        let mut alloc = SlotAllocator::default();
        let act = spec.activation;
        let conv_branch = |alloc: &mut SlotAllocator| {
            let c = &spec.conv;
            let filters = spec.scaled(c.filters);
            let mut layers = Vec::with_capacity(c.layers);
            let mut cin = channels;
            for i in 0..c.layers {
                let cout = if i + 1 == c.layers { c.final_filters } else { filters };
                layers.push(Conv1d::new(alloc, &format!("conv{i}"), cin, cout, c.kernel, act));
                cin = cout;
            }
            Branch::Conv { layers, steps }
        };
        let rec_branch = |alloc: &mut SlotAllocator, kind: CellKind, bidirectional: bool, tag: &str| {
            let mut layers = Vec::new();
            let mut inp = channels;
            for (i, &w) in spec.recurrent_widths.iter().enumerate() {
                let h = spec.scaled(w);
                let f = Cell::new(alloc, &format!("{tag}{i}.fwd"), kind, inp, h);
                let b = bidirectional.then(|| Cell::new(alloc, &format!("{tag}{i}.bwd"), kind, inp, h));
                inp = if bidirectional { 2 * h } else { h };
                layers.push((f, b));
            }
            Branch::Recurrent { layers }
        };
        use Architecture::*;
        let branches = match spec.architecture {
            Cnn1d => vec![conv_branch(&mut alloc)],
            Rnn => vec![rec_branch(&mut alloc, CellKind::Simple, false, "rnn")],
            Lstm => vec![rec_branch(&mut alloc, CellKind::Lstm, false, "lstm")],
            Blstm => vec![rec_branch(&mut alloc, CellKind::Lstm, true, "blstm")],
            Gru => vec![rec_branch(&mut alloc, CellKind::Gru, false, "gru")],
            Bgru => vec![rec_branch(&mut alloc, CellKind::Gru, true, "bgru")],
            Cgru => vec![conv_branch(&mut alloc), rec_branch(&mut alloc, CellKind::Gru, false, "gru")],
            Glstm => vec![
                rec_branch(&mut alloc, CellKind::Gru, false, "gru"),
                rec_branch(&mut alloc, CellKind::Lstm, false, "lstm"),
            ],
        };
        let mut width: usize = branches.iter().map(Branch::output_width).sum();
        let mut head = Vec::new();
        for (i, &w) in spec.dense_widths.iter().enumerate() {
            let out = spec.scaled(w);
            head.push(Dense::new(&mut alloc, &format!("dense{i}"), width, out, act));
            width = out;
        }
        let output = Dense::new(&mut alloc, "output", width, 1, Activation::Linear);
        Ok(Network {
            branches,
            head,
            output,
            steps,
            channels,
            n_params: alloc.next,
            tensors: alloc.shapes,
            init_limits: alloc.init,
        })
    }

    pub(crate) fn initialise<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        let alloc = SlotAllocator {
            next: self.n_params,
            shapes: self.tensors.clone(),
            init: self.init_limits.clone(),
        };
        alloc.initialise(rng)
    }

    /// Named parameter tensors with their shapes and flat offsets.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &[usize], Slot)> {
        self.tensors.iter().map(|(n, s, slot)| (n.as_str(), s.as_slice(), *slot))
    }

    /// Width of the convolutional flatten stage, if any (dropout masks).
    pub fn dropout_width(&self) -> Option<usize> {
        self.branches.iter().find_map(|b| match b {
            Branch::Conv { .. } => Some(b.output_width()),
            _ => None,
        })
    }

    /// Forward pass on one `steps x channels` input. `dropout_mask`, if
    /// given, is multiplied into the flattened convolutional features.
    pub fn forward(&self, p: &[f64], x: &[f64], dropout_mask: Option<&[f64]>) -> Trace {
        let mut feats = Vec::new();
        let mut branch_traces = Vec::with_capacity(self.branches.len());
        for br in &self.branches {
            match br {
                Branch::Conv { layers, steps } => {
                    let mut traces: Vec<ConvTrace> = Vec::with_capacity(layers.len());
                    let mut cur = x.to_vec();
                    for l in layers {
                        let tr = l.forward(p, cur, *steps);
                        cur = tr.out.clone();
                        traces.push(tr);
                    }
                    if let Some(m) = dropout_mask {
                        cur.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                    }
                    feats.extend_from_slice(&cur);
                    branch_traces.push(BranchTrace::Conv {
                        layers: traces,
                        mask: dropout_mask.map(<[f64]>::to_vec),
                    });
                }
                Branch::Recurrent { layers } => {
                    let mut inputs = Vec::with_capacity(layers.len());
                    let mut dirs = Vec::with_capacity(layers.len());
                    let mut seq = x.to_vec();
                    for (i, (f, b)) in layers.iter().enumerate() {
                        let tf = f.run(p, &seq, self.steps, false);
                        let tb = b.as_ref().map(|c| c.run(p, &seq, self.steps, true));
                        let last = i + 1 == layers.len();
                        let next = if last {
                            let mut v = tf.last().to_vec();
                            if let Some(tb) = &tb {
                                v.extend_from_slice(tb.last());
                            }
                            v
                        } else {
                            let mut v = Vec::new();
                            for t in 0..self.steps {
                                v.extend_from_slice(tf.state_at(t));
                                if let Some(tb) = &tb {
                                    v.extend_from_slice(tb.state_at(t));
                                }
                            }
                            v
                        };
                        inputs.push(std::mem::replace(&mut seq, next));
                        dirs.push((tf, tb));
                    }
                    feats.extend_from_slice(&seq);
                    branch_traces.push(BranchTrace::Recurrent { inputs, dirs });
                }
            }
        }
        let mut head_traces = Vec::with_capacity(self.head.len());
        let mut cur = feats;
        for d in &self.head {
            let tr = d.forward(p, cur);
            cur = tr.out.clone();
            head_traces.push(tr);
        }
        let output = self.output.forward(p, cur);
        Trace {
            branches: branch_traces,
            head: head_traces,
            output,
        }
    }

    pub fn predict(&self, p: &[f64], x: &[f64]) -> f64 {
        self.forward(p, x, None).prediction()
    }

    /// Back-propagates `d_pred` (dLoss/dPrediction). Parameter gradients are
    /// accumulated into `grads`; the input gradient is returned.
    pub fn backward(&self, p: &[f64], tr: &Trace, d_pred: f64, grads: &mut [f64]) -> Vec<f64> {
        let mut d = self.output.backward(p, &tr.output, &[d_pred], grads);
        for (layer, lt) in self.head.iter().zip(&tr.head).rev() {
            d = layer.backward(p, lt, &d, grads);
        }
        let mut d_x = vec![0.0; self.steps * self.channels];
        let mut offset = 0;
        for (br, bt) in self.branches.iter().zip(&tr.branches) {
            let w = br.output_width();
            let d_feat = &d[offset..offset + w];
            offset += w;
            match (br, bt) {
                (Branch::Conv { layers, steps }, BranchTrace::Conv { layers: lt, mask }) => {
                    let mut g = d_feat.to_vec();
                    if let Some(m) = mask {
                        g.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                    }
                    for (l, t) in layers.iter().zip(lt).rev() {
                        g = l.backward(p, t, &g, *steps, grads);
                    }
                    d_x.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                (Branch::Recurrent { layers }, BranchTrace::Recurrent { inputs, dirs }) => {
                    let steps = self.steps;
                    let n = layers.len();
                    // Gradient w.r.t. the current layer's output sequence or final state.
                    let mut d_out: Vec<f64> = d_feat.to_vec();
                    for i in (0..n).rev() {
                        let (f, b) = &layers[i];
                        let (tf, tb) = &dirs[i];
                        let h = f.hidden;
                        let width = if b.is_some() { 2 * h } else { h };
                        let last = i + 1 == n;
                        let mut ds_f = vec![vec![0.0; h]; steps];
                        let mut ds_b = vec![vec![0.0; h]; steps];
                        if last {
                            ds_f[tf.last_time()].copy_from_slice(&d_out[..h]);
                            if let Some(tb) = tb {
                                ds_b[tb.last_time()].copy_from_slice(&d_out[h..2 * h]);
                            }
                        } else {
                            for t in 0..steps {
                                ds_f[t].copy_from_slice(&d_out[t * width..t * width + h]);
                                if b.is_some() {
                                    ds_b[t].copy_from_slice(&d_out[t * width + h..(t + 1) * width]);
                                }
                            }
                        }
                        let seq = &inputs[i];
                        let mut d_seq = vec![0.0; seq.len()];
                        f.backward(p, tf, seq, &ds_f, &mut d_seq, grads);
                        if let (Some(cb), Some(tb)) = (b, tb) {
                            cb.backward(p, tb, seq, &ds_b, &mut d_seq, grads);
                        }
                        d_out = d_seq;
                    }
                    d_x.iter_mut().zip(&d_out).for_each(|(a, b)| *a += b);
                }
                _ => unreachable!("trace does not match network"),
            }
        }
        d_x
    }

    /// Slots of the head weights reading the given branch's features:
    /// `(first dense layer weight slot, column range)`.
    pub fn branch_columns(&self, branch: usize) -> Option<(Slot, usize, std::ops::Range<usize>)> {
        let start: usize = self.branches[..branch].iter().map(Branch::output_width).sum();
        let w = self.branches.get(branch)?.output_width();
        let first = self.head.first().unwrap_or(&self.output);
        Some((first.weight, first.inputs, start..start + w))
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }
}
