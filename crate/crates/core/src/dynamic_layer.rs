//! The dynamic-width residual RNN layer.
//!
//! One layer holds a shared recurrent stage and `W` expert branches. A
//! forward pass at width `w <= W` runs the RNN once, evaluates only the
//! first `w` experts (each producing a candidate residual `A_i` and a
//! reweighting feature `G_i`), pools each `G_i` over time, and feeds the
//! pooled features to a transform-average-concatenate (TAC) module that
//! emits one scalar per expert. The scalars are softmax-normalized, so the
//! layer output is `x + sum_i Q_i * A_i` — a residual whose composition
//! adapts to however many experts are active.
//!
//! An ablation replaces TAC with an independent sigmoid gate per expert
//! (each expert then carries one extra output row as its gate logit and no
//! information flows between experts).

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Binder, Graph, Tensor, Var};

/// Variance floor for the optional pre-RNN column normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// How the per-expert reweighting scalars are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReweightKind {
    /// Transform-average-concatenate: experts exchange information through
    /// a shared mean, and the scalars are softmax-normalized to sum to 1.
    Tac,
    /// Ablation: one sigmoid gate per expert computed from that expert
    /// alone; no cross-expert communication, no normalization.
    IndependentGate,
}

/// Dimensions and switches for one dynamic layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDims {
    /// Feature dimension of the input/output sequence (`N`).
    pub input: usize,
    /// Per-expert reweighting feature rows (`H`).
    pub reweight_features: usize,
    /// Number of expert branches (`W`, the maximum width).
    pub max_width: usize,
    /// Recurrent hidden size per direction (`R`).
    pub rnn_hidden: usize,
    /// TAC hidden size.
    pub tac_hidden: usize,
    pub bidirectional: bool,
    pub reweight: ReweightKind,
    /// Standardize input columns before the RNN (off by default).
    pub layer_norm: bool,
}

impl LayerDims {
    /// RNN output rows seen by the experts.
    pub fn rnn_out(&self) -> usize {
        if self.bidirectional {
            2 * self.rnn_hidden
        } else {
            self.rnn_hidden
        }
    }

    /// Output rows of each expert: the `N` residual rows plus either `H`
    /// TAC feature rows or a single gate-logit row.
    pub fn expert_rows(&self) -> usize {
        match self.reweight {
            ReweightKind::Tac => self.input + self.reweight_features,
            ReweightKind::IndependentGate => self.input + 1,
        }
    }

    fn validate_width(&self, w: usize) -> Result<()> {
        if w == 0 || w > self.max_width {
            return Err(Error::WidthOutOfRange {
                w,
                max: self.max_width,
            });
        }
        Ok(())
    }
}

/// Weight matrix `[out, in]` plus bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl FcParams {
    pub(crate) fn init<R: Rng>(out: usize, input: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        FcParams {
            w: Tensor::uniform(vec![out, input], bound, rng),
            b: Tensor::uniform(vec![out], bound, rng),
        }
    }

    pub(crate) fn zeros(out: usize, input: usize) -> Self {
        FcParams {
            w: Tensor::zeros(vec![out, input]),
            b: Tensor::zeros(vec![out]),
        }
    }
}

/// Gated recurrent cell weights for one direction. `w*` consume the input
/// (`[R, N]`), `u*` the previous hidden state (`[R, R]`), `b*` are biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wc: Tensor,
    pub uc: Tensor,
    pub bc: Tensor,
}

impl GruParams {
    fn init<R: Rng>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let wb = 1.0 / (input as f64).sqrt();
        let ub = 1.0 / (hidden as f64).sqrt();
        let gate = |rng: &mut R| {
            (
                Tensor::uniform(vec![hidden, input], wb, rng),
                Tensor::uniform(vec![hidden, hidden], ub, rng),
                Tensor::uniform(vec![hidden], ub, rng),
            )
        };
        let (wz, uz, bz) = gate(rng);
        let (wr, ur, br) = gate(rng);
        let (wc, uc, bc) = gate(rng);
        GruParams {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wc,
            uc,
            bc,
        }
    }

    fn zeros(hidden: usize, input: usize) -> Self {
        let m = || Tensor::zeros(vec![hidden, input]);
        let u = || Tensor::zeros(vec![hidden, hidden]);
        let b = || Tensor::zeros(vec![hidden]);
        GruParams {
            wz: m(),
            uz: u(),
            bz: b(),
            wr: m(),
            ur: u(),
            br: b(),
            wc: m(),
            uc: u(),
            bc: b(),
        }
    }
}

/// TAC weights: FC1 transforms each expert's pooled feature, FC2 transforms
/// the average, FC3 maps each `[transformed, average]` concatenation to one
/// logit. All three are shared across experts, so TAC size is independent
/// of width.
#[derive(Debug, Clone, PartialEq)]
pub struct TacParams {
    pub fc1: FcParams,
    pub fc2: FcParams,
    pub fc3: FcParams,
}

/// Parameters of one dynamic layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicLayerParams {
    pub dims: LayerDims,
    pub gru_fwd: GruParams,
    /// Present only when `dims.bidirectional`.
    pub gru_bwd: Option<GruParams>,
    /// `dims.max_width` expert branches; extraction truncates this list.
    pub experts: Vec<FcParams>,
    /// Present only for `ReweightKind::Tac`.
    pub tac: Option<TacParams>,
}

impl DynamicLayerParams {
    pub fn init<R: Rng>(dims: LayerDims, rng: &mut R) -> Self {
        let gru_fwd = GruParams::init(dims.rnn_hidden, dims.input, rng);
        let gru_bwd = dims
            .bidirectional
            .then(|| GruParams::init(dims.rnn_hidden, dims.input, rng));
        let experts = (0..dims.max_width)
            .map(|_| FcParams::init(dims.expert_rows(), dims.rnn_out(), rng))
            .collect();
        let tac = match dims.reweight {
            ReweightKind::Tac => {
                let fc1 = FcParams::init(dims.tac_hidden, dims.reweight_features, rng);
                let fc2 = FcParams::init(dims.tac_hidden, dims.tac_hidden, rng);
                let mut fc3 = FcParams::init(1, 2 * dims.tac_hidden, rng);
                // Zero logit bias so the initial reweighting starts near
                // uniform.
                fc3.b = Tensor::zeros(vec![1]);
                Some(TacParams { fc1, fc2, fc3 })
            }
            ReweightKind::IndependentGate => None,
        };
        DynamicLayerParams {
            dims,
            gru_fwd,
            gru_bwd,
            experts,
            tac,
        }
    }

    /// Zero-filled parameters of the same structure (optimizer moment
    /// buffers).
    pub fn zeros(dims: LayerDims) -> Self {
        let gru_fwd = GruParams::zeros(dims.rnn_hidden, dims.input);
        let gru_bwd = dims
            .bidirectional
            .then(|| GruParams::zeros(dims.rnn_hidden, dims.input));
        let experts = (0..dims.max_width)
            .map(|_| FcParams::zeros(dims.expert_rows(), dims.rnn_out()))
            .collect();
        let tac = match dims.reweight {
            ReweightKind::Tac => Some(TacParams {
                fc1: FcParams::zeros(dims.tac_hidden, dims.reweight_features),
                fc2: FcParams::zeros(dims.tac_hidden, dims.tac_hidden),
                fc3: FcParams::zeros(1, 2 * dims.tac_hidden),
            }),
            ReweightKind::IndependentGate => None,
        };
        DynamicLayerParams {
            dims,
            gru_fwd,
            gru_bwd,
            experts,
            tac,
        }
    }

    /// Visits every parameter tensor in canonical order with a stable
    /// dotted name. This order defines flattening, optimizer state layout,
    /// and checkpoint layout.
    pub fn for_each_named(&self, prefix: &str, f: &mut impl FnMut(String, &Tensor)) {
        let gru = |tag: &str, g: &GruParams, f: &mut dyn FnMut(String, &Tensor)| {
            for (n, t) in [
                ("wz", &g.wz),
                ("uz", &g.uz),
                ("bz", &g.bz),
                ("wr", &g.wr),
                ("ur", &g.ur),
                ("br", &g.br),
                ("wc", &g.wc),
                ("uc", &g.uc),
                ("bc", &g.bc),
            ] {
                f(format!("{prefix}.{tag}.{n}"), t);
            }
        };
        gru("gru_fwd", &self.gru_fwd, f);
        if let Some(b) = &self.gru_bwd {
            gru("gru_bwd", b, f);
        }
        for (i, e) in self.experts.iter().enumerate() {
            f(format!("{prefix}.expert.{i}.w"), &e.w);
            f(format!("{prefix}.expert.{i}.b"), &e.b);
        }
        if let Some(tac) = &self.tac {
            for (n, fc) in [("fc1", &tac.fc1), ("fc2", &tac.fc2), ("fc3", &tac.fc3)] {
                f(format!("{prefix}.tac.{n}.w"), &fc.w);
                f(format!("{prefix}.tac.{n}.b"), &fc.b);
            }
        }
    }

    /// Mutable counterpart of [`Self::for_each_named`], same order.
    pub fn for_each_named_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        let gru = |tag: &str, g: &mut GruParams, f: &mut dyn FnMut(String, &mut Tensor)| {
            for (n, t) in [
                ("wz", &mut g.wz),
                ("uz", &mut g.uz),
                ("bz", &mut g.bz),
                ("wr", &mut g.wr),
                ("ur", &mut g.ur),
                ("br", &mut g.br),
                ("wc", &mut g.wc),
                ("uc", &mut g.uc),
                ("bc", &mut g.bc),
            ] {
                f(format!("{prefix}.{tag}.{n}"), t);
            }
        };
        gru("gru_fwd", &mut self.gru_fwd, f);
        if let Some(b) = &mut self.gru_bwd {
            gru("gru_bwd", b, f);
        }
        for (i, e) in self.experts.iter_mut().enumerate() {
            f(format!("{prefix}.expert.{i}.w"), &mut e.w);
            f(format!("{prefix}.expert.{i}.b"), &mut e.b);
        }
        if let Some(tac) = &mut self.tac {
            for (n, fc) in [
                ("fc1", &mut tac.fc1),
                ("fc2", &mut tac.fc2),
                ("fc3", &mut tac.fc3),
            ] {
                f(format!("{prefix}.tac.{n}.w"), &mut fc.w);
                f(format!("{prefix}.tac.{n}.b"), &mut fc.b);
            }
        }
    }

    /// Binds every parameter into `g`, visiting tensors in canonical order.
    pub fn bind<B: Binder>(&self, g: &mut Graph, binder: &mut B) -> Result<BoundLayer> {
        let bind_gru = |g: &mut Graph, binder: &mut B, tag: &str, p: &GruParams| -> Result<BoundGru> {
            Ok(BoundGru {
                wz: binder.bind(g, &format!("{tag}.wz"), &p.wz)?,
                uz: binder.bind(g, &format!("{tag}.uz"), &p.uz)?,
                bz: binder.bind(g, &format!("{tag}.bz"), &p.bz)?,
                wr: binder.bind(g, &format!("{tag}.wr"), &p.wr)?,
                ur: binder.bind(g, &format!("{tag}.ur"), &p.ur)?,
                br: binder.bind(g, &format!("{tag}.br"), &p.br)?,
                wc: binder.bind(g, &format!("{tag}.wc"), &p.wc)?,
                uc: binder.bind(g, &format!("{tag}.uc"), &p.uc)?,
                bc: binder.bind(g, &format!("{tag}.bc"), &p.bc)?,
            })
        };
        let gru_fwd = bind_gru(g, binder, "gru_fwd", &self.gru_fwd)?;
        let gru_bwd = match &self.gru_bwd {
            Some(p) => Some(bind_gru(g, binder, "gru_bwd", p)?),
            None => None,
        };
        let mut experts = Vec::with_capacity(self.experts.len());
        for (i, e) in self.experts.iter().enumerate() {
            experts.push(BoundFc {
                w: binder.bind(g, &format!("expert.{i}.w"), &e.w)?,
                b: binder.bind(g, &format!("expert.{i}.b"), &e.b)?,
            });
        }
        let tac = match &self.tac {
            Some(t) => Some(BoundTac {
                fc1: BoundFc {
                    w: binder.bind(g, "tac.fc1.w", &t.fc1.w)?,
                    b: binder.bind(g, "tac.fc1.b", &t.fc1.b)?,
                },
                fc2: BoundFc {
                    w: binder.bind(g, "tac.fc2.w", &t.fc2.w)?,
                    b: binder.bind(g, "tac.fc2.b", &t.fc2.b)?,
                },
                fc3: BoundFc {
                    w: binder.bind(g, "tac.fc3.w", &t.fc3.w)?,
                    b: binder.bind(g, "tac.fc3.b", &t.fc3.b)?,
                },
            }),
            None => None,
        };
        Ok(BoundLayer {
            dims: self.dims.clone(),
            gru_fwd,
            gru_bwd,
            experts,
            tac,
        })
    }

    /// Convenience forward on plain tensors: builds a private graph, runs
    /// at width `w`, and returns `(output, reweighting scalars)`.
    pub fn forward(&self, x: &Tensor, w: usize) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let mut binder = crate::tensor::LeafBinder::new(false);
        let bound = self.bind(&mut g, &mut binder)?;
        let xv = g.constant(x.clone());
        let out = dynamic_layer_forward(&mut g, xv, &bound, w)?;
        Ok((
            g.tensor(out.output).clone(),
            g.value(out.reweights).to_vec(),
        ))
    }

    /// Total stored parameters when only the first `w` experts are kept.
    pub fn param_count(&self, w: usize) -> u64 {
        layer_param_count(&self.dims, w)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundFc {
    pub w: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    wz: Var,
    uz: Var,
    bz: Var,
    wr: Var,
    ur: Var,
    br: Var,
    wc: Var,
    uc: Var,
    bc: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundTac {
    pub fc1: BoundFc,
    pub fc2: BoundFc,
    pub fc3: BoundFc,
}

/// A layer's parameters bound into one graph, ready for forward passes.
#[derive(Debug, Clone)]
pub struct BoundLayer {
    pub dims: LayerDims,
    gru_fwd: BoundGru,
    gru_bwd: Option<BoundGru>,
    experts: Vec<BoundFc>,
    tac: Option<BoundTac>,
}

/// `weight . x + bias`.
pub fn fc(g: &mut Graph, p: &BoundFc, x: Var) -> Result<Var> {
    let wx = g.matmul(p.w, x)?;
    g.add_bias(wx, p.b)
}

fn gru_gate(g: &mut Graph, w: Var, u: Var, b: Var, x_t: Var, h: Var) -> Result<Var> {
    let wx = g.matmul(w, x_t)?;
    let uh = g.matmul(u, h)?;
    let s = g.add(wx, uh)?;
    g.add_bias(s, b)
}

/// Runs the gated recurrent cell over the columns of `x` (optionally in
/// reverse time order) and returns the hidden states `[R, T]` in forward
/// time order. Initial state is zero.
fn gru_sequence(g: &mut Graph, x: Var, p: &BoundGru, hidden: usize, reverse: bool) -> Result<Var> {
    let t_dim = g.shape(x)[1];
    let ones = g.constant(Tensor::ones(vec![hidden, 1]));
    let mut h = g.constant(Tensor::zeros(vec![hidden, 1]));
    let mut states: Vec<Option<Var>> = vec![None; t_dim];
    let steps: Vec<usize> = if reverse {
        (0..t_dim).rev().collect()
    } else {
        (0..t_dim).collect()
    };
    for t in steps {
        let x_t = g.slice(x, 1, t, 1)?;
        let z_pre = gru_gate(g, p.wz, p.uz, p.bz, x_t, h)?;
        let z = g.sigmoid(z_pre)?;
        let r_pre = gru_gate(g, p.wr, p.ur, p.br, x_t, h)?;
        let r = g.sigmoid(r_pre)?;
        let rh = g.mul(r, h)?;
        let c_pre = gru_gate(g, p.wc, p.uc, p.bc, x_t, rh)?;
        let c = g.tanh(c_pre)?;
        let keep = g.sub(ones, z)?;
        let kept = g.mul(keep, h)?;
        let new = g.mul(z, c)?;
        h = g.add(kept, new)?;
        states[t] = Some(h);
    }
    let states: Vec<Var> = states.into_iter().map(|s| s.expect("all steps run")).collect();
    g.concat(&states, 1)
}

/// The TAC reweighting head: pooled per-expert features (each `[H, 1]`) in,
/// softmax-normalized scalars `[w, 1]` out.
pub fn tac_reweight(g: &mut Graph, pooled: &[Var], tac: &BoundTac) -> Result<Var> {
    if pooled.is_empty() {
        return Err(Error::InvalidShape {
            op: "tac_reweight",
            shape: vec![0],
            reason: "at least one expert feature required".into(),
        });
    }
    let mut transformed = Vec::with_capacity(pooled.len());
    for &gi in pooled {
        let pre = fc(g, &tac.fc1, gi)?;
        transformed.push(g.tanh(pre)?);
    }
    let stacked = g.concat(&transformed, 1)?;
    let mean = g.mean_axis(stacked, 1)?;
    let hidden = g.shape(mean)[0];
    let mean_col = g.reshape(mean, vec![hidden, 1])?;
    let m_pre = fc(g, &tac.fc2, mean_col)?;
    let m = g.tanh(m_pre)?;
    let mut logits = Vec::with_capacity(transformed.len());
    for &hi in &transformed {
        let cat = g.concat(&[hi, m], 0)?;
        logits.push(fc(g, &tac.fc3, cat)?);
    }
    let stacked_logits = g.concat(&logits, 0)?;
    g.softmax(stacked_logits, 0)
}

/// Output of one dynamic layer forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    /// `x + sum_i Q_i * A_i`, shape `[N, T]`.
    pub output: Var,
    /// The `[w, 1]` reweighting scalars (softmax-normalized for TAC,
    /// independent sigmoids for the gate ablation).
    pub reweights: Var,
}

/// Forward pass at width `w`: experts beyond `w` are never touched.
pub fn dynamic_layer_forward(
    g: &mut Graph,
    x: Var,
    layer: &BoundLayer,
    w: usize,
) -> Result<LayerOutput> {
    let dims = &layer.dims;
    dims.validate_width(w)?;
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 || shape[0] != dims.input {
        return Err(Error::InvalidShape {
            op: "dynamic_layer",
            shape,
            reason: format!("expected [{}, T] input", dims.input),
        });
    }
    let x_in = if dims.layer_norm {
        g.norm_cols(x, LAYER_NORM_EPS)?
    } else {
        x
    };
    let fwd = gru_sequence(g, x_in, &layer.gru_fwd, dims.rnn_hidden, false)?;
    let rnn = match &layer.gru_bwd {
        Some(bwd_params) => {
            let bwd = gru_sequence(g, x_in, bwd_params, dims.rnn_hidden, true)?;
            g.concat(&[fwd, bwd], 0)?
        }
        None => fwd,
    };
    let n = dims.input;
    let mut residuals = Vec::with_capacity(w);
    let mut features = Vec::with_capacity(w);
    for expert in &layer.experts[..w] {
        let out = fc(g, expert, rnn)?;
        residuals.push(g.slice(out, 0, 0, n)?);
        features.push(out);
    }
    let reweights = match (dims.reweight, &layer.tac) {
        (ReweightKind::Tac, Some(tac)) => {
            let h = dims.reweight_features;
            let mut pooled = Vec::with_capacity(w);
            for &f_out in &features {
                let rows = g.slice(f_out, 0, n, h)?;
                let mean = g.mean_axis(rows, 1)?;
                pooled.push(g.reshape(mean, vec![h, 1])?);
            }
            tac_reweight(g, &pooled, tac)?
        }
        (ReweightKind::IndependentGate, _) => {
            let mut gates = Vec::with_capacity(w);
            for &f_out in &features {
                let row = g.slice(f_out, 0, n, 1)?;
                let pooled = g.mean_axis(row, 1)?;
                gates.push(g.sigmoid(pooled)?);
            }
            let stacked = g.concat(&gates, 0)?;
            g.reshape(stacked, vec![w, 1])?
        }
        (ReweightKind::Tac, None) => {
            return Err(Error::InvalidShape {
                op: "dynamic_layer",
                shape: vec![],
                reason: "TAC reweighting requested but TAC weights missing".into(),
            })
        }
    };
    let mut out = x;
    for (i, &a_i) in residuals.iter().enumerate() {
        let q_i = g.slice(reweights, 0, i, 1)?;
        let scaled = g.scale(q_i, a_i)?;
        out = g.add(out, scaled)?;
    }
    Ok(LayerOutput {
        output: out,
        reweights,
    })
}

/// Multiply-accumulate count of a dense map `in -> out` applied to `frames`
/// columns. Biases, additions, and nonlinearities are excluded by
/// convention.
pub fn fc_macs(input: usize, output: usize, frames: usize) -> f64 {
    (input * output * frames) as f64
}

/// Stored parameter count at width `w`. The recurrent stage and (for TAC)
/// the reweighting head are width-independent; each kept expert adds its FC
/// weights and bias.
pub fn layer_param_count(dims: &LayerDims, w: usize) -> u64 {
    let n = dims.input;
    let r = dims.rnn_hidden;
    let dirs = if dims.bidirectional { 2 } else { 1 };
    let gru = dirs * 3 * (r * n + r * r + r);
    let rows = dims.expert_rows();
    let experts = w * (rows * dims.rnn_out() + rows);
    let tac = match dims.reweight {
        ReweightKind::Tac => {
            let h = dims.reweight_features;
            let ht = dims.tac_hidden;
            (ht * h + ht) + (ht * ht + ht) + (2 * ht + 1)
        }
        ReweightKind::IndependentGate => 0,
    };
    (gru + experts + tac) as u64
}

/// Multiply-accumulate operations for one forward over `frames` time steps
/// at width `w`. TAC runs once per sequence: FC1 and FC3 are applied per
/// expert, FC2 once. The final weighted sum contributes one multiply per
/// output element per expert.
pub fn layer_macs(dims: &LayerDims, w: usize, frames: usize) -> f64 {
    let n = dims.input;
    let r = dims.rnn_hidden;
    let dirs = if dims.bidirectional { 2 } else { 1 };
    let gru = (dirs * 3 * (r * n + r * r) * frames) as f64;
    let experts = w as f64 * fc_macs(dims.rnn_out(), dims.expert_rows(), frames);
    let tac = match dims.reweight {
        ReweightKind::Tac => {
            let h = dims.reweight_features;
            let ht = dims.tac_hidden;
            (w * (ht * h) + ht * ht + w * 2 * ht) as f64
        }
        ReweightKind::IndependentGate => 0.0,
    };
    let weighted_sum = (w * n * frames) as f64;
    gru + experts + tac + weighted_sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, flatten_params, FlatBinder, GRAD_CHECK_EPS};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn toy_dims() -> LayerDims {
        LayerDims {
            input: 4,
            reweight_features: 3,
            max_width: 4,
            rnn_hidden: 5,
            tac_hidden: 6,
            bidirectional: false,
            reweight: ReweightKind::Tac,
            layer_norm: false,
        }
    }

    fn random_input(rng: &mut StdRng, n: usize, t: usize) -> Tensor {
        Tensor::from_vec(
            vec![n, t],
            (0..n * t).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn width_one_gives_unit_reweight_and_pure_residual() {
        let mut rng = StdRng::seed_from_u64(40);
        let params = DynamicLayerParams::init(toy_dims(), &mut rng);
        let x = random_input(&mut rng, 4, 6);
        let (_, q) = params.forward(&x, 1).unwrap();
        assert_eq!(q, vec![1.0]);
    }

    #[test]
    fn zeroed_residual_heads_make_the_layer_an_identity() {
        let mut rng = StdRng::seed_from_u64(41);
        let mut params = DynamicLayerParams::init(toy_dims(), &mut rng);
        let n = params.dims.input;
        for e in &mut params.experts {
            // Zero only the rows feeding the residual; reweighting features
            // keep their random values.
            let cols = e.w.shape()[1];
            e.w.data_mut()[..n * cols].fill(0.0);
            e.b.data_mut()[..n].fill(0.0);
        }
        let x = random_input(&mut rng, 4, 6);
        for w in 1..=4 {
            let (out, _) = params.forward(&x, w).unwrap();
            assert_eq!(out.data(), x.data(), "width {w}");
        }
    }

    #[test]
    fn reweights_are_a_softmax_simplex_point() {
        let mut rng = StdRng::seed_from_u64(42);
        let params = DynamicLayerParams::init(toy_dims(), &mut rng);
        for w in 1..=4 {
            let x = random_input(&mut rng, 4, 5);
            let (_, q) = params.forward(&x, w).unwrap();
            assert_eq!(q.len(), w);
            assert!(q.iter().all(|&v| v > 0.0));
            let sum: f64 = q.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "width {w}: sum {sum}");
        }
    }

    #[test]
    fn identical_pooled_features_share_the_weight_equally() {
        let mut rng = StdRng::seed_from_u64(43);
        let params = DynamicLayerParams::init(toy_dims(), &mut rng);
        let tac_params = params.tac.as_ref().unwrap();
        let mut g = Graph::new();
        let bind_fc = |g: &mut Graph, p: &FcParams| BoundFc {
            w: g.leaf(p.w.clone()),
            b: g.leaf(p.b.clone()),
        };
        let tac = BoundTac {
            fc1: bind_fc(&mut g, &tac_params.fc1),
            fc2: bind_fc(&mut g, &tac_params.fc2),
            fc3: bind_fc(&mut g, &tac_params.fc3),
        };
        let feature = Tensor::from_vec(vec![3, 1], vec![0.3, -0.8, 0.5]).unwrap();
        let same: Vec<Var> = (0..4).map(|_| g.constant(feature.clone())).collect();
        let q = tac_reweight(&mut g, &same, &tac).unwrap();
        let vals = g.value(q);
        for &v in vals {
            assert_eq!(v, vals[0], "shared weights + identical inputs");
        }
        assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permuting_expert_features_permutes_the_reweights() {
        let mut rng = StdRng::seed_from_u64(44);
        let params = DynamicLayerParams::init(toy_dims(), &mut rng);
        let tac_params = params.tac.as_ref().unwrap();
        let features: Vec<Tensor> = (0..4)
            .map(|_| {
                Tensor::from_vec(vec![3, 1], (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .unwrap()
            })
            .collect();
        let perm = [2usize, 0, 3, 1];
        let run = |order: &[usize]| -> Vec<f64> {
            let mut g = Graph::new();
            let bind_fc = |g: &mut Graph, p: &FcParams| BoundFc {
                w: g.leaf(p.w.clone()),
                b: g.leaf(p.b.clone()),
            };
            let tac = BoundTac {
                fc1: bind_fc(&mut g, &tac_params.fc1),
                fc2: bind_fc(&mut g, &tac_params.fc2),
                fc3: bind_fc(&mut g, &tac_params.fc3),
            };
            let vars: Vec<Var> = order
                .iter()
                .map(|&i| g.constant(features[i].clone()))
                .collect();
            let q = tac_reweight(&mut g, &vars, &tac).unwrap();
            g.value(q).to_vec()
        };
        let base = run(&[0, 1, 2, 3]);
        let permuted = run(&perm);
        for (slot, &src) in perm.iter().enumerate() {
            assert!(
                (permuted[slot] - base[src]).abs() < 1e-9,
                "slot {slot} vs source {src}"
            );
        }
    }

    #[test]
    fn narrower_reweights_are_not_truncations_of_wider_ones() {
        let mut rng = StdRng::seed_from_u64(45);
        let params = DynamicLayerParams::init(toy_dims(), &mut rng);
        let x = random_input(&mut rng, 4, 5);
        for w in 1..4 {
            let (_, q_w) = params.forward(&x, w).unwrap();
            let (_, q_wider) = params.forward(&x, w + 1).unwrap();
            let max_diff = q_w
                .iter()
                .zip(&q_wider[..w])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(
                max_diff > 1e-6,
                "width {w}: truncated wider reweights coincide ({max_diff:e})"
            );
        }
    }

    #[test]
    fn unused_expert_parameters_never_influence_the_output() {
        let mut rng = StdRng::seed_from_u64(46);
        let params = DynamicLayerParams::init(toy_dims(), &mut rng);
        let x = random_input(&mut rng, 4, 6);
        for w in 1..4usize {
            let (base, _) = params.forward(&x, w).unwrap();
            let mut poisoned = params.clone();
            for e in &mut poisoned.experts[w..] {
                e.w.data_mut().fill(f64::NAN);
                e.b.data_mut().fill(f64::NAN);
            }
            let (same, _) = poisoned.forward(&x, w).unwrap();
            assert_eq!(base.data(), same.data(), "width {w}");
        }
    }

    #[test]
    fn gate_ablation_produces_independent_sigmoid_weights() {
        let mut rng = StdRng::seed_from_u64(47);
        let dims = LayerDims {
            reweight: ReweightKind::IndependentGate,
            ..toy_dims()
        };
        let params = DynamicLayerParams::init(dims, &mut rng);
        assert!(params.tac.is_none());
        let x = random_input(&mut rng, 4, 5);
        let (_, q4) = params.forward(&x, 4).unwrap();
        assert_eq!(q4.len(), 4);
        assert!(q4.iter().all(|&v| v > 0.0 && v < 1.0));
        // No communication between experts: gates are truncation-stable,
        // unlike TAC reweights.
        for w in 1..4usize {
            let (_, qw) = params.forward(&x, w).unwrap();
            for i in 0..w {
                assert!((qw[i] - q4[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_zero_and_overwidth_are_rejected() {
        let mut rng = StdRng::seed_from_u64(48);
        let params = DynamicLayerParams::init(toy_dims(), &mut rng);
        let x = random_input(&mut rng, 4, 3);
        assert!(matches!(
            params.forward(&x, 0),
            Err(Error::WidthOutOfRange { w: 0, max: 4 })
        ));
        assert!(matches!(
            params.forward(&x, 5),
            Err(Error::WidthOutOfRange { w: 5, max: 4 })
        ));
    }

    /// Independent straight-line recomputation of the whole layer with
    /// plain loops — no graph machinery — used as the oracle for the
    /// full-width forward.
    fn brute_force_forward(p: &DynamicLayerParams, x: &Tensor, w: usize) -> Vec<f64> {
        let dims = &p.dims;
        let (n, t_dim) = (dims.input, x.shape()[1]);
        let r = dims.rnn_hidden;
        let xd = x.data();
        let matvec = |m: &Tensor, v: &[f64]| -> Vec<f64> {
            let (rows, cols) = (m.shape()[0], m.shape()[1]);
            (0..rows)
                .map(|i| (0..cols).map(|j| m.data()[i * cols + j] * v[j]).sum())
                .collect()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        // GRU over time.
        let mut h = vec![0.0; r];
        let mut hidden = vec![vec![0.0; r]; t_dim];
        let gru = &p.gru_fwd;
        for t in 0..t_dim {
            let x_t: Vec<f64> = (0..n).map(|i| xd[i * t_dim + t]).collect();
            let z: Vec<f64> = {
                let a = matvec(&gru.wz, &x_t);
                let b = matvec(&gru.uz, &h);
                (0..r).map(|i| sig(a[i] + b[i] + gru.bz.data()[i])).collect()
            };
            let rg: Vec<f64> = {
                let a = matvec(&gru.wr, &x_t);
                let b = matvec(&gru.ur, &h);
                (0..r).map(|i| sig(a[i] + b[i] + gru.br.data()[i])).collect()
            };
            let rh: Vec<f64> = (0..r).map(|i| rg[i] * h[i]).collect();
            let c: Vec<f64> = {
                let a = matvec(&gru.wc, &x_t);
                let b = matvec(&gru.uc, &rh);
                (0..r)
                    .map(|i| (a[i] + b[i] + gru.bc.data()[i]).tanh())
                    .collect()
            };
            for i in 0..r {
                h[i] = (1.0 - z[i]) * h[i] + z[i] * c[i];
            }
            hidden[t] = h.clone();
        }
        // Experts.
        let h_feat = dims.reweight_features;
        let mut residuals = Vec::new();
        let mut pooled = Vec::new();
        for e in &p.experts[..w] {
            let mut a_rows = vec![vec![0.0; t_dim]; n];
            let mut g_pool = vec![0.0; h_feat];
            for t in 0..t_dim {
                let out: Vec<f64> = {
                    let mv = matvec(&e.w, &hidden[t]);
                    (0..e.b.numel()).map(|i| mv[i] + e.b.data()[i]).collect()
                };
                for (i, row) in a_rows.iter_mut().enumerate() {
                    row[t] = out[i];
                }
                for i in 0..h_feat {
                    g_pool[i] += out[n + i] / t_dim as f64;
                }
            }
            residuals.push(a_rows);
            pooled.push(g_pool);
        }
        // TAC.
        let tac = p.tac.as_ref().unwrap();
        let ht = dims.tac_hidden;
        let transformed: Vec<Vec<f64>> = pooled
            .iter()
            .map(|gp| {
                let mv = matvec(&tac.fc1.w, gp);
                (0..ht).map(|i| (mv[i] + tac.fc1.b.data()[i]).tanh()).collect()
            })
            .collect();
        let mean: Vec<f64> = (0..ht)
            .map(|i| transformed.iter().map(|v| v[i]).sum::<f64>() / w as f64)
            .collect();
        let m: Vec<f64> = {
            let mv = matvec(&tac.fc2.w, &mean);
            (0..ht).map(|i| (mv[i] + tac.fc2.b.data()[i]).tanh()).collect()
        };
        let logits: Vec<f64> = transformed
            .iter()
            .map(|hi| {
                let cat: Vec<f64> = hi.iter().chain(&m).copied().collect();
                let mv = matvec(&tac.fc3.w, &cat);
                mv[0] + tac.fc3.b.data()[0]
            })
            .collect();
        let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let q: Vec<f64> = exps.iter().map(|&e| e / denom).collect();
        // Weighted residual sum.
        let mut out = xd.to_vec();
        for (i, a_rows) in residuals.iter().enumerate() {
            for (row, vals) in a_rows.iter().enumerate() {
                for t in 0..t_dim {
                    out[row * t_dim + t] += q[i] * vals[t];
                }
            }
        }
        out
    }

    #[test]
    fn full_width_forward_matches_a_straight_line_recomputation() {
        let mut rng = StdRng::seed_from_u64(49);
        let params = DynamicLayerParams::init(toy_dims(), &mut rng);
        let x = random_input(&mut rng, 4, 6);
        let (out, _) = params.forward(&x, 4).unwrap();
        let brute = brute_force_forward(&params, &x, 4);
        let max_diff = out
            .data()
            .iter()
            .zip(&brute)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-12, "max diff {max_diff:e}");
    }

    #[test]
    fn layer_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(50);
        let dims = LayerDims {
            input: 3,
            reweight_features: 2,
            max_width: 2,
            rnn_hidden: 3,
            tac_hidden: 3,
            bidirectional: true,
            reweight: ReweightKind::Tac,
            layer_norm: true,
        };
        let params = DynamicLayerParams::init(dims.clone(), &mut rng);
        let x = random_input(&mut rng, 3, 4);
        let mut tensors = Vec::new();
        params.for_each_named("layer", &mut |_, t| tensors.push(t.clone()));
        let flat = flatten_params(tensors.iter());
        let err = grad_check(
            move |g, v| {
                let mut binder = FlatBinder::new(v);
                let bound = params.bind(g, &mut binder)?;
                let xv = g.constant(x.clone());
                let out = dynamic_layer_forward(g, xv, &bound, 2)?;
                g.l1_mean(out.output)
            },
            &flat,
            GRAD_CHECK_EPS,
        )
        .unwrap();
        assert!(err < 1e-4, "max rel error {err:e}");
    }

    #[test]
    fn flat_and_leaf_bindings_agree() {
        let mut rng = StdRng::seed_from_u64(51);
        let params = DynamicLayerParams::init(toy_dims(), &mut rng);
        let x = random_input(&mut rng, 4, 5);
        let (leaf_out, _) = params.forward(&x, 3).unwrap();

        let mut tensors = Vec::new();
        params.for_each_named("layer", &mut |_, t| tensors.push(t.clone()));
        let flat = flatten_params(tensors.iter());
        let mut g = Graph::new();
        let fv = g.leaf(flat);
        let mut binder = FlatBinder::new(fv);
        let bound = params.bind(&mut g, &mut binder).unwrap();
        assert_eq!(binder.consumed(), g.tensor(fv).numel());
        let xv = g.constant(x.clone());
        let out = dynamic_layer_forward(&mut g, xv, &bound, 3).unwrap();
        assert_eq!(g.value(out.output), leaf_out.data());
    }

    #[test]
    fn parameter_count_matches_stored_array_enumeration() {
        for kind in [ReweightKind::Tac, ReweightKind::IndependentGate] {
            for bidir in [false, true] {
                let dims = LayerDims {
                    bidirectional: bidir,
                    reweight: kind,
                    ..toy_dims()
                };
                let mut rng = StdRng::seed_from_u64(52);
                let params = DynamicLayerParams::init(dims.clone(), &mut rng);
                let mut stored = 0u64;
                params.for_each_named("layer", &mut |_, t| stored += t.numel() as u64);
                assert_eq!(
                    layer_param_count(&dims, dims.max_width),
                    stored,
                    "kind {kind:?} bidir {bidir}"
                );
            }
        }
    }

    #[test]
    fn parameter_count_strictly_increases_with_width() {
        let dims = toy_dims();
        for w in 1..4 {
            assert!(layer_param_count(&dims, w + 1) > layer_param_count(&dims, w));
        }
    }

    #[test]
    fn fc_mac_count_follows_the_definition() {
        assert_eq!(fc_macs(4, 3, 10), 120.0);
    }

    #[test]
    fn macs_grow_with_width_and_frames() {
        let dims = toy_dims();
        assert!(layer_macs(&dims, 2, 10) > layer_macs(&dims, 1, 10));
        assert!(layer_macs(&dims, 2, 20) > layer_macs(&dims, 2, 10));
        // Spot-check the dominant terms at width 1, 10 frames:
        // GRU 3*(5*4+5*5)*10 = 1350, expert 5*7*10 = 350,
        // TAC 1*(6*3)+36+1*12 = 66, weighted sum 1*4*10 = 40.
        assert_eq!(layer_macs(&dims, 1, 10), 1350.0 + 350.0 + 66.0 + 40.0);
    }
}
