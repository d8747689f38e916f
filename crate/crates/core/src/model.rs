//! Full band-split separation model: per-band embedding FCs, a stack of
//! dynamic depth units (each one or two dynamic layers), per-band complex
//! mask FCs, and the analytic parameter/MACs cost model.
//!
//! Every forward pass takes a `(w, d)` pair and touches only the first `w`
//! expert branches of the first `d` depth units, so the full network and an
//! extracted `(w, d)` network produce bit-identical outputs.

use rand::Rng;

use crate::config::ModelConfig;
use crate::dynamic_layer::{
    dynamic_layer_forward, fc, fc_macs, layer_macs, layer_param_count, BoundFc, BoundLayer,
    DynamicLayerParams, FcParams,
};
use crate::error::{Error, Result};
use crate::signal::{frame_count, Spectrogram};
use crate::tensor::{Binder, Graph, LeafBinder, Tensor, Var};

/// A width/depth operating point: use `w` expert branches in each of the
/// first `d` depth units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubnetConfig {
    pub w: usize,
    pub d: usize,
}

impl SubnetConfig {
    pub fn new(w: usize, d: usize) -> Self {
        SubnetConfig { w, d }
    }

    /// The operating point that uses the entire network.
    pub fn full(config: &ModelConfig) -> Self {
        SubnetConfig {
            w: config.max_width,
            d: config.max_depth,
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.w == 0 || self.w > config.max_width {
            return Err(Error::WidthOutOfRange {
                w: self.w,
                max: config.max_width,
            });
        }
        if self.d == 0 || self.d > config.max_depth {
            return Err(Error::DepthOutOfRange {
                d: self.d,
                max: config.max_depth,
            });
        }
        Ok(())
    }
}

/// One depth unit: a sequence-modeling layer (over time, shared across
/// bands), plus a band-modeling layer (over bands, per frame) when the
/// model is dual-path.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthUnit {
    pub seq: DynamicLayerParams,
    pub band: Option<DynamicLayerParams>,
}

/// Every parameter of the full network, in canonical order:
/// band-split FCs, depth units (sequence layer then band layer), mask FCs.
#[derive(Debug, Clone, PartialEq)]
pub struct FullModelParams {
    pub config: ModelConfig,
    /// Per band: `[N, 2*band_width]` embedding.
    pub band_split: Vec<FcParams>,
    pub units: Vec<DepthUnit>,
    /// Per band: `[2*band_width, N]` producing a complex ratio mask.
    pub mask: Vec<FcParams>,
}

impl FullModelParams {
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let scheme = config.scheme()?;
        let dims = config.layer_dims();
        let n = config.embed_dim;
        let band_split = scheme
            .widths()
            .iter()
            .map(|&bw| FcParams::init(n, 2 * bw, rng))
            .collect();
        let units = (0..config.max_depth)
            .map(|_| DepthUnit {
                seq: DynamicLayerParams::init(dims.clone(), rng),
                band: config
                    .dual_path
                    .then(|| DynamicLayerParams::init(dims.clone(), rng)),
            })
            .collect();
        let mask = scheme
            .widths()
            .iter()
            .map(|&bw| FcParams::init(2 * bw, n, rng))
            .collect();
        Ok(FullModelParams {
            config,
            band_split,
            units,
            mask,
        })
    }

    /// All-zero parameters with the right shapes (checkpoint loading
    /// target).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let scheme = config.scheme()?;
        let dims = config.layer_dims();
        let n = config.embed_dim;
        let band_split = scheme
            .widths()
            .iter()
            .map(|&bw| FcParams::zeros(n, 2 * bw))
            .collect();
        let units = (0..config.max_depth)
            .map(|_| DepthUnit {
                seq: DynamicLayerParams::zeros(dims.clone()),
                band: config.dual_path.then(|| DynamicLayerParams::zeros(dims.clone())),
            })
            .collect();
        let mask = scheme
            .widths()
            .iter()
            .map(|&bw| FcParams::zeros(2 * bw, n))
            .collect();
        Ok(FullModelParams {
            config,
            band_split,
            units,
            mask,
        })
    }

    /// Visits every tensor with its canonical name, in binding order.
    pub fn for_each_named(&self, f: &mut impl FnMut(String, &Tensor)) {
        for (i, p) in self.band_split.iter().enumerate() {
            f(format!("band_split.{i}.w"), &p.w);
            f(format!("band_split.{i}.b"), &p.b);
        }
        for (d, unit) in self.units.iter().enumerate() {
            unit.seq.for_each_named(&format!("unit.{d}.seq"), f);
            if let Some(band) = &unit.band {
                band.for_each_named(&format!("unit.{d}.band"), f);
            }
        }
        for (i, p) in self.mask.iter().enumerate() {
            f(format!("mask.{i}.w"), &p.w);
            f(format!("mask.{i}.b"), &p.b);
        }
    }

    /// Mutable variant of [`FullModelParams::for_each_named`], same order.
    pub fn for_each_named_mut(&mut self, f: &mut impl FnMut(String, &mut Tensor)) {
        for (i, p) in self.band_split.iter_mut().enumerate() {
            f(format!("band_split.{i}.w"), &mut p.w);
            f(format!("band_split.{i}.b"), &mut p.b);
        }
        for (d, unit) in self.units.iter_mut().enumerate() {
            unit.seq.for_each_named_mut(&format!("unit.{d}.seq"), f);
            if let Some(band) = &mut unit.band {
                band.for_each_named_mut(&format!("unit.{d}.band"), f);
            }
        }
        for (i, p) in self.mask.iter_mut().enumerate() {
            f(format!("mask.{i}.w"), &mut p.w);
            f(format!("mask.{i}.b"), &mut p.b);
        }
    }

    /// Flat clone of every parameter tensor, in canonical order.
    pub fn collect_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.for_each_named(&mut |name, t| out.push((name, t.clone())));
        out
    }

    /// Total stored scalars across all tensors.
    pub fn total_param_numel(&self) -> u64 {
        let mut n = 0u64;
        self.for_each_named(&mut |_, t| n += t.numel() as u64);
        n
    }

    /// Binds every parameter into `g` in canonical order.
    pub fn bind<B: Binder>(&self, g: &mut Graph, binder: &mut B) -> Result<BoundModel> {
        let mut band_split = Vec::with_capacity(self.band_split.len());
        for (i, p) in self.band_split.iter().enumerate() {
            band_split.push(BoundFc {
                w: binder.bind(g, &format!("band_split.{i}.w"), &p.w)?,
                b: binder.bind(g, &format!("band_split.{i}.b"), &p.b)?,
            });
        }
        let mut units = Vec::with_capacity(self.units.len());
        for unit in &self.units {
            units.push(BoundUnit {
                seq: unit.seq.bind(g, binder)?,
                band: match &unit.band {
                    Some(b) => Some(b.bind(g, binder)?),
                    None => None,
                },
            });
        }
        let mut mask = Vec::with_capacity(self.mask.len());
        for (i, p) in self.mask.iter().enumerate() {
            mask.push(BoundFc {
                w: binder.bind(g, &format!("mask.{i}.w"), &p.w)?,
                b: binder.bind(g, &format!("mask.{i}.b"), &p.b)?,
            });
        }
        Ok(BoundModel {
            config: self.config.clone(),
            band_split,
            units,
            mask,
        })
    }

    /// Runs separation on every channel of `mix` with plain tensors (no
    /// gradients) and returns the estimated spectrogram.
    pub fn separate(&self, mix: &Spectrogram, subnet: SubnetConfig) -> Result<Spectrogram> {
        let mut out = Spectrogram::zeros(
            mix.num_channels(),
            mix.bins(),
            mix.frames(),
            mix.sample_rate(),
        );
        for c in 0..mix.num_channels() {
            let mut g = Graph::new();
            let mut binder = LeafBinder::new(false);
            let bound = self.bind(&mut g, &mut binder)?;
            let sep = bound.forward(&mut g, mix, c, subnet)?;
            out.channel_re_mut(c).copy_from_slice(g.value(sep.re));
            out.channel_im_mut(c).copy_from_slice(g.value(sep.im));
        }
        Ok(out)
    }
}

/// One depth unit's layers bound into a graph.
pub struct BoundUnit {
    pub seq: BoundLayer,
    pub band: Option<BoundLayer>,
}

/// The estimated spectrogram of one channel as graph variables, plus the
/// mixture constants it was computed from.
pub struct SeparatedChannel {
    /// `[bins, frames]` real part of the estimate.
    pub re: Var,
    /// `[bins, frames]` imaginary part of the estimate.
    pub im: Var,
}

/// The full model bound into one graph; supports any number of forward
/// passes at any `(w, d)`.
pub struct BoundModel {
    pub config: ModelConfig,
    band_split: Vec<BoundFc>,
    units: Vec<BoundUnit>,
    mask: Vec<BoundFc>,
}

impl BoundModel {
    /// Separates channel `channel` of `mix` at operating point `subnet`.
    ///
    /// Only the first `subnet.d` units and, inside each layer, the first
    /// `subnet.w` experts contribute nodes to the graph.
    pub fn forward(
        &self,
        g: &mut Graph,
        mix: &Spectrogram,
        channel: usize,
        subnet: SubnetConfig,
    ) -> Result<SeparatedChannel> {
        subnet.validate(&self.config)?;
        if mix.bins() != self.config.bins() {
            return Err(Error::InvalidShape {
                op: "model_forward",
                shape: vec![mix.bins(), mix.frames()],
                reason: format!("expected {} frequency bins", self.config.bins()),
            });
        }
        if channel >= mix.num_channels() {
            return Err(Error::InvalidShape {
                op: "model_forward",
                shape: vec![mix.num_channels()],
                reason: format!("channel {channel} out of range"),
            });
        }
        let scheme = self.config.scheme()?;
        let frames = mix.frames();
        let re = mix.channel_re(channel);
        let im = mix.channel_im(channel);

        // Per band: stacked [2*bw, T] mixture constant and its [N, T]
        // embedding.
        let mut mix_bands = Vec::with_capacity(scheme.num_bands());
        let mut h = Vec::with_capacity(scheme.num_bands());
        for (i, range) in (0..scheme.num_bands()).map(|i| (i, scheme.band(i))) {
            let bw = range.len();
            let mut data = Vec::with_capacity(2 * bw * frames);
            for f in range.clone() {
                data.extend_from_slice(&re[f * frames..(f + 1) * frames]);
            }
            for f in range {
                data.extend_from_slice(&im[f * frames..(f + 1) * frames]);
            }
            let xb = g.constant(Tensor::from_vec(vec![2 * bw, frames], data)?);
            h.push(fc(g, &self.band_split[i], xb)?);
            mix_bands.push(xb);
        }

        // First d depth units at width w.
        for unit in &self.units[..subnet.d] {
            for hb in h.iter_mut() {
                *hb = dynamic_layer_forward(g, *hb, &unit.seq, subnet.w)?.output;
            }
            if let Some(band_layer) = &unit.band {
                h = band_modeling_pass(g, &h, band_layer, subnet.w, frames)?;
            }
        }

        // Complex ratio mask per band, applied to the mixture.
        let mut est_re = Vec::with_capacity(scheme.num_bands());
        let mut est_im = Vec::with_capacity(scheme.num_bands());
        for i in 0..scheme.num_bands() {
            let bw = scheme.width(i);
            let m = fc(g, &self.mask[i], h[i])?;
            let mr = g.slice(m, 0, 0, bw)?;
            let mi = g.slice(m, 0, bw, bw)?;
            let xr = g.slice(mix_bands[i], 0, 0, bw)?;
            let xi = g.slice(mix_bands[i], 0, bw, bw)?;
            // (mr + i*mi) * (xr + i*xi)
            let rr = g.mul(mr, xr)?;
            let ii = g.mul(mi, xi)?;
            let ri = g.mul(mr, xi)?;
            let ir = g.mul(mi, xr)?;
            est_re.push(g.sub(rr, ii)?);
            est_im.push(g.add(ri, ir)?);
        }
        let re = g.concat(&est_re, 0)?;
        let im = g.concat(&est_im, 0)?;
        Ok(SeparatedChannel { re, im })
    }
}

/// Runs the band-modeling layer: gathers `[N, B]` per frame from the
/// per-band `[N, T]` states, processes the band axis as a sequence, and
/// scatters back to per-band `[N, T]`.
fn band_modeling_pass(
    g: &mut Graph,
    h: &[Var],
    layer: &BoundLayer,
    w: usize,
    frames: usize,
) -> Result<Vec<Var>> {
    let mut per_frame = Vec::with_capacity(frames);
    for t in 0..frames {
        let cols: Vec<Var> = h
            .iter()
            .map(|&hb| g.slice(hb, 1, t, 1))
            .collect::<Result<_>>()?;
        let x_t = g.concat(&cols, 1)?;
        per_frame.push(dynamic_layer_forward(g, x_t, layer, w)?.output);
    }
    let mut out = Vec::with_capacity(h.len());
    for b in 0..h.len() {
        let cols: Vec<Var> = per_frame
            .iter()
            .map(|&y| g.slice(y, 1, b, 1))
            .collect::<Result<_>>()?;
        out.push(g.concat(&cols, 1)?);
    }
    Ok(out)
}

/// Parameter count and multiply-accumulate count of one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cost {
    pub params: u64,
    /// Multiply-accumulates for the given number of analysis frames.
    pub macs: f64,
}

/// Analytic cost of running `(w, d)` on a sequence of `frames` frames.
///
/// Band-split and mask FCs are always counted (every operating point runs
/// them); depth units contribute `d` copies at width `w`. The sequence
/// layer runs once per band; the band-modeling layer, when present, once
/// per frame over a `bands`-step sequence.
pub fn model_costs(config: &ModelConfig, subnet: SubnetConfig, frames: usize) -> Result<Cost> {
    subnet.validate(config)?;
    let scheme = config.scheme()?;
    let dims = config.layer_dims();
    let n = config.embed_dim;
    let bands = scheme.num_bands();
    let mut params = 0u64;
    let mut macs = 0.0f64;
    for bw in scheme.widths() {
        let rows = 2 * bw;
        params += (rows * n + n) as u64; // band-split weight + bias
        params += (n * rows + rows) as u64; // mask weight + bias
        macs += fc_macs(rows, n, frames);
        macs += fc_macs(n, rows, frames);
    }
    for _ in 0..subnet.d {
        params += layer_param_count(&dims, subnet.w);
        macs += bands as f64 * layer_macs(&dims, subnet.w, frames);
        if config.dual_path {
            params += layer_param_count(&dims, subnet.w);
            macs += frames as f64 * layer_macs(&dims, subnet.w, bands);
        }
    }
    Ok(Cost { params, macs })
}

/// Cost of processing one second of audio: the frame count an STFT
/// produces for `sample_rate` samples at the configured hop.
pub fn model_costs_per_second(config: &ModelConfig, subnet: SubnetConfig) -> Result<Cost> {
    let frames = frame_count(config.sample_rate as usize, config.stft_hop);
    model_costs(config, subnet, frames)
}
