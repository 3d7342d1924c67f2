//! U-net building blocks over the time axis. Channels are frequency bins at
//! the input and output, and `C` hidden features inside.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

pub const PRELU_INIT: f32 = 0.25;
pub const COEFF_LR_SCALE: f32 = 0.01;

/// Sinusoidal step embedding: `[sin(m·ω_0), cos(m·ω_0), sin(m·ω_1), …]`
/// with ω_i = 10000^(−2i/dim). An odd `dim` ends in a constant √½ so the
/// norm stays independent of `m`.
pub fn step_embedding(m: usize, dim: usize) -> Vec<f32> {
    let pairs = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..pairs {
        let w = 10000f64.powf(-2.0 * i as f64 / dim.max(2) as f64);
        let a = m as f64 * w;
        out.push(a.sin() as f32);
        out.push(a.cos() as f32);
    }
    if dim % 2 == 1 {
        out.push(std::f32::consts::FRAC_1_SQRT_2);
    }
    out
}

/// Dilation of layer `l` (1-based) is 2^(l−1).
pub fn dilations(layers: usize) -> Vec<usize> {
    (0..layers).map(|l| 1usize << l).collect()
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    k: usize,
}

impl Conv {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cout: usize,
        cin: usize,
        k: usize,
        bias: bool,
        zero: bool,
        rng: &mut R,
    ) -> Self {
        let bound = if zero { 0.0 } else { 1.0 / ((cin * k) as f32).sqrt() };
        let w = store.add(format!("{name}.w"), Tensor::uniform(&[cout, cin, k], bound, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[cout])));
        Self { w, b, k }
    }

    fn pointwise<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cout: usize, cin: usize, zero: bool, rng: &mut R) -> Self {
        Self::new(store, name, cout, cin, 1, true, zero, rng)
    }

    fn apply<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, dilation: usize, causal: Option<bool>) -> Result<Var<'t>> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        let span = (self.k - 1) * dilation;
        match causal {
            Some(true) => x.conv1d(w, b, dilation, span, 0),
            Some(false) => x.conv1d(w, b, dilation, 0, span),
            None => x.conv1d_dilated(w, b, dilation),
        }
    }

    fn pw<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        self.apply(tape, store, x, 1, None)
    }
}

#[derive(Debug, Clone)]
struct Layer {
    causal: Conv,
    anti: Conv,
    slope: ParamId,
    dilation: usize,
}

/// Bi-dilated conv layers with the step embedding added after the first
/// conv, PReLU after each, a 1×1 output conv and a residual add.
#[derive(Debug, Clone)]
struct Core {
    layers: Vec<Layer>,
    emb_w: ParamId,
    emb_b: ParamId,
    out: Conv,
}

impl Core {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c: usize, k: usize, layers: usize, rng: &mut R) -> Self {
        let layers = dilations(layers)
            .into_iter()
            .enumerate()
            .map(|(l, d)| Layer {
                causal: Conv::new(store, &format!("{name}.l{l}.causal"), c, c, k, true, false, rng),
                anti: Conv::new(store, &format!("{name}.l{l}.anti"), c, c, k, false, false, rng),
                slope: store.add(format!("{name}.l{l}.prelu"), Tensor::full(&[c], PRELU_INIT)),
                dilation: d,
            })
            .collect();
        let bound = 1.0 / (c as f32).sqrt();
        let emb_w = store.add(format!("{name}.emb.w"), Tensor::uniform(&[c, c], bound, rng));
        let emb_b = store.add(format!("{name}.emb.b"), Tensor::zeros(&[c]));
        let out = Conv::pointwise(store, &format!("{name}.out"), c, c, false, rng);
        Self { layers, emb_w, emb_b, out }
    }

    fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, emb: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer.causal.apply(tape, store, h, layer.dilation, Some(true))?;
            let b = layer.anti.apply(tape, store, h, layer.dilation, Some(false))?;
            h = a.add(b)?;
            if l == 0 {
                let e = emb.linear(tape.param(store, self.emb_w), Some(tape.param(store, self.emb_b)))?;
                h = h.add_per_row(e)?;
            }
            h = h.prelu(tape.param(store, layer.slope))?;
        }
        x.add(self.out.pw(tape, store, h)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DiffusionBlock {
    core: Core,
    skip: Conv,
    res: Conv,
}

impl DiffusionBlock {
    /// Returns `(downsampled, skip)`.
    fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, emb: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let r = self.core.forward(tape, store, x, emb)?;
        let skip = self.skip.pw(tape, store, r)?;
        let down = self.res.pw(tape, store, r)?.downsample2()?;
        Ok((down, skip))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ReverseBlock {
    core: Core,
    speech: Conv,
    noise: Conv,
    pub(crate) gamma: ParamId,
    pub(crate) theta: ParamId,
}

/// One magnitude or phase network.
#[derive(Debug, Clone)]
pub(crate) struct PathNet {
    channels: usize,
    input: Conv,
    down: Vec<DiffusionBlock>,
    latent: Conv,
    pub(crate) up: Vec<ReverseBlock>,
}

pub(crate) struct PathOut<'t> {
    pub speech: Var<'t>,
    pub noise: Var<'t>,
    pub latent: Var<'t>,
}

pub(crate) struct PathShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub channels: usize,
    pub kernel: usize,
    pub layers: usize,
    pub blocks: usize,
}

impl PathNet {
    /// `coeffs[m-1] = (γ_m, θ_m)` initial values for reverse block `m`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        s: &PathShape,
        coeffs: &[(f64, f64)],
        rng: &mut R,
    ) -> Self {
        let c = s.channels;
        let input = Conv::pointwise(store, &format!("{name}.input"), c, s.in_channels, false, rng);
        let down = (0..s.blocks)
            .map(|i| {
                let n = format!("{name}.down{i}");
                DiffusionBlock {
                    core: Core::new(store, &n, c, s.kernel, s.layers, rng),
                    skip: Conv::pointwise(store, &format!("{n}.skip"), c, c, false, rng),
                    res: Conv::pointwise(store, &format!("{n}.res"), c, c, false, rng),
                }
            })
            .collect();
        let latent = Conv::pointwise(store, &format!("{name}.latent"), c, c, false, rng);
        let up = (0..s.blocks)
            .map(|i| {
                let n = format!("{name}.up{i}");
                let (g, t) = coeffs.get(i).copied().unwrap_or((1.0, 0.0));
                ReverseBlock {
                    core: Core::new(store, &n, c, s.kernel, s.layers, rng),
                    speech: Conv::pointwise(store, &format!("{n}.speech"), s.out_channels, c, true, rng),
                    noise: Conv::pointwise(store, &format!("{n}.noise"), s.out_channels, c, true, rng),
                    gamma: store.add_scaled(format!("{n}.gamma"), Tensor::scalar(g as f32), COEFF_LR_SCALE),
                    theta: store.add_scaled(format!("{n}.theta"), Tensor::scalar(t as f32), COEFF_LR_SCALE),
                }
            })
            .collect();
        Self {
            channels: c,
            input,
            down,
            latent,
            up,
        }
    }

    /// `x [in_channels, T]` with `T` divisible by 2^blocks.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, m: usize) -> Result<PathOut<'t>> {
        let full = x.shape()[1];
        let emb = tape.constant(Tensor::new(&[self.channels], step_embedding(m, self.channels))?);
        let mut h = self.input.pw(tape, store, x)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for block in &self.down {
            let (d, s) = block.forward(tape, store, h, emb)?;
            skips.push(s);
            h = d;
        }
        let latent = self.latent.pw(tape, store, h)?;
        h = latent;
        let mut speech: Option<Var<'t>> = None;
        let mut noise: Option<Var<'t>> = None;
        for (block, skip) in self.up.iter().zip(skips.iter().rev()) {
            let u = h.upsample2()?.add(*skip)?;
            h = block.core.forward(tape, store, u, emb)?;
            let factor = full / h.shape()[1];
            let sp = block.speech.pw(tape, store, h)?;
            let no = block.noise.pw(tape, store, h)?;
            let (sp, no) = if factor > 1 {
                (sp.upsample(factor)?, no.upsample(factor)?)
            } else {
                (sp, no)
            };
            speech = Some(match speech {
                Some(acc) => acc.add(sp)?,
                None => sp,
            });
            noise = Some(match noise {
                Some(acc) => acc.add(no)?,
                None => no,
            });
        }
        match (speech, noise) {
            (Some(speech), Some(noise)) => Ok(PathOut { speech, noise, latent }),
            _ => Err(crate::Error::Config("network has no blocks".into())),
        }
    }
}

/// Closed-form parameter count of one path network.
pub fn path_param_count(in_channels: usize, out_channels: usize, c: usize, k: usize, layers: usize, blocks: usize) -> usize {
    let pw = |cout: usize, cin: usize| cout * cin + cout;
    let core = layers * (2 * c * c * k + c + c) + (c * c + c) + pw(c, c);
    let down = core + 2 * pw(c, c);
    let up = core + 2 * pw(out_channels, c) + 2;
    pw(c, in_channels) + blocks * (down + up) + pw(c, c)
}
