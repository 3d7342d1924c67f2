//! Cross-domain mapping networks between magnitude and phase, and the
//! combined losses that add the mapping errors to the base losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{mse_loss, stack_rows, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CccConfig {
    pub hidden: usize,
    pub layers: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub phase_loss: PhaseLoss,
}

impl Default for CccConfig {
    fn default() -> Self {
        Self {
            hidden: 30,
            layers: 3,
            lambda1: 0.1,
            lambda2: 0.1,
            phase_loss: PhaseLoss::Weighted,
        }
    }
}

/// Form of every phase loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseLoss {
    /// mean(wrap(est − ref)²).
    Uniform,
    /// Σ|S_A|·wrap(est − ref)² / Σ|S_A|, weighted by the clean magnitude.
    Weighted,
}

impl PhaseLoss {
    pub fn label(self) -> &'static str {
        match self {
            PhaseLoss::Uniform => "uniform",
            PhaseLoss::Weighted => "weighted",
        }
    }

    /// Phase loss of `est` against `clean`; `mag` is the clean magnitude.
    pub fn loss<'t>(self, est: Var<'t>, clean: Var<'t>, mag: Var<'t>) -> Result<Var<'t>> {
        match self {
            PhaseLoss::Uniform => phase_mse(est, clean),
            PhaseLoss::Weighted => weighted_phase_mse(est, clean, mag),
        }
    }
}

impl std::str::FromStr for PhaseLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PhaseLoss::Uniform),
            "weighted" => Ok(PhaseLoss::Weighted),
            _ => Err(Error::Config(format!("unknown phase_loss `{s}` (uniform, weighted)"))),
        }
    }
}

impl CccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("mapping network needs at least one layer and hidden unit".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config(format!(
                "lambda weights must be non-negative, got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Domain {
    Magnitude,
    Phase,
}

#[derive(Debug, Clone)]
struct LstmLayer {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

/// Stacked LSTM over time frames with a per-frame linear head.
#[derive(Debug, Clone)]
struct MappingNet {
    input: Domain,
    hidden: usize,
    layers: Vec<LstmLayer>,
    head_w: ParamId,
    head_b: ParamId,
}

impl MappingNet {
    fn new(store: &mut ParamStore, name: &str, input: Domain, bins: usize, cfg: &CccConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = cfg.hidden;
        let bound = 1.0 / (h as f32).sqrt();
        let in_dim = match input {
            Domain::Magnitude => bins,
            Domain::Phase => 2 * bins,
        };
        let layers = (0..cfg.layers)
            .map(|l| {
                let d = if l == 0 { in_dim } else { h };
                LstmLayer {
                    w_ih: store.add(format!("{name}.l{l}.w_ih"), Tensor::uniform(&[4 * h, d], bound, rng)),
                    w_hh: store.add(format!("{name}.l{l}.w_hh"), Tensor::uniform(&[4 * h, h], bound, rng)),
                    b: store.add(format!("{name}.l{l}.b"), Tensor::zeros(&[4 * h])),
                }
            })
            .collect();
        let head_w = store.add(format!("{name}.head.w"), Tensor::zeros(&[bins, h]));
        let head_b = store.add(format!("{name}.head.b"), Tensor::zeros(&[bins]));
        Self {
            input,
            hidden: h,
            layers,
            head_w,
            head_b,
        }
    }

    /// `x [F, T]` to `[F, T]`.
    fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let feats = match self.input {
            Domain::Magnitude => x,
            Domain::Phase => x.cos().concat_rows(x.sin())?,
        };
        let mut seq = feats.transpose()?;
        let frames = seq.shape()[0];
        for layer in &self.layers {
            let (w_ih, w_hh, b) = (
                tape.param(store, layer.w_ih),
                tape.param(store, layer.w_hh),
                tape.param(store, layer.b),
            );
            let mut h = tape.constant(Tensor::zeros(&[self.hidden]));
            let mut c = tape.constant(Tensor::zeros(&[self.hidden]));
            let mut outs = Vec::with_capacity(frames);
            for t in 0..frames {
                let (h2, c2) = seq.row(t)?.lstm_cell(h, c, w_ih, w_hh, b)?;
                h = h2;
                c = c2;
                outs.push(h);
            }
            seq = stack_rows(&outs)?;
        }
        seq.linear(tape.param(store, self.head_w), Some(tape.param(store, self.head_b)))?
            .transpose()
    }
}

/// Mean squared wrapped difference: mean(wrap(a − b)²).
pub fn phase_mse<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let r = a.sub(b)?.wrap();
    let zero = a.tape().constant(Tensor::zeros(&r.shape()));
    mse_loss(r, zero)
}

/// Σ|w|·wrap(a − b)² / Σ|w|.
pub fn weighted_phase_mse<'t>(a: Var<'t>, b: Var<'t>, w: Var<'t>) -> Result<Var<'t>> {
    let r = a.sub(b)?.wrap();
    let w = w.abs();
    r.mul(r)?.mul(w)?.mean().mul(w.mean().add_scalar(f32::MIN_POSITIVE).recip())
}

/// Base magnitude and phase losses.
pub fn base_losses<'t>(est_a: Var<'t>, est_p: Var<'t>, clean_a: Var<'t>, clean_p: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    Ok((mse_loss(est_a, clean_a)?, phase_mse(est_p, clean_p)?))
}

/// Loss values for logging. Cross terms are absent during warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CccLosses {
    pub l_a: f64,
    pub l_p: f64,
    pub l_p_to_a: Option<f64>,
    pub l_a_to_p: Option<f64>,
    pub l_a_combined: f64,
    pub l_p_combined: f64,
}

pub struct CccTerms<'t> {
    pub values: CccLosses,
    pub l_a_combined: Var<'t>,
    pub l_p_combined: Var<'t>,
}

#[derive(Debug, Clone)]
pub struct Ccc {
    cfg: CccConfig,
    bins: usize,
    store: ParamStore,
    /// θ_A: magnitude → phase.
    a_to_p: MappingNet,
    /// θ_P: phase → magnitude.
    p_to_a: MappingNet,
}

impl Ccc {
    pub fn new(cfg: CccConfig, bins: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a_to_p = MappingNet::new(&mut store, "theta_a", Domain::Magnitude, bins, &cfg, &mut rng);
        let p_to_a = MappingNet::new(&mut store, "theta_p", Domain::Phase, bins, &cfg, &mut rng);
        Ok(Self {
            cfg,
            bins,
            store,
            a_to_p,
            p_to_a,
        })
    }

    pub fn config(&self) -> &CccConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check<'t>(&self, x: Var<'t>) -> Result<()> {
        let s = x.shape();
        if s.len() != 2 || s[0] != self.bins {
            return Err(Error::dim("mapping input [F, T]", &s, &[self.bins, 0]));
        }
        Ok(())
    }

    /// Magnitude `[F, T]` to a phase estimate `[F, T]`.
    pub fn map_a_to_p<'t>(&self, tape: &'t Tape, mag: Var<'t>) -> Result<Var<'t>> {
        self.check(mag)?;
        self.a_to_p.forward(tape, &self.store, mag)
    }

    /// Phase `[F, T]` to a magnitude estimate `[F, T]`.
    pub fn map_p_to_a<'t>(&self, tape: &'t Tape, phase: Var<'t>) -> Result<Var<'t>> {
        self.check(phase)?;
        self.p_to_a.forward(tape, &self.store, phase)
    }

    /// Base losses, plus whichever mapping cycles `cross` enables.
    pub fn losses<'t>(
        &self,
        tape: &'t Tape,
        est_a: Var<'t>,
        est_p: Var<'t>,
        clean_a: Var<'t>,
        clean_p: Var<'t>,
        cross: CrossMode,
    ) -> Result<CccTerms<'t>> {
        let phase = self.cfg.phase_loss;
        let l_a = mse_loss(est_a, clean_a)?;
        let l_p = phase.loss(est_p, clean_p, clean_a)?;
        let (a, p) = (l_a.item() as f64, l_p.item() as f64);
        let mut terms = CccTerms {
            values: CccLosses {
                l_a: a,
                l_p: p,
                l_a_combined: a,
                l_p_combined: p,
                ..CccLosses::default()
            },
            l_a_combined: l_a,
            l_p_combined: l_p,
        };
        if cross.p_to_a() {
            let l_pa = mse_loss(self.map_p_to_a(tape, est_p)?, clean_a)?;
            let pa = l_pa.item() as f64;
            terms.l_a_combined = l_a.add(l_pa.scale(self.cfg.lambda1 as f32))?;
            terms.values.l_p_to_a = Some(pa);
            terms.values.l_a_combined = a + self.cfg.lambda1 * pa;
        }
        if cross.a_to_p() {
            let l_ap = phase.loss(self.map_a_to_p(tape, est_a)?, clean_p, clean_a)?;
            let ap = l_ap.item() as f64;
            terms.l_p_combined = l_p.add(l_ap.scale(self.cfg.lambda2 as f32))?;
            terms.values.l_a_to_p = Some(ap);
            terms.values.l_p_combined = p + self.cfg.lambda2 * ap;
        }
        Ok(terms)
    }
}

/// Which cross-domain cycles contribute to the combined losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CrossMode {
    None,
    PToA,
    AToP,
    Both,
}

impl CrossMode {
    pub fn p_to_a(self) -> bool {
        matches!(self, CrossMode::PToA | CrossMode::Both)
    }

    pub fn a_to_p(self) -> bool {
        matches!(self, CrossMode::AToP | CrossMode::Both)
    }

    pub fn label(self) -> &'static str {
        match self {
            CrossMode::None => "none",
            CrossMode::PToA => "p2a",
            CrossMode::AToP => "a2p",
            CrossMode::Both => "both",
        }
    }
}

impl std::str::FromStr for CrossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CrossMode::None),
            "p2a" => Ok(CrossMode::PToA),
            "a2p" => Ok(CrossMode::AToP),
            "both" => Ok(CrossMode::Both),
            _ => Err(Error::Config(format!("unknown cross-loss mode `{s}` (none, p2a, a2p, both)"))),
        }
    }
}
