//! Stage two: zero-shot enhancement through the frozen Gaussian field.
//!
//! Every primitive carries logits over the dictionary atoms. Their softmax
//! is splatted through the frozen geometry into a per-pixel weight map Ω,
//! which mixes the atoms into per-pixel curve coefficients γ. The curve
//! applied to the input gives the realized gain η, and the output is
//! `clamp(I·η + b)`. Logits and the bias `b` are fitted per image against
//! an unsupervised objective.

mod chain;
mod dump;
mod gradcheck;
mod loss;

use std::io::Write;

use crate::dict::{apply_curve, Dictionary};
use crate::error::{Error, Result};
use crate::field::GaussianSet;
use crate::image::{luminance, Image};
use crate::optim::{Adam, Schedule};
use crate::raster::{BlendMode, SplatPlan};

pub use chain::{Chain, Forward};
pub use dump::{save_eta_raw, save_gain_png, save_omega_pngs};
pub use gradcheck::{chain_gradcheck, chain_gradcheck_with};
pub use loss::{hybrid_loss, local_target, LossContext, LossEval, LossTerms};

/// Logit temperature used by [`init_logits`].
pub const INIT_TAU: f64 = 2.0;
/// Guard in the realized-gain ratio.
pub const GAIN_EPS: f64 = 1e-4;
/// Accumulated opacity below which a pixel counts as uncovered.
pub const COVER_EPS: f64 = 1e-4;
/// Bound on the black-level offset.
pub const BIAS_BOUND: f64 = 0.1;
/// Logit that makes the identity atom's softmax weight exactly one.
pub const ONE_HOT_LOGIT: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub target: f64,
    pub spa: f64,
    pub exp: f64,
    pub sparse: f64,
    pub tv: f64,
    pub cont: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            target: 0.01,
            spa: 1.0,
            exp: 6.0,
            sparse: 0.01,
            tv: 3.0,
            cont: 0.4,
        }
    }
}

impl LossWeights {
    fn as_array(&self) -> [f64; 6] {
        [self.target, self.spa, self.exp, self.sparse, self.tv, self.cont]
    }
}

/// Field whose total variation the smoothness term penalizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SmoothField {
    /// The splatted curve coefficients γ.
    #[default]
    Coefficients,
    /// The realized per-channel gain η.
    Gain,
}

impl std::str::FromStr for SmoothField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" | "coefficients" => Ok(SmoothField::Coefficients),
            "eta" | "gain" => Ok(SmoothField::Gain),
            _ => Err(Error::Config(format!("unknown smoothness field '{s}' (expected gamma or eta)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhanceConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`.
    pub lr_min_fraction: f64,
    pub e_target: f64,
    /// Illumination blur; `None` means `0.05 · min(H, W)`.
    pub blur_sigma: Option<f64>,
    /// Denominator guard of the local target.
    pub eps: f64,
    pub weights: LossWeights,
    /// Exposure patch side.
    pub patch: usize,
    pub smooth: SmoothField,
    pub mode: BlendMode,
    /// Stage two draws no random numbers; the seed is carried for provenance.
    pub seed: u64,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig {
            iterations: 50_000,
            lr: 0.001,
            lr_min_fraction: 0.05,
            e_target: 0.6,
            blur_sigma: None,
            eps: 1e-3,
            weights: LossWeights::default(),
            patch: 16,
            smooth: SmoothField::Coefficients,
            mode: BlendMode::Alpha,
            seed: 0,
        }
    }
}

impl EnhanceConfig {
    /// 2,000 iterations.
    pub fn desk() -> Self {
        EnhanceConfig {
            iterations: 2_000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.lr_min_fraction) {
            return bad("lr_min_fraction must lie in [0, 1]".into());
        }
        if !(self.e_target > 0.0 && self.e_target < 1.0) {
            return bad(format!("E_target must lie in (0, 1), got {}", self.e_target));
        }
        if let Some(s) = self.blur_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("blur sigma must be positive, got {s}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        if self.weights.as_array().iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("loss weights must be nonnegative".into());
        }
        if self.patch == 0 {
            return bad("patch size must be >= 1".into());
        }
        Ok(())
    }

    pub fn sigma_for(&self, height: usize, width: usize) -> f64 {
        self.blur_sigma.unwrap_or(0.05 * height.min(width) as f64).max(1e-3)
    }
}

/// Per-pixel curve coefficients, realized gain and black-level offset.
#[derive(Clone, Debug, PartialEq)]
pub struct GainField {
    /// `P` channels.
    pub gamma: Image,
    /// One gain per color channel.
    pub eta: Image,
    pub bias: [f64; 3],
}

/// `1 - L`: high where the input is dark.
pub fn attention_map(img: &Image) -> Result<Image> {
    Ok(luminance(img)?.map(|l| 1.0 - l))
}

/// Row-wise softmax of `N x atoms` logits.
pub fn softmax_rows(logits: &[f64], atoms: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(atoms) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Logits that put all weight on the identity atom.
pub fn identity_logits(primitives: usize, atoms: usize) -> Vec<f64> {
    let mut l = vec![0.0; primitives * atoms];
    for row in l.chunks_mut(atoms) {
        row[0] = ONE_HOT_LOGIT;
    }
    l
}

fn check_model(set: &GaussianSet, img: &Image) -> Result<()> {
    if !set.is_frozen() {
        return Err(Error::InvalidArgument("model geometry must be frozen before enhancement".into()));
    }
    let dims = set
        .finest_dims()
        .ok_or_else(|| Error::InvalidArgument("model has no levels".into()))?;
    if dims != img.dims() {
        return Err(Error::Shape(format!(
            "model was fitted at {}x{}, image is {}x{}",
            dims.1,
            dims.0,
            img.width(),
            img.height()
        )));
    }
    if img.channels() != 3 {
        return Err(Error::Shape(format!("enhancement needs a 3-channel image, got {}", img.channels())));
    }
    Ok(())
}

/// Attention-biased starting logits, one row of `K+1` per primitive
/// (coarse levels first): atom 0 gets `(1-m)τ`, every other atom `mτ/K`,
/// with `m` the attention map sampled at the primitive center.
pub fn init_logits(set: &GaussianSet, img: &Image, dict: &Dictionary) -> Result<Vec<f64>> {
    check_model(set, img)?;
    let att = attention_map(img)?;
    let geo = set.lifted_geometry();
    let atoms = dict.atom_count();
    let k = dict.k() as f64;
    let mut logits = vec![0.0; geo.len() * atoms];
    let mut m = [0.0];
    for (row, mu) in logits.chunks_mut(atoms).zip(&geo.mu) {
        att.sample_bilinear(mu[1], mu[0], &mut m);
        row[0] = (1.0 - m[0]) * INIT_TAU;
        for v in &mut row[1..] {
            *v = m[0] * INIT_TAU / k;
        }
    }
    Ok(logits)
}

/// Normalizes raw splatted weights by the accumulated opacity; uncovered
/// pixels become one-hot on the identity atom.
pub fn normalize_omega(raw: &Image, accum: &Image) -> Image {
    let atoms = raw.channels();
    let mut omega = raw.clone();
    for (px, &a) in omega.data_mut().chunks_mut(atoms).zip(accum.data()) {
        if a >= COVER_EPS {
            px.iter_mut().for_each(|v| *v /= a);
        } else {
            px.iter_mut().for_each(|v| *v = 0.0);
            px[0] = 1.0;
        }
    }
    omega
}

/// Splats the softmaxed logits through the model's geometry at `dims`.
/// Returns the normalized weight map Ω (`K+1` channels) and the
/// accumulated opacity.
pub fn splat_weights(set: &GaussianSet, logits: &[f64], atoms: usize, dims: (usize, usize), mode: BlendMode) -> Result<(Image, Image)> {
    let geo = set.lifted_geometry();
    if atoms == 0 || logits.len() != geo.len() * atoms {
        return Err(Error::Shape(format!(
            "{} logits for {} primitives x {atoms} atoms",
            logits.len(),
            geo.len()
        )));
    }
    let plan = SplatPlan::build(&geo, dims, mode)?;
    let raw = plan.render(&softmax_rows(logits, atoms), atoms)?;
    Ok((normalize_omega(&raw, plan.accum_opacity()), plan.accum_opacity().clone()))
}

/// γ = Σ_k Ω_k D_k, then per channel `η = (T(v; γ) + 1e-4) / (v + 1e-4)`.
pub fn synthesize_gain(omega: &Image, dict: &Dictionary, img: &Image) -> Result<GainField> {
    if omega.channels() != dict.atom_count() {
        return Err(Error::Incompatible(format!(
            "weight map has {} channels, dictionary has {} atoms",
            omega.channels(),
            dict.atom_count()
        )));
    }
    if omega.dims() != img.dims() {
        return Err(Error::Shape("weight map and image differ in size".into()));
    }
    let p = dict.order();
    let d = dict.matrix();
    let (h, w) = img.dims();
    let c = img.channels();
    let mut gamma = Image::zeros(h, w, p);
    let mut eta = Image::zeros(h, w, c);
    for px in 0..h * w {
        let om = &omega.data()[px * omega.channels()..][..omega.channels()];
        let g = &mut gamma.data_mut()[px * p..][..p];
        for (k, &wk) in om.iter().enumerate() {
            for (gp, dkp) in g.iter_mut().zip(&d[k * p..(k + 1) * p]) {
                *gp += wk * dkp;
            }
        }
        let g = gamma.data()[px * p..][..p].to_vec();
        for ch in 0..c {
            let v = img.data()[px * c + ch];
            eta.data_mut()[px * c + ch] = (apply_curve(v, &g) + GAIN_EPS) / (v + GAIN_EPS);
        }
    }
    Ok(GainField {
        gamma,
        eta,
        bias: [0.0; 3],
    })
}

/// `clamp(I · η + b, 0, 1)`.
pub fn compose_output(img: &Image, gain: &GainField) -> Result<Image> {
    img.check_same_shape(&gain.eta, "gain map")?;
    let c = img.channels();
    let mut out = img.clone();
    for (i, (o, &e)) in out.data_mut().iter_mut().zip(gain.eta.data()).enumerate() {
        let b = if c == 3 { gain.bias[i % 3] } else { gain.bias[0] };
        *o = (*o * e + b).clamp(0.0, 1.0);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Diagnostics {
    /// Weighted loss per iteration, evaluated before each step.
    pub loss_trace: Vec<f64>,
    /// Terms at the returned parameters.
    pub final_terms: LossTerms,
    pub input_mean_luminance: f64,
    pub output_mean_luminance: f64,
    /// Logits were taken from the model rather than initialized.
    pub warm_start: bool,
}

#[derive(Clone, Debug)]
pub struct EnhanceResult {
    pub output: Image,
    pub gain: GainField,
    /// Normalized weight map at the returned parameters.
    pub omega: Image,
    pub logits: Vec<f64>,
    pub diagnostics: Diagnostics,
}

pub fn enhance(img: &Image, model: &GaussianSet, dict: &Dictionary, cfg: &EnhanceConfig) -> Result<EnhanceResult> {
    enhance_with_log(img, model, dict, cfg, None)
}

/// Runs the optimization, optionally streaming per-iteration loss terms as CSV.
pub fn enhance_with_log(
    img: &Image,
    model: &GaussianSet,
    dict: &Dictionary,
    cfg: &EnhanceConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<EnhanceResult> {
    cfg.validate()?;
    check_model(model, img)?;
    dict.check_compatible(model.enh_atoms())?;
    let chain = Chain::new(model, dict, img, cfg)?;
    let atoms = dict.atom_count();
    let (logits, warm_start) = match model.lifted_enh_logits() {
        Some((_, l)) => (l, true),
        None => (init_logits(model, img, dict)?, false),
    };
    let n_logits = logits.len();
    let mut params = logits;
    params.extend([0.0; 3]);
    let mut adam = Adam::new(
        params.len(),
        cfg.lr,
        Schedule::Cosine {
            min_fraction: cfg.lr_min_fraction,
            total_steps: cfg.iterations,
        },
    );
    if let Some(l) = log.as_deref_mut() {
        writeln!(l, "iteration,total,target,spa,exp,sparse,tv,cont").map_err(|e| Error::io("log", e))?;
    }
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (logits, bias) = params.split_at(n_logits);
        let bias = [bias[0], bias[1], bias[2]];
        let (eval, grads) = chain.evaluate(logits, bias, true)?;
        let t = eval.terms;
        trace.push(t.total);
        if let Some(l) = log.as_deref_mut() {
            writeln!(l, "{it},{},{},{},{},{},{},{}", t.total, t.target, t.spa, t.exp, t.sparse, t.tv, t.cont)
                .map_err(|e| Error::io("log", e))?;
        }
        if (it + 1) % 500 == 0 {
            log::info!("enhance iteration {} loss {:.5}", it + 1, t.total);
        }
        let grads = grads.expect("gradients were requested");
        let mut g = grads.logits;
        g.extend(grads.bias);
        adam.step(&mut params, &g)?;
        for b in &mut params[n_logits..] {
            *b = b.clamp(-BIAS_BOUND, BIAS_BOUND);
        }
    }
    let (logits, bias) = params.split_at(n_logits);
    let bias = [bias[0], bias[1], bias[2]];
    let fwd = chain.forward(logits, bias)?;
    let (eval, _) = chain.evaluate(logits, bias, false)?;
    let omega = chain.omega(&fwd.probs)?;
    let input_mean_luminance = luminance(img)?.mean();
    let output_mean_luminance = luminance(&fwd.out)?.mean();
    debug_assert_eq!(atoms, omega.channels());
    Ok(EnhanceResult {
        output: fwd.out,
        gain: GainField {
            gamma: fwd.gamma,
            eta: fwd.eta,
            bias,
        },
        omega,
        logits: logits.to_vec(),
        diagnostics: Diagnostics {
            loss_trace: trace,
            final_terms: eval.terms,
            input_mean_luminance,
            output_mean_luminance,
            warm_start,
        },
    })
}
