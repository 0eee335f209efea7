//! The six-term unsupervised objective and its gradients.

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, grad_xy, grad_xy_adjoint, luminance, patch_means, Image, LUMA_WEIGHTS};

use super::LossWeights;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub target: f64,
    pub spa: f64,
    pub exp: f64,
    pub sparse: f64,
    pub tv: f64,
    pub cont: f64,
    /// Weighted sum.
    pub total: f64,
}

/// Everything the loss needs that depends only on the input image.
#[derive(Clone, Debug)]
pub struct LossContext {
    pub(crate) low: Image,
    pub(crate) gt: Image,
    low_dx: Image,
    low_dy: Image,
    low_contrast: f64,
    pub(crate) e_target: f64,
    patch: usize,
    pub(crate) weights: LossWeights,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-pixel gradient magnitude of a 1-channel image, plus its partials.
fn contrast(l: &Image) -> (Image, Image, Image) {
    let (gx, gy) = grad_xy(l);
    let m = Image::from_fn(l.height(), l.width(), 1, |y, x, _| gx.get(y, x, 0).hypot(gy.get(y, x, 0)));
    (m, gx, gy)
}

/// `clamp(low · E / (blur(L) + eps), 0, 1)` with the blurred luminance
/// broadcast over channels.
pub fn local_target(low: &Image, e_target: f64, sigma: f64, eps: f64) -> Result<Image> {
    let illum = gaussian_blur(&luminance(low)?, sigma)?;
    let mut gt = low.clone();
    let c = low.channels();
    for (p, px) in gt.data_mut().chunks_mut(c).enumerate() {
        let gain = e_target / (illum.data()[p] + eps);
        for v in px {
            *v = (*v * gain).clamp(0.0, 1.0);
        }
    }
    Ok(gt)
}

impl LossContext {
    pub fn new(low: &Image, e_target: f64, sigma: f64, eps: f64, patch: usize, weights: LossWeights) -> Result<Self> {
        if low.channels() != 3 {
            return Err(Error::Shape(format!("enhancement needs a 3-channel image, got {}", low.channels())));
        }
        if patch == 0 {
            return Err(Error::InvalidArgument("exposure patch size must be >= 1".into()));
        }
        let gt = local_target(low, e_target, sigma, eps)?;
        let (low_dx, low_dy) = grad_xy(low);
        let low_contrast = contrast(&luminance(low)?).0.mean();
        Ok(LossContext {
            low: low.clone(),
            gt,
            low_dx,
            low_dy,
            low_contrast,
            e_target,
            patch,
            weights,
        })
    }

    pub fn target_image(&self) -> &Image {
        &self.gt
    }
}

pub struct LossEval {
    pub terms: LossTerms,
    /// Gradients with respect to the output image, the smoothed field and
    /// the per-primitive softmax weights (only when requested).
    pub grad_out: Option<Image>,
    pub grad_smooth: Option<Image>,
    pub grad_probs: Option<Vec<f64>>,
}

/// Evaluates the weighted objective on the composed output `out`, the
/// field whose smoothness is penalized (`smooth`, any channel count) and
/// per-primitive softmax weights `probs` (`N x atoms`).
pub fn hybrid_loss(ctx: &LossContext, out: &Image, smooth: &Image, probs: &[f64], atoms: usize, want_grad: bool) -> Result<LossEval> {
    out.check_same_shape(&ctx.low, "enhanced output")?;
    if smooth.dims() != out.dims() {
        return Err(Error::Shape("smoothed field and output differ in size".into()));
    }
    if atoms == 0 || probs.len() % atoms != 0 {
        return Err(Error::Shape("softmax weights do not split into atom rows".into()));
    }
    let w = ctx.weights;
    let (h, wd) = out.dims();
    let n = out.data().len() as f64;
    let npix = (h * wd) as f64;
    let mut g_out = want_grad.then(|| Image::zeros(h, wd, 3));
    let mut t = LossTerms::default();

    // local adaptive target
    let mut acc = 0.0;
    for (i, (&o, &g)) in out.data().iter().zip(ctx.gt.data()).enumerate() {
        acc += (o - g).abs();
        if let Some(go) = g_out.as_mut() {
            go.data_mut()[i] += w.target * sign(o - g) / n;
        }
    }
    t.target = acc / n;

    // spatial consistency
    let (dx, dy) = grad_xy(out);
    let mut sx = Image::zeros(h, wd, 3);
    let mut sy = Image::zeros(h, wd, 3);
    let mut acc = 0.0;
    for i in 0..dx.data().len() {
        let ex = dx.data()[i] - ctx.low_dx.data()[i];
        let ey = dy.data()[i] - ctx.low_dy.data()[i];
        acc += ex.abs() + ey.abs();
        sx.data_mut()[i] = w.spa * sign(ex) / n;
        sy.data_mut()[i] = w.spa * sign(ey) / n;
    }
    t.spa = acc / n;
    if let Some(go) = g_out.as_mut() {
        for (a, b) in go.data_mut().iter_mut().zip(grad_xy_adjoint(&sx, &sy).data()) {
            *a += b;
        }
    }

    // exposure on luminance patch means
    let lum = luminance(out)?;
    let means = patch_means(&lum, ctx.patch)?;
    let z = means.data().len() as f64;
    t.exp = means.data().iter().map(|m| (m - ctx.e_target).powi(2)).sum::<f64>() / z;
    let mut g_lum = Image::zeros(h, wd, 1);
    let p = ctx.patch;
    for y in 0..h {
        for x in 0..wd {
            let (py, px) = (y / p, x / p);
            let count = ((h - py * p).min(p) * (wd - px * p).min(p)) as f64;
            let m = means.get(py, px, 0);
            g_lum.data_mut()[y * wd + x] = w.exp * 2.0 * (m - ctx.e_target) / (z * count);
        }
    }

    // perceptual contrast
    let (m_out, gx, gy) = contrast(&lum);
    let gap = ctx.low_contrast - m_out.mean();
    t.cont = gap.max(0.0);
    if want_grad && gap > 0.0 {
        let mut ux = Image::zeros(h, wd, 1);
        let mut uy = Image::zeros(h, wd, 1);
        for i in 0..m_out.data().len() {
            let m = m_out.data()[i];
            if m > 0.0 {
                ux.data_mut()[i] = -w.cont / npix * gx.data()[i] / m;
                uy.data_mut()[i] = -w.cont / npix * gy.data()[i] / m;
            }
        }
        for (a, b) in g_lum.data_mut().iter_mut().zip(grad_xy_adjoint(&ux, &uy).data()) {
            *a += b;
        }
    }
    if let Some(go) = g_out.as_mut() {
        for (px, &gl) in go.data_mut().chunks_mut(3).zip(g_lum.data()) {
            for (v, lw) in px.iter_mut().zip(LUMA_WEIGHTS) {
                *v += gl * lw;
            }
        }
    }

    // sparsity over the non-identity atoms
    let prims = probs.len() / atoms;
    t.sparse = if prims == 0 {
        0.0
    } else {
        probs.chunks(atoms).map(|r| r[1..].iter().sum::<f64>()).sum::<f64>() / prims as f64
    };
    let grad_probs = want_grad.then(|| {
        let mut g = vec![0.0; probs.len()];
        for row in g.chunks_mut(atoms) {
            for v in &mut row[1..] {
                *v = w.sparse / prims as f64;
            }
        }
        g
    });

    // smoothness of the gain
    let (ex, ey) = grad_xy(smooth);
    let ns = smooth.data().len() as f64;
    t.tv = (ex.data().iter().map(|v| v.abs()).sum::<f64>() + ey.data().iter().map(|v| v.abs()).sum::<f64>()) / ns;
    let grad_smooth = want_grad.then(|| {
        let ux = ex.map(|v| w.tv * sign(v) / ns);
        let uy = ey.map(|v| w.tv * sign(v) / ns);
        grad_xy_adjoint(&ux, &uy)
    });

    t.total = w.target * t.target + w.spa * t.spa + w.exp * t.exp + w.sparse * t.sparse + w.tv * t.tv + w.cont * t.cont;
    Ok(LossEval {
        terms: t,
        grad_out: g_out,
        grad_smooth,
        grad_probs,
    })
}
