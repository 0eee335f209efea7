use rayon::prelude::*;

use super::loss::{hybrid_loss, LossContext, LossEval};
use super::{normalize_omega, softmax_rows, EnhanceConfig, SmoothField, COVER_EPS, GAIN_EPS};
use crate::dict::{apply_curve, apply_curve_grad, Dictionary};
use crate::error::{Error, Result};
use crate::field::GaussianSet;
use crate::image::Image;
use crate::raster::SplatPlan;

/// The full differentiable map from (logits, bias) to the loss, with the
/// geometry's compositing weights precomputed.
#[derive(Clone, Debug)]
pub struct Chain {
    plan: SplatPlan,
    atoms: usize,
    order: usize,
    dict: Vec<f64>,
    smooth: SmoothField,
    ctx: LossContext,
}

/// Intermediate buffers of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub probs: Vec<f64>,
    pub gamma: Image,
    pub eta: Image,
    /// `I·η + b` before clamping.
    pub pre: Image,
    pub out: Image,
}

#[derive(Clone, Debug)]
pub struct ChainGrads {
    pub logits: Vec<f64>,
    pub bias: [f64; 3],
}

impl Chain {
    pub fn new(model: &GaussianSet, dict: &Dictionary, img: &Image, cfg: &EnhanceConfig) -> Result<Self> {
        let geo = model.lifted_geometry();
        let plan = SplatPlan::build(&geo, img.dims(), cfg.mode)?;
        let (h, w) = img.dims();
        let ctx = LossContext::new(img, cfg.e_target, cfg.sigma_for(h, w), cfg.eps, cfg.patch, cfg.weights)?;
        Ok(Chain {
            plan,
            atoms: dict.atom_count(),
            order: dict.order(),
            dict: dict.matrix(),
            smooth: cfg.smooth,
            ctx,
        })
    }

    pub fn primitive_count(&self) -> usize {
        self.plan.primitive_count()
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn context(&self) -> &LossContext {
        &self.ctx
    }

    /// Per-primitive curve coefficients `Σ_k p_ik D_k` (`N x P`).
    fn mix_atoms(&self, probs: &[f64]) -> Vec<f64> {
        let p = self.order;
        let mut mixed = vec![0.0; self.plan.primitive_count() * p];
        for (m, row) in mixed.chunks_mut(p).zip(probs.chunks(self.atoms)) {
            for (k, &pk) in row.iter().enumerate() {
                for (mp, dkp) in m.iter_mut().zip(&self.dict[k * p..(k + 1) * p]) {
                    *mp += pk * dkp;
                }
            }
        }
        mixed
    }

    /// Normalized weight map Ω for the given softmax weights.
    pub fn omega(&self, probs: &[f64]) -> Result<Image> {
        let raw = self.plan.render(probs, self.atoms)?;
        Ok(normalize_omega(&raw, self.plan.accum_opacity()))
    }

    /// Forward pass. Because γ is linear in Ω, the atoms are mixed per
    /// primitive first and only the `P` coefficients are splatted.
    pub fn forward(&self, logits: &[f64], bias: [f64; 3]) -> Result<Forward> {
        if logits.len() != self.plan.primitive_count() * self.atoms {
            return Err(Error::Shape(format!(
                "{} logits for {} primitives x {} atoms",
                logits.len(),
                self.plan.primitive_count(),
                self.atoms
            )));
        }
        let low = &self.ctx.low;
        let (h, w) = low.dims();
        let p = self.order;
        let probs = softmax_rows(logits, self.atoms);
        let mut gamma = self.plan.render(&self.mix_atoms(&probs), p)?;
        let accum = self.plan.accum_opacity();
        let mut eta = Image::zeros(h, w, 3);
        gamma
            .data_mut()
            .par_chunks_mut(p)
            .zip(eta.data_mut().par_chunks_mut(3))
            .enumerate()
            .for_each(|(px, (g, e))| {
                let a = accum.data()[px];
                if a >= COVER_EPS {
                    g.iter_mut().for_each(|v| *v /= a);
                } else {
                    g.iter_mut().for_each(|v| *v = 0.0);
                }
                for (c, ec) in e.iter_mut().enumerate() {
                    let v = low.data()[px * 3 + c];
                    *ec = (apply_curve(v, g) + GAIN_EPS) / (v + GAIN_EPS);
                }
            });
        let mut pre = low.clone();
        for (i, (v, &e)) in pre.data_mut().iter_mut().zip(eta.data()).enumerate() {
            *v = *v * e + bias[i % 3];
        }
        let out = pre.clamp01();
        Ok(Forward {
            probs,
            gamma,
            eta,
            pre,
            out,
        })
    }

    /// Loss at (logits, bias) and, when asked, its gradient.
    pub fn evaluate(&self, logits: &[f64], bias: [f64; 3], want_grad: bool) -> Result<(LossEval, Option<ChainGrads>)> {
        let fwd = self.forward(logits, bias)?;
        let smooth = match self.smooth {
            SmoothField::Coefficients => &fwd.gamma,
            SmoothField::Gain => &fwd.eta,
        };
        let eval = hybrid_loss(&self.ctx, &fwd.out, smooth, &fwd.probs, self.atoms, want_grad)?;
        if !want_grad {
            return Ok((eval, None));
        }
        let grads = self.backward(&fwd, &eval);
        Ok((eval, Some(grads)))
    }

    fn backward(&self, fwd: &Forward, eval: &LossEval) -> ChainGrads {
        let low = &self.ctx.low;
        let p = self.order;
        let atoms = self.atoms;
        let g_out = eval.grad_out.as_ref().unwrap();
        let g_smooth = eval.grad_smooth.as_ref().unwrap();
        let smooth_gain = self.smooth == SmoothField::Gain;

        // through the clamp
        let d_pre: Vec<f64> = fwd
            .pre
            .data()
            .iter()
            .zip(g_out.data())
            .map(|(&v, &g)| if (0.0..=1.0).contains(&v) { g } else { 0.0 })
            .collect();
        let mut bias = [0.0; 3];
        for (i, &d) in d_pre.iter().enumerate() {
            bias[i % 3] += d;
        }

        let accum = self.plan.accum_opacity();
        let mut d_raw = Image::zeros(low.height(), low.width(), p);
        d_raw
            .data_mut()
            .par_chunks_mut(p)
            .enumerate()
            .for_each(|(px, d_raw_px)| {
                let a = accum.data()[px];
                if a < COVER_EPS {
                    return;
                }
                let g = &fwd.gamma.data()[px * p..][..p];
                let mut d_gamma = if smooth_gain {
                    vec![0.0; p]
                } else {
                    g_smooth.data()[px * p..][..p].to_vec()
                };
                let mut dv_da = vec![0.0; p];
                for c in 0..3 {
                    let i = px * 3 + c;
                    let v = low.data()[i];
                    let mut d_eta = d_pre[i] * v;
                    if smooth_gain {
                        d_eta += g_smooth.data()[i];
                    }
                    if d_eta == 0.0 {
                        continue;
                    }
                    apply_curve_grad(v, g, &mut dv_da);
                    let d_vp = d_eta / (v + GAIN_EPS);
                    for (dg, dv) in d_gamma.iter_mut().zip(&dv_da) {
                        *dg += d_vp * dv;
                    }
                }
                for (d, dg) in d_raw_px.iter_mut().zip(&d_gamma) {
                    *d = dg / a;
                }
            });

        let d_mixed = self.plan.backward_attrs(&d_raw).expect("plan dims match");
        let mut d_probs = eval.grad_probs.clone().unwrap();
        for (dp, dm) in d_probs.chunks_mut(atoms).zip(d_mixed.chunks(p)) {
            for (k, d) in dp.iter_mut().enumerate() {
                *d += dm.iter().zip(&self.dict[k * p..(k + 1) * p]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let mut d_logits = vec![0.0; d_probs.len()];
        for ((dl, dp), pr) in d_logits
            .chunks_mut(atoms)
            .zip(d_probs.chunks(atoms))
            .zip(fwd.probs.chunks(atoms))
        {
            let dot: f64 = dp.iter().zip(pr).map(|(a, b)| a * b).sum();
            for k in 0..atoms {
                dl[k] = pr[k] * (dp[k] - dot);
            }
        }
        ChainGrads { logits: d_logits, bias }
    }
}
