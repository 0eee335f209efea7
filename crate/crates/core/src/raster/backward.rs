use rayon::prelude::*;

use super::{check_attrs, prepare, walk_pixel, BlendMode, Contribution, TileBins};
use crate::error::{Error, Result};
use crate::field::{sigmoid, Primitives};
use crate::image::Image;

/// Gradients of `Σ_x upstream(x)·image(x)` with respect to every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGrads {
    pub mu: Vec<[f64; 2]>,
    pub log_scale: Vec<[f64; 2]>,
    pub theta: Vec<f64>,
    pub opacity_logit: Vec<f64>,
    /// `N x C`, row-major.
    pub attrs: Vec<f64>,
}

impl RenderGrads {
    fn zeros(n: usize, channels: usize) -> Self {
        RenderGrads {
            mu: vec![[0.0; 2]; n],
            log_scale: vec![[0.0; 2]; n],
            theta: vec![0.0; n],
            opacity_logit: vec![0.0; n],
            attrs: vec![0.0; n * channels],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.mu.iter().chain(&self.log_scale).flatten().all(|v| v.is_finite())
            && self
                .theta
                .iter()
                .chain(&self.opacity_logit)
                .chain(&self.attrs)
                .all(|v| v.is_finite())
    }
}

/// Intermediate per-primitive gradient in terms of center, inverse
/// covariance `(a, b, c)` and opacity.
#[derive(Clone, Copy, Default)]
struct RawGrad {
    mu: [f64; 2],
    conic: [f64; 3],
    alpha: f64,
}

/// Analytic adjoint of [`super::render`].
pub fn render_backward(
    prims: &Primitives,
    attrs: &[f64],
    channels: usize,
    (height, width): (usize, usize),
    mode: BlendMode,
    upstream: &Image,
) -> Result<RenderGrads> {
    check_attrs(prims, attrs, channels)?;
    if upstream.dims() != (height, width) || upstream.channels() != channels {
        return Err(Error::Shape(format!(
            "upstream gradient is {}x{}x{}, render is {height}x{width}x{channels}",
            upstream.height(),
            upstream.width(),
            upstream.channels()
        )));
    }
    let n = prims.len();
    let prep = prepare(prims, height, width);
    let bins = TileBins::build(&prep, height, width);

    // Each tile accumulates into buffers indexed by its own list position;
    // the reduction below runs in tile order so results do not depend on
    // scheduling.
    let partials: Vec<(Vec<RawGrad>, Vec<f64>)> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let list = &bins.lists[t];
            let mut raw = vec![RawGrad::default(); list.len()];
            let mut dattr = vec![0.0; list.len() * channels];
            if list.is_empty() {
                return (raw, dattr);
            }
            let (y0, y1, x0, x1) = bins.bounds(t, height, width);
            let mut contribs: Vec<(usize, Contribution)> = Vec::with_capacity(list.len());
            for y in y0..y1 {
                for x in x0..x1 {
                    let up = upstream.pixel(y, x);
                    if up.iter().all(|&u| u == 0.0) {
                        continue;
                    }
                    contribs.clear();
                    let mut local = 0;
                    walk_pixel(y, x, list, &prep, mode, |c| {
                        while list[local] != c.index {
                            local += 1;
                        }
                        contribs.push((local, c));
                    });
                    // Back to front. `r` carries ⟨upstream, Σ_{k>i} a_k w_k Π_{i<j<k}(1 − w_j)⟩.
                    let mut r = 0.0;
                    for &(local, c) in contribs.iter().rev() {
                        let i = c.index as usize;
                        let row = &attrs[i * channels..(i + 1) * channels];
                        let au: f64 = row.iter().zip(up).map(|(a, u)| a * u).sum();
                        let wt = c.w * c.t;
                        for (d, &u) in dattr[local * channels..(local + 1) * channels].iter_mut().zip(up) {
                            *d += u * wt;
                        }
                        let dw = match mode {
                            BlendMode::Alpha => {
                                let dw = c.t * (au - r);
                                r = au * c.w + (1.0 - c.w) * r;
                                dw
                            }
                            BlendMode::Sum => au,
                        };
                        let p = &prep[i];
                        let g = &mut raw[local];
                        g.alpha += dw * c.g;
                        // d/dq of G = exp(-q/2)
                        let dq = -0.5 * dw * p.alpha * c.g;
                        let dx = x as f64 - p.mu[0];
                        let dy = y as f64 - p.mu[1];
                        g.conic[0] += dq * dx * dx;
                        g.conic[1] += dq * 2.0 * dx * dy;
                        g.conic[2] += dq * dy * dy;
                        g.mu[0] -= dq * 2.0 * (p.conic.a * dx + p.conic.b * dy);
                        g.mu[1] -= dq * 2.0 * (p.conic.b * dx + p.conic.c * dy);
                    }
                }
            }
            (raw, dattr)
        })
        .collect();

    let mut raw = vec![RawGrad::default(); n];
    let mut grads = RenderGrads::zeros(n, channels);
    for (t, (tile_raw, tile_attr)) in partials.iter().enumerate() {
        for (local, &i) in bins.lists[t].iter().enumerate() {
            let i = i as usize;
            let src = &tile_raw[local];
            let dst = &mut raw[i];
            dst.mu[0] += src.mu[0];
            dst.mu[1] += src.mu[1];
            for k in 0..3 {
                dst.conic[k] += src.conic[k];
            }
            dst.alpha += src.alpha;
            for (d, s) in grads.attrs[i * channels..(i + 1) * channels]
                .iter_mut()
                .zip(&tile_attr[local * channels..(local + 1) * channels])
            {
                *d += s;
            }
        }
    }

    for i in 0..n {
        let g = &raw[i];
        grads.mu[i] = g.mu;
        let alpha = sigmoid(prims.opacity_logit[i]);
        grads.opacity_logit[i] = g.alpha * alpha * (1.0 - alpha);

        // conic = R diag(ix, iy) Rᵀ with ix = exp(-2 ls_x), iy = exp(-2 ls_y)
        let (s, c) = prims.theta[i].sin_cos();
        let ix = (-2.0 * prims.log_scale[i][0]).exp();
        let iy = (-2.0 * prims.log_scale[i][1]).exp();
        let [da, db, dc] = g.conic;
        grads.log_scale[i] = [
            -2.0 * ix * (da * c * c + db * c * s + dc * s * s),
            -2.0 * iy * (da * s * s - db * c * s + dc * c * c),
        ];
        grads.theta[i] =
            da * 2.0 * c * s * (iy - ix) + db * (c * c - s * s) * (ix - iy) + dc * 2.0 * c * s * (ix - iy);
    }
    Ok(grads)
}
