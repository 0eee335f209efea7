use super::{check_attrs, BlendMode, RenderOutput, TRANSMITTANCE_EPS};
use crate::error::Result;
use crate::field::{extent_3sigma, sigmoid, Primitives};
use crate::image::Image;

/// Brute-force renderer: every pixel loops over every primitive, no tiling.
///
/// Shares only the model definition with [`super::render`] (index order,
/// 3σ box culling, transmittance cutoff) and serves as its oracle.
pub fn render_reference(
    prims: &Primitives,
    attrs: &[f64],
    channels: usize,
    (height, width): (usize, usize),
    mode: BlendMode,
) -> Result<RenderOutput> {
    check_attrs(prims, attrs, channels)?;
    let mut image = Image::zeros(height, width, channels);
    let mut accum = Image::zeros(height, width, 1);
    let mut contributors = vec![0u32; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut t = 1.0;
            for i in 0..prims.len() {
                let cov = prims.covariance(i);
                let rect = extent_3sigma(prims.mu[i], &cov).clip(height, width);
                if !rect.is_some_and(|r| r.contains(y, x)) {
                    continue;
                }
                let inv = cov.inverse();
                let d = [x as f64 - prims.mu[i][0], y as f64 - prims.mu[i][1]];
                let q = d[0] * (inv.a * d[0] + inv.b * d[1]) + d[1] * (inv.b * d[0] + inv.c * d[1]);
                let w = sigmoid(prims.opacity_logit[i]) * (-0.5 * q).exp();
                let weight = if mode == BlendMode::Alpha { w * t } else { w };
                for c in 0..channels {
                    let v = image.get(y, x, c) + attrs[i * channels + c] * weight;
                    image.set(y, x, c, v);
                }
                accum.set(y, x, 0, accum.get(y, x, 0) + weight);
                contributors[y * width + x] += 1;
                if mode == BlendMode::Alpha {
                    t *= 1.0 - w;
                    if t < TRANSMITTANCE_EPS {
                        break;
                    }
                }
            }
        }
    }
    Ok(RenderOutput {
        image,
        accum_opacity: accum,
        contributors,
    })
}
