//! Full-reference (PSNR, SSIM) and no-reference (LOE, DE, EME) quality metrics.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{gaussian_kernel, resize_bilinear, to_gray, Image};

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const LOE_MAX_SIDE: usize = 100;
pub const LOE_SAMPLES: usize = 500;
pub const LOE_SEED: u64 = 0x10e;
pub const EME_DELTA: f64 = 1e-4;

/// `10·log10(1/MSE)` over all channels, capped at 99 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let n = a.data().len().max(1) as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    Ok(if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    })
}

fn ssim_kernel() -> Vec<f64> {
    let k = gaussian_kernel(SSIM_SIGMA);
    // 3σ truncation of σ=1.5 gives exactly the 11-tap window.
    debug_assert_eq!(k.len(), SSIM_WINDOW);
    k
}

/// 'Valid' separable correlation of a 1-channel image.
fn conv_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len();
    let (oh, ow) = (h + 1 - r, w + 1 - r);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().enumerate().map(|(t, kv)| kv * img[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (t, kv) in k.iter().enumerate() {
            for x in 0..ow {
                out[y * ow + x] += kv * tmp[(y + t) * ow + x];
            }
        }
    }
    out
}

/// Adjoint of [`conv_valid`].
fn conv_valid_adjoint(up: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len();
    let (oh, ow) = (h + 1 - r, w + 1 - r);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..oh {
        for (t, kv) in k.iter().enumerate() {
            for x in 0..ow {
                tmp[(y + t) * ow + x] += kv * up[y * ow + x];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (t, kv) in k.iter().enumerate() {
                out[y * w + x + t] += kv * v;
            }
        }
    }
    out
}

/// Mean SSIM of two single-plane buffers and, optionally, its gradient with
/// respect to `a`.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let k = ssim_kernel();
    let mu_a = conv_valid(a, h, w, &k);
    let mu_b = conv_valid(b, h, w, &k);
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let m_aa = conv_valid(&sq(a, a), h, w, &k);
    let m_bb = conv_valid(&sq(b, b), h, w, &k);
    let m_ab = conv_valid(&sq(a, b), h, w, &k);
    let m = mu_a.len();
    let inv_m = 1.0 / m as f64;

    let mut total = 0.0;
    let (mut d_mu, mut d_aa, mut d_ab) = if want_grad {
        (vec![0.0; m], vec![0.0; m], vec![0.0; m])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..m {
        let (ua, ub) = (mu_a[p], mu_b[p]);
        let s_aa = m_aa[p] - ua * ua;
        let s_bb = m_bb[p] - ub * ub;
        let s_ab = m_ab[p] - ua * ub;
        let a1 = 2.0 * ua * ub + SSIM_C1;
        let a2 = 2.0 * s_ab + SSIM_C2;
        let b1 = ua * ua + ub * ub + SSIM_C1;
        let b2 = s_aa + s_bb + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            let ds_saa = -s / b2;
            let ds_sab = 2.0 * a1 / (b1 * b2);
            let ds_mu = 2.0 * ub * a2 / (b1 * b2) - s * 2.0 * ua / b1;
            d_mu[p] = inv_m * (ds_mu + ds_saa * (-2.0 * ua) + ds_sab * (-ub));
            d_aa[p] = inv_m * ds_saa;
            d_ab[p] = inv_m * ds_sab;
        }
    }
    let grad = want_grad.then(|| {
        let g_mu = conv_valid_adjoint(&d_mu, h, w, &k);
        let g_aa = conv_valid_adjoint(&d_aa, h, w, &k);
        let g_ab = conv_valid_adjoint(&d_ab, h, w, &k);
        (0..h * w)
            .map(|i| g_mu[i] + 2.0 * a[i] * g_aa[i] + b[i] * g_ab[i])
            .collect()
    });
    (total * inv_m, grad)
}

fn check_ssim_dims(a: &Image, b: &Image) -> Result<()> {
    a.check_same_shape(b, "ssim")?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    Ok(())
}

/// Mean local SSIM (11x11 Gaussian window, σ = 1.5, dynamic range 1) on
/// luminance. Single-channel inputs are used as is.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_ssim_dims(a, b)?;
    let (ga, gb) = (to_gray(a)?, to_gray(b)?);
    Ok(ssim_plane(ga.data(), gb.data(), a.height(), a.width(), false).0)
}

/// SSIM averaged over channels instead of computed on luminance.
pub fn ssim_per_channel(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_per_channel_with_grad(a, b, false)?.0)
}

/// Channel-mean SSIM and, optionally, its gradient with respect to `a`.
pub fn ssim_per_channel_with_grad(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    check_ssim_dims(a, b)?;
    let ch = a.channels();
    let (h, w) = a.dims();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::zeros(h, w, ch));
    for c in 0..ch {
        let (pa, pb) = (a.channel(c), b.channel(c));
        let (s, g) = ssim_plane(pa.data(), pb.data(), h, w, want_grad);
        total += s;
        if let (Some(out), Some(g)) = (grad.as_mut(), g) {
            for (i, gv) in g.into_iter().enumerate() {
                out.data_mut()[i * ch + c] = gv / ch as f64;
            }
        }
    }
    Ok((total / ch as f64, grad))
}

fn loe_downsample(l: &Image) -> Result<Image> {
    let (h, w) = l.dims();
    let r = (LOE_MAX_SIDE as f64 / h.max(w) as f64).min(1.0);
    let nh = ((h as f64 * r).round() as usize).clamp(1, LOE_MAX_SIDE);
    let nw = ((w as f64 * r).round() as usize).clamp(1, LOE_MAX_SIDE);
    resize_bilinear(l, nh, nw)
}

/// Lightness order error between an enhanced image and its original.
///
/// Both luminances are downsampled to at most 100x100. Every pixel is
/// compared with 500 seeded random pixels; the flip rate is scaled by the
/// pixel count so the result estimates the classic all-pairs LOE.
pub fn loe(enhanced: &Image, original: &Image) -> Result<f64> {
    enhanced.check_same_shape(original, "loe")?;
    let le = loe_downsample(&to_gray(enhanced)?)?;
    let lo = loe_downsample(&to_gray(original)?)?;
    let (le, lo) = (le.data(), lo.data());
    let m = le.len();
    let mut rng = crate::rng::stream(LOE_SEED, "metrics.loe");
    let mut flips = 0usize;
    for x in 0..m {
        for _ in 0..LOE_SAMPLES {
            let y = rng.random_range(0..m);
            if (lo[x] >= lo[y]) != (le[x] >= le[y]) {
                flips += 1;
            }
        }
    }
    Ok(flips as f64 / (m * LOE_SAMPLES) as f64 * m as f64)
}

/// Shannon entropy (bits) of the 256-bin histogram of `round(L·255)`.
pub fn discrete_entropy(img: &Image) -> Result<f64> {
    let l = to_gray(img)?;
    let mut hist = [0usize; 256];
    for &v in l.data() {
        hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    let n = l.data().len() as f64;
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum())
}

/// Weber-law contrast: mean over `block x block` tiles of
/// `20·log10((max+δ)/(min+δ))` on luminance.
pub fn eme(img: &Image, block: usize) -> Result<f64> {
    if block == 0 {
        return Err(Error::InvalidArgument("eme block size must be >= 1".into()));
    }
    let l = to_gray(img)?;
    let (h, w) = l.dims();
    let mut total = 0.0;
    let mut blocks = 0usize;
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for y in by..(by + block).min(h) {
                for x in bx..(bx + block).min(w) {
                    let v = l.get(y, x, 0);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            total += 20.0 * ((hi + EME_DELTA) / (lo + EME_DELTA)).log10();
            blocks += 1;
        }
    }
    Ok(if blocks == 0 { 0.0 } else { total / blocks as f64 })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub loe: Option<f64>,
    pub de: Option<f64>,
    pub eme: Option<f64>,
}

impl MetricsReport {
    /// Computes every metric that the inputs allow. Without a reference only
    /// the no-reference scores DE and EME are present; LOE needs the
    /// original image and is computed against the reference when given.
    pub fn evaluate(pred: &Image, reference: Option<&Image>) -> Result<Self> {
        let mut r = MetricsReport {
            de: Some(discrete_entropy(pred)?),
            eme: Some(eme(pred, 8)?),
            ..Default::default()
        };
        if let Some(reference) = reference {
            pred.check_same_shape(reference, "evaluation")?;
            r.psnr = Some(psnr(pred, reference)?);
            r.ssim = Some(ssim(pred, reference)?);
            r.loe = Some(loe(pred, reference)?);
        }
        Ok(r)
    }

    /// Flat JSON object, one key per present metric.
    pub fn to_json(&self) -> String {
        let mut s = String::from("{");
        let mut first = true;
        for (k, v) in [
            ("psnr", self.psnr),
            ("ssim", self.ssim),
            ("loe", self.loe),
            ("de", self.de),
            ("eme", self.eme),
        ] {
            if let Some(v) = v {
                if !first {
                    s.push_str(", ");
                }
                first = false;
                let _ = write!(s, "\"{k}\": {v}");
            }
        }
        s.push('}');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(8, 8, 3, 1);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let black = Image::zeros(4, 4, 3);
        let white = Image::filled(4, 4, 3, 1.0);
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
        let b = Image::filled(4, 4, 3, 0.1);
        assert!((psnr(&black, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &black).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random_image(24, 20, 3, 2);
        let b = random_image(24, 20, 3, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
        assert!((ssim_per_channel(&a, &b).unwrap() - ssim_per_channel(&b, &a).unwrap()).abs() < 1e-9);
        assert!(ssim(&Image::zeros(10, 30, 1), &Image::zeros(10, 30, 1)).is_err());
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = random_image(16, 16, 2, 4);
        let b = random_image(16, 16, 2, 5);
        let (_, g) = ssim_per_channel_with_grad(&a, &b, true).unwrap();
        let g = g.unwrap();
        let h = 1e-6;
        for idx in [0, 17, 100, 255, 511] {
            let mut p = a.clone();
            p.data_mut()[idx] += h;
            let mut m = a.clone();
            m.data_mut()[idx] -= h;
            let fd = (ssim_per_channel(&p, &b).unwrap() - ssim_per_channel(&m, &b).unwrap()) / (2.0 * h);
            let an = g.data()[idx];
            assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-2), "{idx}: {fd} {an}");
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(discrete_entropy(&Image::filled(5, 5, 1, 0.3)).unwrap(), 0.0);
        let uniform = Image::from_fn(16, 16, 1, |y, x, _| (y * 16 + x) as f64 / 255.0);
        assert!((discrete_entropy(&uniform).unwrap() - 8.0).abs() < 1e-12);
        let two = Image::from_fn(2, 2, 1, |_, x, _| x as f64);
        assert!((discrete_entropy(&two).unwrap() - 1.0).abs() < 1e-12);
        let e = discrete_entropy(&random_image(30, 30, 3, 6)).unwrap();
        assert!((0.0..=8.0).contains(&e));
    }

    #[test]
    fn eme_examples() {
        assert_eq!(eme(&Image::filled(16, 16, 3, 0.4), 8).unwrap(), 0.0);
        let img = Image::from_fn(8, 8, 1, |y, x, _| if (y, x) == (0, 0) { 1.0 } else { 0.0 });
        let expect = 20.0 * ((1.0 + EME_DELTA) / EME_DELTA).log10();
        assert!((eme(&img, 8).unwrap() - expect).abs() < 1e-9);
        assert!((expect - 80.0).abs() < 0.01);
    }

    #[test]
    fn eme_does_not_drop_when_contrast_doubles() {
        for seed in 0..5 {
            let img = random_image(24, 24, 1, 10 + seed).map(|v| 0.3 + 0.4 * v);
            let mu = img.mean();
            let boosted = img.map(|v| (2.0 * (v - mu) + mu).clamp(0.0, 1.0));
            assert!(eme(&boosted, 8).unwrap() >= eme(&img, 8).unwrap());
        }
    }

    #[test]
    fn loe_examples() {
        let a = random_image(30, 40, 3, 7);
        assert_eq!(loe(&a, &a).unwrap(), 0.0);
        // a positive affine remap preserves the luminance order
        let remapped = a.map(|v| 0.5 * v + 0.25);
        assert_eq!(loe(&remapped, &a).unwrap(), 0.0);
    }

    #[test]
    fn loe_of_inverted_ramp() {
        // 20x20 ramp with distinct values: every pair except self-pairs flips.
        let ramp = Image::from_fn(20, 20, 1, |y, x, _| (y * 20 + x) as f64 / 400.0);
        let inv = ramp.map(|v| 1.0 - v);
        let m = 400.0;
        let expected = m * (m - 1.0) / m;
        let got = loe(&inv, &ramp).unwrap();
        assert!((got - expected).abs() < 0.5, "{got} vs {expected}");
    }

    #[test]
    fn report_json() {
        let a = random_image(16, 16, 3, 8);
        let r = MetricsReport::evaluate(&a, Some(&a)).unwrap();
        assert_eq!(r.psnr, Some(99.0));
        assert!((r.ssim.unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(r.loe, Some(0.0));
        let j = r.to_json();
        assert!(j.starts_with("{\"psnr\": 99"));
        let nr = MetricsReport::evaluate(&a, None).unwrap();
        assert!(nr.psnr.is_none() && nr.loe.is_none() && nr.de.is_some() && nr.eme.is_some());
        assert!(!nr.to_json().contains("psnr"));
    }
}
