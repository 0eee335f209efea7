//! Stage one: residual-pyramid fitting of an image with 2D Gaussians.
//!
//! Level 0 fits a downsampled copy of the image. Every finer level fits what
//! the coarser levels left over: the image at that level's resolution minus
//! the upsampled sum of all coarser renders. Levels are fitted one after
//! another and frozen as soon as they are done; the final reconstruction is
//! the sum of every level's render upsampled to full resolution.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{logit, GaussianSet, Level, Primitives, SCALE_FLOOR};
use crate::image::{resize_bilinear, Image};
use crate::metrics::{psnr, ssim_per_channel_with_grad, SSIM_WINDOW};
use crate::optim::{Adam, Schedule};
use crate::raster::{render, render_backward, BlendMode};

#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    pub num_primitives: usize,
    pub scales: usize,
    /// Adam steps per pyramid level.
    pub iterations: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (cosine annealing).
    pub lr_min_fraction: f64,
    /// SSIM weight λ in the photometric loss.
    pub ssim_weight: f64,
    /// Share of primitives per level, coarse to fine. Empty means the default split.
    pub level_split: Vec<f64>,
    pub mode: BlendMode,
    pub seed: u64,
}

impl Default for ReconConfig {
    /// 70,000 primitives and 20,000 iterations per level.
    fn default() -> Self {
        ReconConfig {
            num_primitives: 70_000,
            scales: 2,
            iterations: 20_000,
            lr: 0.01,
            lr_min_fraction: 0.1,
            ssim_weight: 0.7,
            level_split: Vec::new(),
            mode: BlendMode::Alpha,
            seed: 0,
        }
    }
}

impl ReconConfig {
    /// 2,000 primitives and 3,000 iterations per level.
    pub fn desk() -> Self {
        ReconConfig {
            num_primitives: 2_000,
            iterations: 3_000,
            ..Default::default()
        }
    }

    /// Level shares, defaulting to weights proportional to `3^s`
    /// (`[0.25, 0.75]` for two levels).
    pub fn split(&self) -> Vec<f64> {
        if !self.level_split.is_empty() {
            return self.level_split.clone();
        }
        let w: Vec<f64> = (0..self.scales).map(|s| 3f64.powi(s as i32)).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_primitives == 0 {
            return bad("number of gaussians must be >= 1".into());
        }
        if self.scales == 0 {
            return bad("number of scales must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.lr_min_fraction) {
            return bad("lr_min_fraction must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return bad(format!("ssim weight must lie in [0, 1], got {}", self.ssim_weight));
        }
        let split = self.split();
        if split.len() != self.scales {
            return bad(format!("level split has {} entries for {} scales", split.len(), self.scales));
        }
        if split.iter().any(|&f| !(f > 0.0)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("level split must be positive fractions summing to 1".into());
        }
        if self.level_counts().contains(&0) {
            return bad("every level needs at least one primitive".into());
        }
        Ok(())
    }

    /// Primitive count per level; the finest level takes the rounding remainder.
    pub fn level_counts(&self) -> Vec<usize> {
        let split = self.split();
        let mut counts: Vec<usize> = split
            .iter()
            .map(|f| (f * self.num_primitives as f64).round() as usize)
            .collect();
        if let Some(last) = counts.last_mut() {
            let others: usize = split.iter().take(split.len() - 1).map(|f| (f * self.num_primitives as f64).round() as usize).sum();
            *last = self.num_primitives.saturating_sub(others);
        }
        counts
    }
}

/// Level resolutions, coarsest first: level `s` is the image halved
/// `S-1-s` times.
pub fn level_dims(height: usize, width: usize, scales: usize) -> Vec<(usize, usize)> {
    (0..scales)
        .map(|s| {
            let f = 1usize << (scales - 1 - s);
            ((height / f).max(1), (width / f).max(1))
        })
        .collect()
}

/// Target of one level: the image at `dims` minus the upsampled cumulative
/// reconstruction of the coarser levels (if any). May be negative.
pub fn pyramid_target(img: &Image, dims: (usize, usize), cumulative_up: Option<&Image>) -> Result<Image> {
    let mut target = resize_bilinear(img, dims.0, dims.1)?;
    if let Some(prev) = cumulative_up {
        target.check_same_shape(prev, "cumulative reconstruction")?;
        for (t, p) in target.data_mut().iter_mut().zip(prev.data()) {
            *t -= p;
        }
    }
    Ok(target)
}

/// All level targets given `partial_renders[s-1]`, the cumulative
/// reconstruction of levels `< s` already upsampled to level `s`.
pub fn build_pyramid_targets(img: &Image, dims: &[(usize, usize)], partial_renders: &[Image]) -> Result<Vec<Image>> {
    if partial_renders.len() + 1 < dims.len() {
        return Err(Error::Shape(format!(
            "{} levels need {} partial renders, got {}",
            dims.len(),
            dims.len() - 1,
            partial_renders.len()
        )));
    }
    dims.iter()
        .enumerate()
        .map(|(s, &d)| pyramid_target(img, d, if s == 0 { None } else { Some(&partial_renders[s - 1]) }))
        .collect()
}

/// `(1-λ)·mean|render - target| + λ·(1 - SSIM)` and its gradient with respect
/// to `render`. SSIM is the channel mean; on canvases smaller than the SSIM
/// window only the L1 term is used.
pub fn photometric_loss(render: &Image, target: &Image, ssim_weight: f64) -> Result<(f64, Image)> {
    render.check_same_shape(target, "photometric loss")?;
    let use_ssim = ssim_weight > 0.0 && render.height() >= SSIM_WINDOW && render.width() >= SSIM_WINDOW;
    let l1_weight = if use_ssim { 1.0 - ssim_weight } else { 1.0 };
    let n = render.data().len() as f64;
    let mut grad = Image::zeros(render.height(), render.width(), render.channels());
    let mut l1 = 0.0;
    for ((g, &r), &t) in grad.data_mut().iter_mut().zip(render.data()).zip(target.data()) {
        let d = r - t;
        l1 += d.abs();
        // sign(0) = 0
        *g = if d > 0.0 {
            l1_weight / n
        } else if d < 0.0 {
            -l1_weight / n
        } else {
            0.0
        };
    }
    let mut loss = l1_weight * l1 / n;
    if use_ssim {
        let (s, sg) = ssim_per_channel_with_grad(render, target, true)?;
        loss += ssim_weight * (1.0 - s);
        for (g, sgv) in grad.data_mut().iter_mut().zip(sg.unwrap().data()) {
            *g -= ssim_weight * sgv;
        }
    }
    Ok((loss, grad))
}

/// Jittered-grid initialization. Returns geometry and `channels` colors per
/// primitive, sampled bilinearly from `target` at each center.
pub fn init_gaussians(target: &Image, n: usize, rng: &mut ChaCha8Rng) -> (Primitives, Vec<f64>) {
    let (h, w) = target.dims();
    let ch = target.channels();
    let cols = ((n as f64 * w as f64 / h as f64).sqrt().ceil() as usize).max(1);
    let rows = n.div_ceil(cols).max(1);
    let (sx, sy) = (w as f64 / cols as f64, h as f64 / rows as f64);
    let spacing = (sx * sy).sqrt();
    let log_scale = (0.5 * spacing).max(SCALE_FLOOR).ln();
    let cells = rows * cols;
    let mut prims = Primitives::with_capacity(n);
    let mut colors = vec![0.0; n * ch];
    for j in 0..n {
        let cell = j * cells / n;
        let (r, c) = (cell / cols, cell % cols);
        let x = (c as f64 + 0.5) * sx - 0.5 + rng.random_range(-0.25..0.25) * sx;
        let y = (r as f64 + 0.5) * sy - 0.5 + rng.random_range(-0.25..0.25) * sy;
        prims.push([x, y], [log_scale, log_scale], 0.0, logit(0.5));
        target.sample_bilinear(y, x, &mut colors[j * ch..(j + 1) * ch]);
    }
    (prims, colors)
}

/// Flat parameter layout: `mu[2N] | log_scale[2N] | theta[N] | color[CN] | opacity[N]`.
struct Packing {
    n: usize,
    channels: usize,
}

impl Packing {
    fn len(&self) -> usize {
        (6 + self.channels) * self.n
    }

    fn pack(&self, p: &Primitives, colors: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(p.mu.iter().flatten());
        v.extend(p.log_scale.iter().flatten());
        v.extend(&p.theta);
        v.extend(colors);
        v.extend(&p.opacity_logit);
        v
    }

    fn unpack(&self, v: &[f64], p: &mut Primitives, colors: &mut Vec<f64>) {
        let n = self.n;
        let c = self.channels;
        for i in 0..n {
            p.mu[i] = [v[2 * i], v[2 * i + 1]];
            p.log_scale[i] = [v[2 * n + 2 * i], v[2 * n + 2 * i + 1]];
        }
        p.theta.copy_from_slice(&v[4 * n..5 * n]);
        colors.clear();
        colors.extend_from_slice(&v[5 * n..(5 + c) * n]);
        p.opacity_logit.copy_from_slice(&v[(5 + c) * n..]);
    }

    fn pack_grads(&self, g: &crate::raster::RenderGrads) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(g.mu.iter().flatten());
        v.extend(g.log_scale.iter().flatten());
        v.extend(&g.theta);
        v.extend(&g.attrs);
        v.extend(&g.opacity_logit);
        v
    }

    fn project(&self, v: &mut [f64]) {
        let floor = SCALE_FLOOR.ln();
        for x in &mut v[2 * self.n..4 * self.n] {
            *x = x.max(floor);
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Every level frozen.
    pub set: GaussianSet,
    /// Clamped full-resolution cascaded reconstruction.
    pub reconstruction: Image,
    pub psnr: f64,
    /// Loss per iteration, one trace per level.
    pub loss_traces: Vec<Vec<f64>>,
}

/// Renders one stored level at its own resolution.
pub fn render_level(level: &Level, mode: BlendMode) -> Result<Image> {
    Ok(render(&level.geometry(), &level.colors(), level.channels(), level.dims(), mode)?.image)
}

/// Sum of every level's render upsampled to the finest resolution, unclamped.
pub fn cascade(set: &GaussianSet, mode: BlendMode) -> Result<Image> {
    let (h, w) = set
        .finest_dims()
        .ok_or_else(|| Error::InvalidArgument("model has no levels".into()))?;
    let mut total: Option<Image> = None;
    for level in set.levels() {
        let up = resize_bilinear(&render_level(level, mode)?, h, w)?;
        total = Some(match total {
            None => up,
            Some(mut t) => {
                for (a, b) in t.data_mut().iter_mut().zip(up.data()) {
                    *a += b;
                }
                t
            }
        });
    }
    Ok(total.unwrap())
}

pub fn fit(img: &Image, cfg: &ReconConfig) -> Result<FitResult> {
    fit_with_log(img, cfg, None)
}

/// Runs the fit, optionally streaming `level,iteration,loss,psnr` CSV rows.
pub fn fit_with_log(img: &Image, cfg: &ReconConfig, mut log: Option<&mut dyn Write>) -> Result<FitResult> {
    cfg.validate()?;
    if img.channels() != 3 && img.channels() != 1 {
        return Err(Error::Shape(format!("fit needs a 1- or 3-channel image, got {}", img.channels())));
    }
    let (h, w) = img.dims();
    let dims = level_dims(h, w, cfg.scales);
    let counts = cfg.level_counts();
    let ch = img.channels();
    let mut rng = crate::rng::stream(cfg.seed, "recon.init");
    if let Some(l) = log.as_deref_mut() {
        writeln!(l, "level,iteration,loss,psnr").map_err(|e| Error::io("log", e))?;
    }

    let mut set = GaussianSet::default();
    let mut renders: Vec<Image> = Vec::new();
    let mut traces = Vec::new();
    for (s, (&d, &n)) in dims.iter().zip(&counts).enumerate() {
        let cumulative = cumulative_at(&renders, d)?;
        let target = pyramid_target(img, d, cumulative.as_ref())?;
        let (mut prims, mut colors) = init_gaussians(&target, n, &mut rng);
        let packing = Packing { n, channels: ch };
        let mut params = packing.pack(&prims, &colors);
        let mut adam = Adam::new(
            params.len(),
            cfg.lr,
            Schedule::Cosine {
                min_fraction: cfg.lr_min_fraction,
                total_steps: cfg.iterations,
            },
        );
        let mut trace = Vec::with_capacity(cfg.iterations);
        for it in 0..cfg.iterations {
            packing.unpack(&params, &mut prims, &mut colors);
            let out = render(&prims, &colors, ch, d, cfg.mode)?;
            let (loss, grad) = photometric_loss(&out.image, &target, cfg.ssim_weight)?;
            let g = render_backward(&prims, &colors, ch, d, cfg.mode, &grad)?;
            adam.step(&mut params, &packing.pack_grads(&g))?;
            packing.project(&mut params);
            trace.push(loss);
            if let Some(l) = log.as_deref_mut() {
                let p = psnr(&out.image, &target)?;
                writeln!(l, "{s},{it},{loss},{p}").map_err(|e| Error::io("log", e))?;
            }
            if (it + 1) % 500 == 0 {
                log::info!("level {s} iteration {} loss {loss:.5}", it + 1);
            }
        }
        packing.unpack(&params, &mut prims, &mut colors);
        let mut level = Level::from_params(d.0, d.1, &prims, ch, &colors)?;
        level.freeze();
        renders.push(render_level(&level, cfg.mode)?);
        set.push_level(level)?;
        traces.push(trace);
    }

    let reconstruction = cascade(&set, cfg.mode)?.clamp01();
    let psnr = psnr(&reconstruction, img)?;
    Ok(FitResult {
        set,
        reconstruction,
        psnr,
        loss_traces: traces,
    })
}

fn cumulative_at(renders: &[Image], dims: (usize, usize)) -> Result<Option<Image>> {
    let mut total: Option<Image> = None;
    for r in renders {
        let up = resize_bilinear(r, dims.0, dims.1)?;
        total = Some(match total {
            None => up,
            Some(mut t) => {
                for (a, b) in t.data_mut().iter_mut().zip(up.data()) {
                    *a += b;
                }
                t
            }
        });
    }
    Ok(total)
}

/// Means over consecutive `window`-sized chunks (a ragged tail is dropped).
pub fn window_means(trace: &[f64], window: usize) -> Vec<f64> {
    trace
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn smooth_image(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |y, x, c| {
            let fx = x as f64 / w as f64;
            let fy = y as f64 / h as f64;
            (0.3 + 0.3 * (3.0 * fx + c as f64).sin() * (2.0 * fy).cos()).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn config_validation() {
        assert!(ReconConfig::default().validate().is_ok());
        assert_eq!(ReconConfig::default().level_counts(), vec![17_500, 52_500]);
        assert_eq!(ReconConfig::desk().split(), vec![0.25, 0.75]);
        assert_eq!(ReconConfig::desk().level_counts(), vec![500, 1500]);
        for bad in [
            ReconConfig { num_primitives: 0, ..ReconConfig::desk() },
            ReconConfig { scales: 0, ..ReconConfig::desk() },
            ReconConfig { lr: 0.0, ..ReconConfig::desk() },
            ReconConfig { level_split: vec![0.5, 0.4], ..ReconConfig::desk() },
            ReconConfig { level_split: vec![1.0], ..ReconConfig::desk() },
            ReconConfig { num_primitives: 1, ..ReconConfig::desk() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn level_dims_halve_toward_coarse() {
        assert_eq!(level_dims(128, 96, 2), vec![(64, 48), (128, 96)]);
        assert_eq!(level_dims(10, 10, 1), vec![(10, 10)]);
        assert_eq!(level_dims(5, 3, 3), vec![(1, 1), (2, 1), (5, 3)]);
    }

    #[test]
    fn single_scale_target_is_the_image() {
        let img = smooth_image(9, 7);
        let t = build_pyramid_targets(&img, &[(9, 7)], &[]).unwrap();
        assert_eq!(t, vec![img]);
    }

    #[test]
    fn residual_of_perfect_coarse_level() {
        let img = smooth_image(32, 32);
        let dims = level_dims(32, 32, 2);
        let coarse = resize_bilinear(&img, 16, 16).unwrap();
        let up = resize_bilinear(&coarse, 32, 32).unwrap();
        let targets = build_pyramid_targets(&img, &dims, &[up]).unwrap();
        assert_eq!(targets[0], coarse);
        assert!(targets[1].mean().abs() < 1e-3);

        let flat = Image::filled(32, 32, 3, 0.45);
        let up = resize_bilinear(&resize_bilinear(&flat, 16, 16).unwrap(), 32, 32).unwrap();
        let targets = build_pyramid_targets(&flat, &dims, &[up]).unwrap();
        assert!(targets[1].data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn photometric_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Image::from_fn(16, 16, 3, |_, _, _| rng.random::<f64>());
        let (l, _) = photometric_loss(&t, &t, 0.7).unwrap();
        assert!(l.abs() < 1e-12);
        let shifted = t.map(|v| v + 0.1);
        let (l, _) = photometric_loss(&shifted, &t, 0.0).unwrap();
        assert!((l - 0.1).abs() < 1e-12);
        assert!(photometric_loss(&t, &Image::zeros(16, 16, 1), 0.5).is_err());
    }

    #[test]
    fn photometric_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Image::from_fn(16, 16, 3, |_, _, _| rng.random::<f64>());
        let b = Image::from_fn(16, 16, 3, |_, _, _| rng.random::<f64>());
        let (_, g) = photometric_loss(&a, &b, 0.7).unwrap();
        let h = 1e-7;
        for idx in (0..a.data().len()).step_by(37) {
            let mut p = a.clone();
            p.data_mut()[idx] += h;
            let mut m = a.clone();
            m.data_mut()[idx] -= h;
            let fd = (photometric_loss(&p, &b, 0.7).unwrap().0 - photometric_loss(&m, &b, 0.7).unwrap().0) / (2.0 * h);
            let an = g.data()[idx];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-2);
            assert!(err < 1e-3, "{idx}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn init_grid_and_colors() {
        let img = Image::filled(40, 40, 3, 0.6);
        let mut rng = crate::rng::stream(3, "t");
        let (p, colors) = init_gaussians(&img, 100, &mut rng);
        assert_eq!(p.len(), 100);
        assert!(colors.iter().all(|&c| (c - 0.6).abs() < 1e-12));
        let expected = (0.5f64 * 40.0 / 10.0).ln();
        assert!(p.log_scale.iter().all(|s| (s[0] - expected).abs() < 1e-12 && s[0] == s[1]));
        assert!(p.theta.iter().all(|&t| t == 0.0));
        assert!(p.opacity_logit.iter().all(|&o| o == 0.0));
        // centers stay within their jittered cells
        for (j, mu) in p.mu.iter().enumerate() {
            let (r, c) = (j / 10, j % 10);
            assert!((mu[0] - (c as f64 * 4.0 + 1.5)).abs() <= 1.0);
            assert!((mu[1] - (r as f64 * 4.0 + 1.5)).abs() <= 1.0);
        }
        let mut again = crate::rng::stream(3, "t");
        assert_eq!(init_gaussians(&img, 100, &mut again).0, p);
    }

    #[test]
    fn zero_iterations_returns_frozen_init() {
        let img = smooth_image(24, 24);
        let cfg = ReconConfig { num_primitives: 60, iterations: 0, ..ReconConfig::desk() };
        let res = fit(&img, &cfg).unwrap();
        assert!(res.set.is_frozen());
        assert_eq!(res.set.levels().len(), 2);
        assert_eq!(res.set.total_count(), 60);
        let recon = cascade(&res.set, BlendMode::Alpha).unwrap().clamp01();
        assert_eq!(psnr(&recon, &img).unwrap(), res.psnr);
    }

    #[test]
    fn constant_image_fit_reduces_loss() {
        let img = Image::from_fn(64, 64, 3, |_, _, c| if c == 0 { 0.9 } else { 0.05 });
        let cfg = ReconConfig { num_primitives: 100, iterations: 500, scales: 1, ..ReconConfig::desk() };
        let res = fit(&img, &cfg).unwrap();
        let trace = &res.loss_traces[0];
        assert!(trace.last().unwrap() < &(trace[0] / 5.0), "{} -> {}", trace[0], trace.last().unwrap());
    }

    #[test]
    fn cascade_is_sum_of_upsampled_levels() {
        let img = smooth_image(20, 28);
        let cfg = ReconConfig { num_primitives: 80, iterations: 20, ..ReconConfig::desk() };
        let res = fit(&img, &cfg).unwrap();
        let c = cascade(&res.set, BlendMode::Alpha).unwrap();
        let mut manual = Image::zeros(20, 28, 3);
        for level in res.set.levels() {
            let up = resize_bilinear(&render_level(level, BlendMode::Alpha).unwrap(), 20, 28).unwrap();
            for (m, u) in manual.data_mut().iter_mut().zip(up.data()) {
                *m += u;
            }
        }
        for (a, b) in c.data().iter().zip(manual.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn fitted_levels_are_frozen() {
        let img = smooth_image(16, 16);
        let cfg = ReconConfig { num_primitives: 20, iterations: 2, ..ReconConfig::desk() };
        let mut res = fit(&img, &cfg).unwrap();
        let level = res.set.level_mut(1);
        let g = level.geometry();
        let colors = level.colors();
        assert!(matches!(level.set_params(1, &g, &colors), Err(Error::FrozenLevel(1))));
    }

    #[test]
    fn window_means_drop_tail() {
        assert_eq!(window_means(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
    }
}
