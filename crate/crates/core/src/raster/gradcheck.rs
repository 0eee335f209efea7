//! Finite-difference verification of the analytic rasterizer gradients.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{render, render_backward, BlendMode};
use crate::field::{Primitives, SCALE_FLOOR};
use crate::image::Image;

/// Central-difference step in parameter space.
pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_FLOOR: f64 = 1e-5;

/// Relative error with an absolute floor: below `ABS_FLOOR / REL_TOL` in
/// magnitude, differences are measured against that floor instead.
pub fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ABS_FLOOR / REL_TOL);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassError {
    pub name: String,
    pub max_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub classes: Vec<ClassError>,
}

impl GradReport {
    pub fn record(&mut self, name: &str, error: f64) {
        let error = if error.is_nan() { f64::INFINITY } else { error };
        match self.classes.iter_mut().find(|c| c.name == name) {
            Some(c) => {
                c.max_error = c.max_error.max(error);
                c.checked += 1;
            }
            None => self.classes.push(ClassError {
                name: name.to_string(),
                max_error: error,
                checked: 1,
            }),
        }
    }

    pub fn merge(&mut self, other: &GradReport) {
        for c in &other.classes {
            match self.classes.iter_mut().find(|m| m.name == c.name) {
                Some(m) => {
                    m.max_error = m.max_error.max(c.max_error);
                    m.checked += c.checked;
                }
                None => self.classes.push(c.clone()),
            }
        }
    }

    pub fn max_error(&self, name: &str) -> Option<f64> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.max_error)
    }

    pub fn passed(&self) -> bool {
        !self.classes.is_empty() && self.classes.iter().all(|c| c.max_error < REL_TOL)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.classes {
            let status = if c.max_error < REL_TOL { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<22} max_rel_err {:.3e}  ({} entries)  {status}",
                c.name, c.max_error, c.checked
            )?;
        }
        Ok(())
    }
}

/// A small random scene with an upstream gradient.
#[derive(Clone, Debug)]
pub struct Scene {
    pub prims: Primitives,
    pub attrs: Vec<f64>,
    pub channels: usize,
    pub dims: (usize, usize),
    pub upstream: Image,
}

impl Scene {
    /// Draws scenes until one keeps every pixel center away from the culling
    /// box edges and from the transmittance cutoff, where the truncated model
    /// is discontinuous and central differences are meaningless.
    pub fn random(rng: &mut ChaCha8Rng, dims: (usize, usize), count: usize, channels: usize, min_log_scale: f64) -> Scene {
        loop {
            let mut prims = Primitives::default();
            for _ in 0..count {
                prims.push(
                    [
                        rng.random_range(-1.0..dims.1 as f64),
                        rng.random_range(-1.0..dims.0 as f64),
                    ],
                    [
                        rng.random_range(min_log_scale..1.1),
                        rng.random_range(min_log_scale..1.1),
                    ],
                    rng.random_range(-3.2..3.2),
                    rng.random_range(-2.0..2.0),
                );
            }
            let attrs = (0..count * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
            let upstream = Image::from_fn(dims.0, dims.1, channels, |_, _, _| rng.random_range(-1.0..1.0));
            let scene = Scene {
                prims,
                attrs,
                channels,
                dims,
                upstream,
            };
            if scene.is_well_conditioned() {
                return scene;
            }
        }
    }

    fn is_well_conditioned(&self) -> bool {
        const MARGIN: f64 = 0.05;
        let (h, w) = self.dims;
        for i in 0..self.prims.len() {
            let cov = self.prims.covariance(i);
            let e = crate::field::extent_3sigma(self.prims.mu[i], &cov);
            let near = |bound: f64, n: usize| {
                let nearest = bound.round().clamp(0.0, n as f64 - 1.0);
                (bound - nearest).abs() < MARGIN
            };
            if near(e.x_min, w) || near(e.x_max, w) || near(e.y_min, h) || near(e.y_max, h) {
                return false;
            }
        }
        let out = render(&self.prims, &self.attrs, self.channels, self.dims, BlendMode::Alpha).unwrap();
        out.accum_opacity.data().iter().all(|&a| 1.0 - a > 1e-3)
    }

    pub fn loss(&self, prims: &Primitives, attrs: &[f64], mode: BlendMode) -> f64 {
        let out = render(prims, attrs, self.channels, self.dims, mode).unwrap();
        out.image.data().iter().zip(self.upstream.data()).map(|(a, b)| a * b).sum()
    }
}

#[derive(Clone, Copy, Debug)]
enum Param {
    Mu(usize, usize),
    LogScale(usize, usize),
    Theta(usize),
    Opacity(usize),
    Attr(usize),
}

impl Param {
    fn class(&self) -> &'static str {
        match self {
            Param::Mu(..) => "mu",
            Param::LogScale(..) => "log_scale",
            Param::Theta(_) => "theta",
            Param::Opacity(_) => "opacity_logit",
            Param::Attr(_) => "attr",
        }
    }

    fn apply(&self, prims: &mut Primitives, attrs: &mut [f64], delta: f64) {
        match *self {
            Param::Mu(i, k) => prims.mu[i][k] += delta,
            Param::LogScale(i, k) => prims.log_scale[i][k] += delta,
            Param::Theta(i) => prims.theta[i] += delta,
            Param::Opacity(i) => prims.opacity_logit[i] += delta,
            Param::Attr(j) => attrs[j] += delta,
        }
    }

    fn pick(&self, g: &super::RenderGrads) -> f64 {
        match *self {
            Param::Mu(i, k) => g.mu[i][k],
            Param::LogScale(i, k) => g.log_scale[i][k],
            Param::Theta(i) => g.theta[i],
            Param::Opacity(i) => g.opacity_logit[i],
            Param::Attr(j) => g.attrs[j],
        }
    }
}

/// Compares every analytic gradient entry of `scene` against central differences.
pub fn check_scene(scene: &Scene, mode: BlendMode) -> GradReport {
    let grads = render_backward(
        &scene.prims,
        &scene.attrs,
        scene.channels,
        scene.dims,
        mode,
        &scene.upstream,
    )
    .unwrap();
    let n = scene.prims.len();
    let mut params = Vec::new();
    for i in 0..n {
        params.extend([
            Param::Mu(i, 0),
            Param::Mu(i, 1),
            Param::LogScale(i, 0),
            Param::LogScale(i, 1),
            Param::Theta(i),
            Param::Opacity(i),
        ]);
    }
    params.extend((0..n * scene.channels).map(Param::Attr));

    let mut report = GradReport::default();
    for p in params {
        let eval = |delta: f64| {
            let mut prims = scene.prims.clone();
            let mut attrs = scene.attrs.clone();
            p.apply(&mut prims, &mut attrs, delta);
            scene.loss(&prims, &attrs, mode)
        };
        let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        let mode_tag = match mode {
            BlendMode::Alpha => "alpha",
            BlendMode::Sum => "sum",
        };
        report.record(&format!("{mode_tag}/{}", p.class()), scaled_error(p.pick(&grads), numeric));
    }
    report
}

/// Runs the rasterizer gradient check for one seed: a random 8x8 scene with
/// five primitives in each blend mode, a scene with every scale just above
/// the floor, and a scene with a primitive entirely off the canvas.
pub fn gradcheck(seed: u64) -> GradReport {
    let mut rng = crate::rng::stream(seed, "gradcheck.raster");
    let mut report = GradReport::default();
    for mode in [BlendMode::Alpha, BlendMode::Sum] {
        let scene = Scene::random(&mut rng, (8, 8), 5, 3, -0.5);
        report.merge(&check_scene(&scene, mode));
    }

    let near_floor = (SCALE_FLOOR + 0.1).ln();
    let scene = loop {
        let mut s = Scene::random(&mut rng, (8, 8), 5, 3, near_floor);
        for ls in &mut s.prims.log_scale {
            ls[0] = near_floor;
        }
        if s.is_well_conditioned() {
            break s;
        }
    };
    let floor_report = check_scene(&scene, BlendMode::Alpha);
    for c in &floor_report.classes {
        report.record(&c.name.replace("alpha/", "floor/"), c.max_error);
    }

    let mut scene = Scene::random(&mut rng, (8, 8), 3, 3, -0.5);
    scene.prims.mu[1] = [-40.0, 3.0];
    let grads = render_backward(
        &scene.prims,
        &scene.attrs,
        scene.channels,
        scene.dims,
        BlendMode::Alpha,
        &scene.upstream,
    )
    .unwrap();
    let off_image_zero = grads.mu[1] == [0.0; 2]
        && grads.log_scale[1] == [0.0; 2]
        && grads.theta[1] == 0.0
        && grads.opacity_logit[1] == 0.0
        && grads.attrs[3..6].iter().all(|&g| g == 0.0);
    report.record("off_image", if off_image_zero { 0.0 } else { f64::INFINITY });
    report
}
