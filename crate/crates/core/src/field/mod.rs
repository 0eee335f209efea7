//! Explicit 2D Gaussian primitives.
//!
//! Working parameters are kept in `f64` structure-of-arrays form
//! ([`Primitives`]) while optimizing. The persisted form ([`GaussianSet`])
//! stores `f32` arrays per pyramid level, exactly as they appear in a
//! `.llgm` file, so a save/load cycle is lossless.

pub(crate) mod model;
mod set;

pub use model::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use set::{EnhLogits, GaussianSet, Level};

/// Smallest allowed axis scale, in pixels.
pub const SCALE_FLOOR: f64 = 0.3;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Symmetric 2x2 matrix `[[a, b], [b, c]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn inverse(&self) -> Sym2 {
        let inv = 1.0 / self.det();
        Sym2 {
            a: self.c * inv,
            b: -self.b * inv,
            c: self.a * inv,
        }
    }

    /// Quadratic form `vᵀ M v`.
    #[inline]
    pub fn quad(&self, dx: f64, dy: f64) -> f64 {
        self.a * dx * dx + 2.0 * self.b * dx * dy + self.c * dy * dy
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mid = 0.5 * (self.a + self.c);
        let rad = (0.25 * (self.a - self.c).powi(2) + self.b * self.b).sqrt();
        (mid + rad, mid - rad)
    }

    /// Decomposes into `(theta, [s_x, s_y])` with `Self = R S Sᵀ Rᵀ`.
    pub fn to_rotation_scale(&self) -> (f64, [f64; 2]) {
        let (l1, l2) = self.eigenvalues();
        let theta = 0.5 * (2.0 * self.b).atan2(self.a - self.c);
        (theta, [l1.max(0.0).sqrt(), l2.max(0.0).sqrt()])
    }
}

/// `Σ = R S Sᵀ Rᵀ` with `R` the rotation by `theta` and `S = diag(s_x, s_y)`.
pub fn covariance(theta: f64, scales: [f64; 2]) -> Sym2 {
    let (s, c) = theta.sin_cos();
    let (vx, vy) = (scales[0] * scales[0], scales[1] * scales[1]);
    Sym2 {
        a: c * c * vx + s * s * vy,
        b: c * s * (vx - vy),
        c: s * s * vx + c * c * vy,
    }
}

/// `Σ⁻¹` built directly from rotation and scales, which is better
/// conditioned than inverting [`covariance`].
pub fn inverse_covariance(theta: f64, scales: [f64; 2]) -> Sym2 {
    covariance(theta, [1.0 / scales[0], 1.0 / scales[1]])
}

/// Axis-aligned 3σ box in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Inclusive pixel index ranges covered by an [`Extent`] after clipping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl PixelRect {
    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

impl Extent {
    /// Pixel centers inside the box, clipped to a `height x width` image.
    /// `None` when nothing is covered.
    pub fn clip(&self, height: usize, width: usize) -> Option<PixelRect> {
        let x0 = self.x_min.ceil().max(0.0);
        let y0 = self.y_min.ceil().max(0.0);
        let x1 = self.x_max.floor().min(width as f64 - 1.0);
        let y1 = self.y_max.floor().min(height as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            return None;
        }
        Some(PixelRect {
            x0: x0 as usize,
            x1: x1 as usize,
            y0: y0 as usize,
            y1: y1 as usize,
        })
    }
}

pub fn extent_3sigma(mu: [f64; 2], cov: &Sym2) -> Extent {
    let hx = 3.0 * cov.a.sqrt();
    let hy = 3.0 * cov.c.sqrt();
    Extent {
        x_min: mu[0] - hx,
        x_max: mu[0] + hx,
        y_min: mu[1] - hy,
        y_max: mu[1] + hy,
    }
}

/// Logical view of one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian2D {
    /// Center `[x, y]` in pixel coordinates.
    pub mu: [f64; 2],
    pub log_scale: [f64; 2],
    pub theta: f64,
    pub color: Vec<f64>,
    pub opacity_logit: f64,
    pub enh_logits: Option<Vec<f64>>,
}

impl Gaussian2D {
    pub fn scales(&self) -> [f64; 2] {
        [self.log_scale[0].exp(), self.log_scale[1].exp()]
    }

    pub fn covariance(&self) -> Sym2 {
        covariance(self.theta, self.scales())
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// `exp(-½ (x−μ)ᵀ Σ⁻¹ (x−μ))`, exactly 1 at the center.
    pub fn response(&self, x: [f64; 2]) -> f64 {
        gaussian_response(self.mu, &inverse_covariance(self.theta, self.scales()), x)
    }

    pub fn extent(&self) -> Extent {
        extent_3sigma(self.mu, &self.covariance())
    }
}

#[inline]
pub fn gaussian_response(mu: [f64; 2], conic: &Sym2, x: [f64; 2]) -> f64 {
    (-0.5 * conic.quad(x[0] - mu[0], x[1] - mu[1])).exp()
}

/// Geometry of many primitives in `f64` structure-of-arrays form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Primitives {
    pub mu: Vec<[f64; 2]>,
    pub log_scale: Vec<[f64; 2]>,
    pub theta: Vec<f64>,
    pub opacity_logit: Vec<f64>,
}

impl Primitives {
    pub fn with_capacity(n: usize) -> Self {
        Primitives {
            mu: Vec::with_capacity(n),
            log_scale: Vec::with_capacity(n),
            theta: Vec::with_capacity(n),
            opacity_logit: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn push(&mut self, mu: [f64; 2], log_scale: [f64; 2], theta: f64, opacity_logit: f64) {
        self.mu.push(mu);
        self.log_scale.push(log_scale);
        self.theta.push(theta);
        self.opacity_logit.push(opacity_logit);
    }

    pub fn extend(&mut self, other: &Primitives) {
        self.mu.extend_from_slice(&other.mu);
        self.log_scale.extend_from_slice(&other.log_scale);
        self.theta.extend_from_slice(&other.theta);
        self.opacity_logit.extend_from_slice(&other.opacity_logit);
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.mu.len();
        self.log_scale.len() == n && self.theta.len() == n && self.opacity_logit.len() == n
    }

    pub fn scales(&self, i: usize) -> [f64; 2] {
        [self.log_scale[i][0].exp(), self.log_scale[i][1].exp()]
    }

    pub fn covariance(&self, i: usize) -> Sym2 {
        covariance(self.theta[i], self.scales(i))
    }

    /// Projects every log-scale onto `log(SCALE_FLOOR)` from below.
    pub fn project_scales(&mut self) {
        let floor = SCALE_FLOOR.ln();
        for ls in &mut self.log_scale {
            ls[0] = ls[0].max(floor);
            ls[1] = ls[1].max(floor);
        }
    }

    /// Number of scalars in the flattened geometry
    /// (`mu`, `log_scale`, `theta`, `opacity_logit`).
    pub fn flat_len(&self) -> usize {
        6 * self.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn covariance_examples() {
        let id = covariance(0.0, [1.0, 1.0]);
        assert_eq!(id, Sym2 { a: 1.0, b: 0.0, c: 1.0 });

        // R(π/2) diag(4, 1) R(π/2)ᵀ = diag(1, 4)
        let m = covariance(FRAC_PI_2, [2.0, 1.0]);
        assert!(close(m.a, 1.0, 1e-12) && close(m.b, 0.0, 1e-12) && close(m.c, 4.0, 1e-12));

        for theta in [0.1, 1.0, 2.5, -4.0] {
            let m = covariance(theta, [1.7, 1.7]);
            assert!(close(m.a, 1.7 * 1.7, 1e-12) && close(m.b, 0.0, 1e-12) && close(m.c, 2.89, 1e-12));
        }
    }

    #[test]
    fn response_examples() {
        let g = Gaussian2D {
            mu: [3.0, 4.0],
            log_scale: [0.0, 0.0],
            theta: 0.0,
            color: vec![1.0],
            opacity_logit: 0.0,
            enh_logits: None,
        };
        assert_eq!(g.response(g.mu), 1.0);
        assert!(close(g.response([3.0 + 2f64.sqrt(), 4.0]), (-1.0f64).exp(), 1e-12));

        // Σ = diag(1, 4): offset (0, 2) has Mahalanobis² 1.
        let g2 = Gaussian2D {
            log_scale: [0.0, 2f64.ln()],
            ..g.clone()
        };
        assert!(close(g2.response([3.0, 6.0]), (-0.5f64).exp(), 1e-12));
        assert!(close(g2.response([3.0, 6.0]), 0.606531, 1e-6));
    }

    #[test]
    fn extent_examples() {
        let e = extent_3sigma([10.0, 10.0], &covariance(0.0, [1.0, 1.0]));
        assert_eq!((e.x_min, e.x_max, e.y_min, e.y_max), (7.0, 13.0, 7.0, 13.0));
        assert_eq!(
            e.clip(100, 100),
            Some(PixelRect { x0: 7, x1: 13, y0: 7, y1: 13 })
        );
        assert_eq!(
            e.clip(11, 9),
            Some(PixelRect { x0: 7, x1: 8, y0: 7, y1: 10 })
        );

        let off = extent_3sigma([-20.0, 5.0], &covariance(0.0, [1.0, 1.0]));
        assert_eq!(off.clip(32, 32), None);

        let m = covariance(FRAC_PI_4, [2.0, 1.0]);
        let e = extent_3sigma([0.0, 0.0], &m);
        assert!(close(e.x_max, 3.0 * 2.5f64.sqrt(), 1e-12));
        assert!(close(e.y_max, 3.0 * 2.5f64.sqrt(), 1e-12));
    }

    #[test]
    fn eigenvalues_are_squared_scales() {
        let mut theta = 0.0;
        while theta < 2.0 * PI {
            for sx in [0.3, 0.7, 2.0, 11.0, 50.0] {
                for sy in [0.3, 1.3, 25.0, 50.0] {
                    let (l1, l2) = covariance(theta, [sx, sy]).eigenvalues();
                    let (hi, lo) = if sx >= sy { (sx, sy) } else { (sy, sx) };
                    let tol = 1e-9 * hi * hi;
                    assert!(close(l1, hi * hi, tol), "{theta} {sx} {sy}");
                    assert!(close(l2, lo * lo, tol), "{theta} {sx} {sy}");
                }
            }
            theta += 0.05;
        }
    }

    #[test]
    fn rotation_scale_decomposition_round_trips() {
        for (theta, s) in [(0.3, [3.0, 1.0]), (-1.2, [0.5, 4.0]), (2.0, [1.0, 1.0])] {
            let m = covariance(theta, s);
            let (t2, s2) = m.to_rotation_scale();
            let m2 = covariance(t2, s2);
            assert!(close(m.a, m2.a, 1e-9) && close(m.b, m2.b, 1e-9) && close(m.c, m2.c, 1e-9));
        }
    }

    #[test]
    fn sigmoid_logit_inverse() {
        for p in [0.01, 0.3, 0.5, 0.9] {
            assert!(close(sigmoid(logit(p)), p, 1e-12));
        }
        assert_eq!(logit(0.5), 0.0);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    proptest::proptest! {
        #[test]
        fn response_is_pi_periodic_in_theta(
            theta in -10.0f64..10.0, lsx in -1.2f64..3.9, lsy in -1.2f64..3.9,
            dx in -20.0f64..20.0, dy in -20.0f64..20.0,
        ) {
            let s = [lsx.exp(), lsy.exp()];
            let a = gaussian_response([0.0, 0.0], &inverse_covariance(theta, s), [dx, dy]);
            let b = gaussian_response([0.0, 0.0], &inverse_covariance(theta + PI, s), [dx, dy]);
            proptest::prop_assert!((a - b).abs() < 1e-6);
        }

        #[test]
        fn response_decreases_along_rays(
            theta in -4.0f64..4.0, lsx in -1.2f64..3.0, lsy in -1.2f64..3.0,
            angle in 0.0f64..6.3, step in 0.01f64..2.0,
        ) {
            let conic = inverse_covariance(theta, [lsx.exp(), lsy.exp()]);
            let (dy, dx) = angle.sin_cos();
            let mut prev = 1.0;
            for k in 1..30 {
                let t = k as f64 * step;
                let r = gaussian_response([5.0, 5.0], &conic, [5.0 + t * dx, 5.0 + t * dy]);
                proptest::prop_assert!(r <= prev);
                prev = r;
            }
        }
    }
}
