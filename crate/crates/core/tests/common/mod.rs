//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use llgm::image::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Value noise on a `cells x cells` lattice, smoothstep-interpolated.
struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut ChaCha8Rng) -> Self {
        let lattice = (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f64>()).collect();
        ValueNoise { cells, lattice }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let (fx, fy) = (u * self.cells as f64, v * self.cells as f64);
        let (x0, y0) = ((fx.floor() as usize).min(self.cells - 1), (fy.floor() as usize).min(self.cells - 1));
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (s(fx - x0 as f64), s(fy - y0 as f64));
        let n = self.cells + 1;
        let l = |x: usize, y: usize| self.lattice[y * n + x];
        let top = l(x0, y0) * (1.0 - tx) + l(x0 + 1, y0) * tx;
        let bot = l(x0, y0 + 1) * (1.0 - tx) + l(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

/// A deterministic photo-like RGB scene: a lit backdrop with fractal texture,
/// soft-edged objects casting shading, and a few thin structures.
pub fn natural_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let octaves: Vec<ValueNoise> = [4, 8, 16, 32, 64].iter().map(|&c| ValueNoise::new(c, &mut rng)).collect();
    let top: [f64; 3] = [rng.random_range(0.5..0.9), rng.random_range(0.5..0.9), rng.random_range(0.6..0.95)];
    let bottom: [f64; 3] = [rng.random_range(0.15..0.45), rng.random_range(0.15..0.45), rng.random_range(0.1..0.35)];
    struct Blob {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        rot: f64,
        color: [f64; 3],
        edge: f64,
    }
    let blobs: Vec<Blob> = (0..14)
        .map(|_| Blob {
            cx: rng.random_range(0.1..0.9),
            cy: rng.random_range(0.2..0.9),
            rx: rng.random_range(0.05..0.25),
            ry: rng.random_range(0.05..0.2),
            rot: rng.random_range(0.0..std::f64::consts::PI),
            color: [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
            edge: rng.random_range(0.5..1.5),
        })
        .collect();
    let lines: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| (rng.random_range(0.0..1.0), rng.random_range(-0.6..0.6), rng.random_range(0.003..0.01), rng.random_range(0.1..0.9)))
        .collect();

    let fine = ValueNoise::new(w.max(h), &mut rng);
    let mut grain = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut img = Image::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let v = (y as f64 + 0.5) / h as f64;
            let texture: f64 = octaves
                .iter()
                .enumerate()
                .map(|(o, n)| n.at(u, v) * 0.5f64.powi(o as i32))
                .sum::<f64>()
                / 1.9375;
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = top[c] * (1.0 - v) + bottom[c] * v + 0.45 * (texture - 0.5);
            }
            for b in &blobs {
                let (dx, dy) = (u - b.cx, v - b.cy);
                let (cs, sn) = (b.rot.cos(), b.rot.sin());
                let (a, bb) = ((cs * dx + sn * dy) / b.rx, (-sn * dx + cs * dy) / b.ry);
                let r = (a * a + bb * bb).sqrt();
                // edge width in pixels
                let inside = 1.0 / (1.0 + ((r - 1.0) * b.rx.min(b.ry) * w as f64 / b.edge).exp());
                // shading across the object plus texture modulation
                let shade = 0.75 + 0.25 * (-a * 0.7 - bb * 0.7).tanh() + 0.5 * (texture - 0.5);
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - inside) + b.color[c] * shade * inside;
                }
            }
            for &(off, slope, width, tone) in &lines {
                let d = (v - (off + slope * u)).abs();
                let k = (-0.5 * (d / width).powi(2)).exp();
                for p in px.iter_mut() {
                    *p = *p * (1.0 - k) + tone * k;
                }
            }
            // foliage-like detail toward the bottom, sensor grain everywhere
            let detail = 0.3 * (fine.at(u, v) - 0.5) * v;
            for c in 0..3 {
                let g = grain.random_range(-0.03..0.03);
                img.set(y, x, c, (px[c] + detail + g).clamp(0.02, 0.98));
            }
        }
    }
    img
}

/// `natural_image` scaled by `factor` to simulate low light.
pub fn low_light(h: usize, w: usize, seed: u64, factor: f64) -> Image {
    natural_image(h, w, seed).map(|v| v * factor)
}

/// Reconstruction PSNR recorded by the oracle run of the desk Stage-1 fit
/// (1500 primitives, two scales, 3000 iterations) on `natural_image(128, 128, 11)`.
pub const NATURAL_128_FIT_PSNR: f64 = 33.935;
