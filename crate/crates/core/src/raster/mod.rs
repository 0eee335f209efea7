//! Tile-based differentiable splatting of per-primitive attributes.
//!
//! Primitives are composited in ascending index order. Each primitive only
//! touches pixel centers inside its clipped 3σ box; the same truncation is
//! used by the forward pass, the backward pass, [`render_reference`] and
//! [`SplatPlan`], so all four describe one model.

mod backward;
pub mod gradcheck;
mod plan;
mod reference;

pub use backward::{render_backward, RenderGrads};
pub use plan::SplatPlan;
pub use reference::render_reference;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{extent_3sigma, inverse_covariance, sigmoid, PixelRect, Primitives, Sym2};
use crate::image::Image;

pub const TILE_SIZE: usize = 16;

/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BlendMode {
    /// Front-to-back alpha compositing in index order.
    #[default]
    Alpha,
    /// Order-free weighted sum `Σ attr·α·G`.
    Sum,
}

impl std::str::FromStr for BlendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(BlendMode::Alpha),
            "sum" => Ok(BlendMode::Sum),
            other => Err(Error::Config(format!("unknown blend mode '{other}' (alpha|sum)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    /// Composited attributes, unclamped.
    pub image: Image,
    /// Attribute-free composited opacity `A(x)`; the total weight in sum mode.
    pub accum_opacity: Image,
    /// Number of primitives composited at each pixel.
    pub contributors: Vec<u32>,
}

/// Per-primitive quantities shared by every pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Prepared {
    pub mu: [f64; 2],
    pub conic: Sym2,
    pub alpha: f64,
    pub rect: Option<PixelRect>,
}

pub(crate) fn prepare(prims: &Primitives, height: usize, width: usize) -> Vec<Prepared> {
    (0..prims.len())
        .map(|i| {
            let scales = prims.scales(i);
            let cov = prims.covariance(i);
            Prepared {
                mu: prims.mu[i],
                conic: inverse_covariance(prims.theta[i], scales),
                alpha: sigmoid(prims.opacity_logit[i]),
                rect: extent_3sigma(prims.mu[i], &cov).clip(height, width),
            }
        })
        .collect()
}

/// Primitive lists per 16x16 tile, each in ascending primitive order.
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn build(prep: &[Prepared], height: usize, width: usize) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for (i, p) in prep.iter().enumerate() {
            let Some(r) = p.rect else { continue };
            for ty in r.y0 / TILE_SIZE..=r.y1 / TILE_SIZE {
                for tx in r.x0 / TILE_SIZE..=r.x1 / TILE_SIZE {
                    lists[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        TileBins { tiles_x, lists }
    }

    /// Pixel bounds `(y0, y1, x0, x1)` (exclusive ends) of tile `t`.
    pub fn bounds(&self, t: usize, height: usize, width: usize) -> (usize, usize, usize, usize) {
        let (ty, tx) = (t / self.tiles_x, t % self.tiles_x);
        let y0 = ty * TILE_SIZE;
        let x0 = tx * TILE_SIZE;
        (y0, (y0 + TILE_SIZE).min(height), x0, (x0 + TILE_SIZE).min(width))
    }
}

/// One composited contribution at a pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution {
    pub index: u32,
    pub g: f64,
    /// `α·G`
    pub w: f64,
    /// Transmittance before this primitive (1 in sum mode).
    pub t: f64,
}

/// Walks the primitives of `list` covering pixel `(y, x)` in order, calling
/// `visit` for each composited contribution. Returns the final transmittance.
#[inline]
pub(crate) fn walk_pixel(
    y: usize,
    x: usize,
    list: &[u32],
    prep: &[Prepared],
    mode: BlendMode,
    mut visit: impl FnMut(Contribution),
) -> f64 {
    let (px, py) = (x as f64, y as f64);
    let mut t = 1.0;
    for &i in list {
        let p = &prep[i as usize];
        // Every primitive in a tile list has a rect.
        let r = p.rect.unwrap();
        if !r.contains(y, x) {
            continue;
        }
        let g = (-0.5 * p.conic.quad(px - p.mu[0], py - p.mu[1])).exp();
        let w = p.alpha * g;
        match mode {
            BlendMode::Alpha => {
                visit(Contribution { index: i, g, w, t });
                t *= 1.0 - w;
                if t < TRANSMITTANCE_EPS {
                    break;
                }
            }
            BlendMode::Sum => visit(Contribution { index: i, g, w, t: 1.0 }),
        }
    }
    t
}

pub(crate) fn check_attrs(prims: &Primitives, attrs: &[f64], channels: usize) -> Result<()> {
    if !prims.is_consistent() {
        return Err(Error::Shape("primitive arrays have unequal lengths".into()));
    }
    if channels == 0 || attrs.len() != prims.len() * channels {
        return Err(Error::Shape(format!(
            "{} attribute values for {} primitives x {channels} channels",
            attrs.len(),
            prims.len()
        )));
    }
    Ok(())
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "render target {height}x{width} has a zero dimension"
        )));
    }
    Ok(())
}

/// Renders `channels` attributes per primitive onto a `height x width` canvas.
pub fn render(
    prims: &Primitives,
    attrs: &[f64],
    channels: usize,
    (height, width): (usize, usize),
    mode: BlendMode,
) -> Result<RenderOutput> {
    check_attrs(prims, attrs, channels)?;
    check_dims(height, width)?;
    let prep = prepare(prims, height, width);
    let bins = TileBins::build(&prep, height, width);

    struct TileOut {
        color: Vec<f64>,
        accum: Vec<f64>,
        count: Vec<u32>,
    }

    let tiles: Vec<TileOut> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let (y0, y1, x0, x1) = bins.bounds(t, height, width);
            let npx = (y1 - y0) * (x1 - x0);
            let mut out = TileOut {
                color: vec![0.0; npx * channels],
                accum: vec![0.0; npx],
                count: vec![0; npx],
            };
            let list = &bins.lists[t];
            if list.is_empty() {
                return out;
            }
            let mut k = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let color = &mut out.color[k * channels..(k + 1) * channels];
                    let mut a = 0.0;
                    let mut n = 0;
                    walk_pixel(y, x, list, &prep, mode, |c| {
                        let wt = c.w * c.t;
                        a += wt;
                        n += 1;
                        let row = &attrs[c.index as usize * channels..][..channels];
                        for (o, &v) in color.iter_mut().zip(row) {
                            *o += v * wt;
                        }
                    });
                    out.accum[k] = a;
                    out.count[k] = n;
                    k += 1;
                }
            }
            out
        })
        .collect();

    let mut image = Image::zeros(height, width, channels);
    let mut accum = Image::zeros(height, width, 1);
    let mut contributors = vec![0u32; height * width];
    for (t, tile) in tiles.into_iter().enumerate() {
        let (y0, y1, x0, x1) = bins.bounds(t, height, width);
        let tw = x1 - x0;
        for y in y0..y1 {
            let k0 = (y - y0) * tw;
            let row = image.index(y, x0, 0);
            image.data_mut()[row..row + tw * channels]
                .copy_from_slice(&tile.color[k0 * channels..(k0 + tw) * channels]);
            accum.data_mut()[y * width + x0..y * width + x1].copy_from_slice(&tile.accum[k0..k0 + tw]);
            contributors[y * width + x0..y * width + x1].copy_from_slice(&tile.count[k0..k0 + tw]);
        }
    }
    Ok(RenderOutput {
        image,
        accum_opacity: accum,
        contributors,
    })
}
