use rayon::prelude::*;

use super::{check_dims, prepare, walk_pixel, BlendMode, TileBins};
use crate::error::{Error, Result};
use crate::field::Primitives;
use crate::image::Image;

/// Compositing weights of a fixed geometry, precomputed once.
///
/// With geometry frozen the render is linear in the attributes:
/// `image(x) = Σ_i attr_i · w_i(x) T_i(x)`. The plan stores those
/// coefficients per pixel (and transposed per primitive), so repeated
/// renders and attribute gradients cost one sparse product each. Results
/// are bit-identical to [`super::render`] for the same inputs.
#[derive(Clone, Debug)]
pub struct SplatPlan {
    height: usize,
    width: usize,
    count: usize,
    pixel_offsets: Vec<usize>,
    pixel_entries: Vec<(u32, f64)>,
    prim_offsets: Vec<usize>,
    prim_entries: Vec<(u32, f64)>,
    accum: Image,
}

impl SplatPlan {
    pub fn build(prims: &Primitives, (height, width): (usize, usize), mode: BlendMode) -> Result<Self> {
        if !prims.is_consistent() {
            return Err(Error::Shape("primitive arrays have unequal lengths".into()));
        }
        check_dims(height, width)?;
        let prep = prepare(prims, height, width);
        let bins = TileBins::build(&prep, height, width);

        let tiles: Vec<Vec<Vec<(u32, f64)>>> = (0..bins.lists.len())
            .into_par_iter()
            .map(|t| {
                let (y0, y1, x0, x1) = bins.bounds(t, height, width);
                let list = &bins.lists[t];
                let mut pixels = Vec::with_capacity((y1 - y0) * (x1 - x0));
                for y in y0..y1 {
                    for x in x0..x1 {
                        let mut e = Vec::new();
                        if !list.is_empty() {
                            walk_pixel(y, x, list, &prep, mode, |c| e.push((c.index, c.w * c.t)));
                        }
                        pixels.push(e);
                    }
                }
                pixels
            })
            .collect();

        let mut per_pixel: Vec<Vec<(u32, f64)>> = vec![Vec::new(); height * width];
        for (t, tile) in tiles.into_iter().enumerate() {
            let (y0, _, x0, x1) = bins.bounds(t, height, width);
            let tw = x1 - x0;
            for (k, e) in tile.into_iter().enumerate() {
                per_pixel[(y0 + k / tw) * width + x0 + k % tw] = e;
            }
        }

        let mut pixel_offsets = Vec::with_capacity(height * width + 1);
        let mut pixel_entries = Vec::new();
        let mut accum = Image::zeros(height, width, 1);
        let mut prim_counts = vec![0usize; prims.len()];
        pixel_offsets.push(0);
        for (p, e) in per_pixel.iter().enumerate() {
            let mut a = 0.0;
            for &(i, coef) in e {
                a += coef;
                prim_counts[i as usize] += 1;
            }
            accum.data_mut()[p] = a;
            pixel_entries.extend_from_slice(e);
            pixel_offsets.push(pixel_entries.len());
        }

        let mut prim_offsets = vec![0usize; prims.len() + 1];
        for i in 0..prims.len() {
            prim_offsets[i + 1] = prim_offsets[i] + prim_counts[i];
        }
        let mut cursor = prim_offsets.clone();
        let mut prim_entries = vec![(0u32, 0.0); pixel_entries.len()];
        for (p, e) in per_pixel.iter().enumerate() {
            for &(i, coef) in e {
                prim_entries[cursor[i as usize]] = (p as u32, coef);
                cursor[i as usize] += 1;
            }
        }

        Ok(SplatPlan {
            height,
            width,
            count: prims.len(),
            pixel_offsets,
            pixel_entries,
            prim_offsets,
            prim_entries,
            accum,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn primitive_count(&self) -> usize {
        self.count
    }

    /// Number of stored (pixel, primitive) weights.
    pub fn nnz(&self) -> usize {
        self.pixel_entries.len()
    }

    pub fn accum_opacity(&self) -> &Image {
        &self.accum
    }

    pub fn render(&self, attrs: &[f64], channels: usize) -> Result<Image> {
        if channels == 0 || attrs.len() != self.count * channels {
            return Err(Error::Shape(format!(
                "{} attribute values for {} primitives x {channels} channels",
                attrs.len(),
                self.count
            )));
        }
        let mut image = Image::zeros(self.height, self.width, channels);
        image
            .data_mut()
            .par_chunks_mut(channels)
            .enumerate()
            .for_each(|(p, out)| {
                for &(i, coef) in &self.pixel_entries[self.pixel_offsets[p]..self.pixel_offsets[p + 1]] {
                    let row = &attrs[i as usize * channels..][..channels];
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o += v * coef;
                    }
                }
            });
        Ok(image)
    }

    /// Gradient of `Σ_x upstream(x)·render(attrs)(x)` with respect to `attrs`.
    pub fn backward_attrs(&self, upstream: &Image) -> Result<Vec<f64>> {
        if upstream.dims() != (self.height, self.width) {
            return Err(Error::Shape("upstream gradient does not match plan dims".into()));
        }
        let channels = upstream.channels();
        let mut grads = vec![0.0; self.count * channels];
        grads
            .par_chunks_mut(channels)
            .enumerate()
            .for_each(|(i, out)| {
                for &(p, coef) in &self.prim_entries[self.prim_offsets[i]..self.prim_offsets[i + 1]] {
                    let up = &upstream.data()[p as usize * channels..][..channels];
                    for (o, &u) in out.iter_mut().zip(up) {
                        *o += u * coef;
                    }
                }
            });
        Ok(grads)
    }
}
