//! Pixel buffers and the handful of filters the two optimization stages need.
//!
//! Pixels live in a row-major, channel-interleaved `f64` buffer. Pixel
//! `(y, x)` has its center at continuous coordinate `(x, y)`, so the
//! rasterizer, the resampler and point sampling all agree on where a pixel is.

mod io;

pub use io::{load_image, save_image};

use crate::error::{Error, Result};

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Wraps an existing buffer, checking its length and that every value is finite.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot hold {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite pixel value at flat index {pos}"
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(y, x, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let i = self.index(y, x, 0);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Extracts a single channel as a 1-channel image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels, "channel {c} out of range");
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to the border.
    pub fn sample_bilinear(&self, y: f64, x: f64, out: &mut [f64]) {
        let (y0, y1, fy) = lerp_taps(y, self.height);
        let (x0, x1, fx) = lerp_taps(x, self.width);
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let top = self.get(y0, x0, c) * (1.0 - fx) + self.get(y0, x1, c) * fx;
            let bot = self.get(y1, x0, c) * (1.0 - fx) + self.get(y1, x1, c) * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
    }
}

fn lerp_taps(pos: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let p = pos.clamp(0.0, max);
    let i0 = p.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, p - i0 as f64)
}

/// Mirror index with the edge sample repeated (`-1 -> 0`, `n -> n-1`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Per-pixel BT.601 luma of a 3-channel image.
pub fn luminance(img: &Image) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::Shape(format!(
            "luminance needs 3 channels, got {}",
            img.channels
        )));
    }
    Ok(luminance_unchecked(img))
}

/// Luma for 3-channel input, passthrough copy for 1-channel input.
pub fn to_gray(img: &Image) -> Result<Image> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => Ok(luminance_unchecked(img)),
        c => Err(Error::Shape(format!("expected 1 or 3 channels, got {c}"))),
    }
}

fn luminance_unchecked(img: &Image) -> Image {
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| wr * p[0] + wg * p[1] + wb * p[2])
        .collect();
    Image {
        height: img.height,
        width: img.width,
        channels: 1,
        data,
    }
}

/// Bilinear resampling with half-pixel-centered sample positions.
pub fn resize_bilinear(img: &Image, new_height: usize, new_width: usize) -> Result<Image> {
    if new_height == 0 || new_width == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target {new_height}x{new_width} has a zero dimension"
        )));
    }
    if img.height == 0 || img.width == 0 {
        return Err(Error::InvalidArgument("cannot resize an empty image".into()));
    }
    if (new_height, new_width) == img.dims() {
        return Ok(img.clone());
    }
    let sy = img.height as f64 / new_height as f64;
    let sx = img.width as f64 / new_width as f64;
    let cols: Vec<(usize, usize, f64)> = (0..new_width)
        .map(|x| lerp_taps((x as f64 + 0.5) * sx - 0.5, img.width))
        .collect();
    let ch = img.channels;
    let mut out = Image::zeros(new_height, new_width, ch);
    for y in 0..new_height {
        let (y0, y1, fy) = lerp_taps((y as f64 + 0.5) * sy - 0.5, img.height);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            for c in 0..ch {
                let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
                let bot = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
                out.set(y, x, c, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(out)
}

/// Normalized 1D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with mirrored borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (h, w, ch) = (img.height, img.width, img.channels);

    let mut tmp = Image::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            for (t, &k) in kernel.iter().enumerate() {
                let sx = reflect_index(x as isize + t as isize - r, w);
                for c in 0..ch {
                    let i = tmp.index(y, x, c);
                    tmp.data[i] += k * img.get(y, sx, c);
                }
            }
        }
    }
    let mut out = Image::zeros(h, w, ch);
    for y in 0..h {
        for (t, &k) in kernel.iter().enumerate() {
            let sy = reflect_index(y as isize + t as isize - r, h);
            let src = &tmp.data[sy * w * ch..(sy + 1) * w * ch];
            let dst = &mut out.data[y * w * ch..(y + 1) * w * ch];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    Ok(out)
}

/// Forward differences along x and y; the last column/row mirrors onto
/// itself and so has zero gradient.
pub fn grad_xy(img: &Image) -> (Image, Image) {
    let (h, w, ch) = (img.height, img.width, img.channels);
    let mut gx = Image::zeros(h, w, ch);
    let mut gy = Image::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let v = img.get(y, x, c);
                if x + 1 < w {
                    gx.set(y, x, c, img.get(y, x + 1, c) - v);
                }
                if y + 1 < h {
                    gy.set(y, x, c, img.get(y + 1, x, c) - v);
                }
            }
        }
    }
    (gx, gy)
}

/// Adjoint of [`grad_xy`]: maps upstream gradients on `(gx, gy)` back onto the image.
pub fn grad_xy_adjoint(up_x: &Image, up_y: &Image) -> Image {
    let (h, w, ch) = (up_x.height, up_x.width, up_x.channels);
    let mut out = Image::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                if x + 1 < w {
                    let g = up_x.get(y, x, c);
                    let (i, j) = (out.index(y, x + 1, c), out.index(y, x, c));
                    out.data[i] += g;
                    out.data[j] -= g;
                }
                if y + 1 < h {
                    let g = up_y.get(y, x, c);
                    let (i, j) = (out.index(y + 1, x, c), out.index(y, x, c));
                    out.data[i] += g;
                    out.data[j] -= g;
                }
            }
        }
    }
    out
}

/// Means over non-overlapping `patch x patch` tiles. Ragged border tiles
/// average only the pixels they actually cover. The result is an image of
/// `ceil(H/patch) x ceil(W/patch)` cells.
pub fn patch_means(img: &Image, patch: usize) -> Result<Image> {
    if patch == 0 {
        return Err(Error::InvalidArgument("patch size must be >= 1".into()));
    }
    let (h, w, ch) = (img.height, img.width, img.channels);
    let rows = h.div_ceil(patch);
    let cols = w.div_ceil(patch);
    let mut sums = Image::zeros(rows, cols, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let i = sums.index(y / patch, x / patch, c);
                sums.data[i] += img.get(y, x, c);
            }
        }
    }
    for r in 0..rows {
        let ph = patch.min(h - r * patch);
        for q in 0..cols {
            let pw = patch.min(w - q * patch);
            let n = (ph * pw) as f64;
            for c in 0..ch {
                let i = sums.index(r, q, c);
                sums.data[i] /= n;
            }
        }
    }
    Ok(sums)
}
