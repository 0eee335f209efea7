//! Debug dumps of the gain field and weight maps.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{save_image, Image};

/// Writes the gain map min-max normalized to [0,1] as a PNG.
pub fn save_gain_png(eta: &Image, path: impl AsRef<Path>) -> Result<()> {
    let lo = eta.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eta.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let norm = eta.map(|v| if span > 0.0 { (v - lo) / span } else { 0.5 });
    save_image(&norm, path)
}

/// Raw gain as little-endian `u32` height, width, channels, then `f32` values row-major.
pub fn save_eta_raw(eta: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(12 + 4 * eta.data().len());
    for d in [eta.height(), eta.width(), eta.channels()] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in eta.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// One grayscale PNG per weight-map channel, `omega_00.png`, `omega_01.png`, ...
pub fn save_omega_pngs(omega: &Image, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..omega.channels())
        .map(|k| {
            let path = dir.join(format!("omega_{k:02}.png"));
            save_image(&omega.channel(k), &path)?;
            Ok(path)
        })
        .collect()
}
