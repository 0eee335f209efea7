//! Enhancement dictionary: the iterated quadratic curve, per-image curve
//! fitting, K-Means over the fitted coefficients, and the assembled atom
//! matrix whose row 0 is the identity (all-zero) curve.

mod file;
mod kmeans;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{load_image, Image};

pub use file::{export_manifold_csv, load_dictionary, save_dictionary, DICT_MAGIC, DICT_VERSION};
pub use kmeans::{kmeans, KMeans};

/// Coefficient bound keeping the curve inside [0,1] and monotone.
pub const COEFF_BOUND: f64 = 1.0;
/// Gradient-descent settings for `P > 1` curve fits.
pub const FIT_STEPS: usize = 500;
pub const FIT_LR: f64 = 0.05;
pub const FIT_TOL: f64 = 1e-4;

/// `u_p = u_{p-1} + a_p (u_{p-1}^2 - u_{p-1})`, starting from `u_0 = v`.
pub fn apply_curve(v: f64, a: &[f64]) -> f64 {
    a.iter().fold(v, |u, &ap| u + ap * (u * u - u))
}

/// Curve value plus `d u_P / d a_p` written into `grad` (same length as `a`).
pub fn apply_curve_grad(v: f64, a: &[f64], grad: &mut [f64]) -> f64 {
    debug_assert_eq!(a.len(), grad.len());
    // forward: stash u_{p-1} in grad
    let mut u = v;
    for (g, &ap) in grad.iter_mut().zip(a) {
        *g = u;
        u += ap * (u * u - u);
    }
    let out = u;
    let mut chain = 1.0;
    for (g, &ap) in grad.iter_mut().zip(a).rev() {
        let prev = *g;
        *g = chain * (prev * prev - prev);
        chain *= 1.0 + ap * (2.0 * prev - 1.0);
    }
    out
}

/// Derivative of the curve with respect to its input `v`.
pub fn curve_dv(v: f64, a: &[f64]) -> f64 {
    let mut u = v;
    let mut d = 1.0;
    for &ap in a {
        d *= 1.0 + ap * (2.0 * u - 1.0);
        u += ap * (u * u - u);
    }
    d
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaFit {
    pub a: Vec<f64>,
    /// Mean of the curved image.
    pub mean: f64,
    /// The image sits on the curve's fixed points; `a` is zero.
    pub degenerate: bool,
}

/// Fits curve coefficients so the mean of the curved image approaches `e_ref`.
pub fn fit_alpha(img: &Image, e_ref: f64, order: usize) -> Result<AlphaFit> {
    if img.data().is_empty() {
        return Err(Error::InvalidArgument("fit_alpha needs a nonempty image".into()));
    }
    if !(e_ref > 0.0 && e_ref < 1.0) {
        return Err(Error::InvalidArgument(format!("E_ref must lie in (0, 1), got {e_ref}")));
    }
    if order == 0 {
        return Err(Error::InvalidArgument("curve order must be >= 1".into()));
    }
    let vals: Vec<f64> = img.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let n = vals.len() as f64;
    let mean_v = vals.iter().sum::<f64>() / n;
    let basis = vals.iter().map(|v| v * v - v).sum::<f64>() / n;
    if basis == 0.0 {
        return Ok(AlphaFit {
            a: vec![0.0; order],
            mean: mean_v,
            degenerate: true,
        });
    }
    if order == 1 {
        let a = ((e_ref - mean_v) / basis).clamp(-COEFF_BOUND, COEFF_BOUND);
        return Ok(AlphaFit {
            mean: mean_v + a * basis,
            a: vec![a],
            degenerate: false,
        });
    }

    let mut a = vec![0.0; order];
    let mut grad = vec![0.0; order];
    let mut acc = vec![0.0; order];
    let curved_mean = |a: &[f64], acc: &mut [f64], grad: &mut [f64]| {
        acc.iter_mut().for_each(|g| *g = 0.0);
        let mut m = 0.0;
        for &v in &vals {
            m += apply_curve_grad(v, a, grad);
            for (s, g) in acc.iter_mut().zip(grad.iter()) {
                *s += g;
            }
        }
        acc.iter_mut().for_each(|g| *g /= n);
        m / n
    };
    let mut mean = curved_mean(&a, &mut acc, &mut grad);
    for _ in 0..FIT_STEPS {
        let r = mean - e_ref;
        if r.abs() < FIT_TOL {
            break;
        }
        for (ap, g) in a.iter_mut().zip(&acc) {
            *ap = (*ap - FIT_LR * 2.0 * r * g).clamp(-COEFF_BOUND, COEFF_BOUND);
        }
        mean = curved_mean(&a, &mut acc, &mut grad);
    }
    Ok(AlphaFit {
        a,
        mean,
        degenerate: false,
    })
}

/// `(K+1) x P` atom matrix, row 0 the zero atom. Entries are held at `f32`
/// precision so they survive a file round trip unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    k: usize,
    p: usize,
    atoms: Vec<f32>,
    pub seed: u64,
    pub tag: String,
}

impl Dictionary {
    /// Builds from the `K` learned atoms (row-major `K x P`); the zero atom is prepended.
    pub fn from_atoms(k: usize, p: usize, learned: &[f64], seed: u64, tag: impl Into<String>) -> Result<Self> {
        if learned.len() != k * p {
            return Err(Error::Shape(format!("{} atom entries for K={k}, P={p}", learned.len())));
        }
        let mut atoms = vec![0.0f32; p];
        atoms.extend(learned.iter().map(|&v| v.clamp(-COEFF_BOUND, COEFF_BOUND) as f32));
        let d = Dictionary {
            k,
            p,
            atoms,
            seed,
            tag: tag.into(),
        };
        d.validate()?;
        Ok(d)
    }

    pub(crate) fn from_raw(k: usize, p: usize, atoms: Vec<f32>, seed: u64, tag: String) -> Result<Self> {
        let d = Dictionary { k, p, atoms, seed, tag };
        d.validate()?;
        Ok(d)
    }

    /// Learned atom count (excluding the zero atom).
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn order(&self) -> usize {
        self.p
    }

    /// `K + 1`.
    pub fn atom_count(&self) -> usize {
        self.k + 1
    }

    pub fn atom(&self, k: usize) -> Vec<f64> {
        self.atoms[k * self.p..(k + 1) * self.p].iter().map(|&v| v as f64).collect()
    }

    pub fn raw_atoms(&self) -> &[f32] {
        &self.atoms
    }

    /// All atoms as `f64`, row-major.
    pub fn matrix(&self) -> Vec<f64> {
        self.atoms.iter().map(|&v| v as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.p == 0 {
            return Err(Error::DictFormat(format!("K and P must be >= 1, got K={} P={}", self.k, self.p)));
        }
        if self.atoms.len() != (self.k + 1) * self.p {
            return Err(Error::DictFormat("atom matrix has the wrong size".into()));
        }
        if self.atoms[..self.p].iter().any(|&v| v != 0.0) {
            return Err(Error::DictFormat("row 0 must be the zero atom".into()));
        }
        if let Some(v) = self.atoms.iter().find(|v| !v.is_finite() || v.abs() as f64 > COEFF_BOUND) {
            return Err(Error::DictFormat(format!("atom entry {v} outside [-1, 1]")));
        }
        Ok(())
    }

    /// Index pairs `(i, j)` of learned atoms that coincide.
    pub fn duplicate_atoms(&self) -> Vec<(usize, usize)> {
        let row = |k: usize| &self.atoms[k * self.p..(k + 1) * self.p];
        let mut dups = Vec::new();
        for i in 1..=self.k {
            for j in i + 1..=self.k {
                if row(i) == row(j) {
                    dups.push((i, j));
                }
            }
        }
        dups
    }

    /// Checks that a model's stored logits (if any) match this dictionary.
    pub fn check_compatible(&self, model_atoms: Option<usize>) -> Result<()> {
        match model_atoms {
            Some(n) if n != self.atom_count() => Err(Error::Incompatible(format!(
                "model stores logits for {n} atoms, dictionary has {} (K = {})",
                self.atom_count(),
                self.k
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DictConfig {
    pub k: usize,
    pub order: usize,
    pub targets: Vec<f64>,
    pub seed: u64,
}

impl Default for DictConfig {
    fn default() -> Self {
        DictConfig {
            k: 30,
            order: 5,
            targets: vec![0.4, 0.5, 0.6, 0.7],
            seed: 0,
        }
    }
}

impl DictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if self.order == 0 {
            return Err(Error::Config("P must be >= 1".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("at least one exposure target is required".into()));
        }
        if let Some(t) = self.targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Config(format!("exposure target {t} outside (0, 1)")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DictBuild {
    pub dictionary: Dictionary,
    /// Fitted coefficient vectors, one per (image, target) pair that was not degenerate.
    pub points: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia_trace: Vec<f64>,
    pub skipped_images: usize,
    pub degenerate_fits: usize,
}

impl DictBuild {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

/// Builds a dictionary from in-memory images.
pub fn build_dictionary_from_images(images: &[Image], cfg: &DictConfig, tag: &str) -> Result<DictBuild> {
    cfg.validate()?;
    let jobs: Vec<(usize, f64)> = (0..images.len())
        .flat_map(|i| cfg.targets.iter().map(move |&t| (i, t)))
        .collect();
    let fits = jobs
        .par_iter()
        .map(|&(i, t)| fit_alpha(&images[i], t, cfg.order))
        .collect::<Result<Vec<_>>>()?;
    let degenerate_fits = fits.iter().filter(|f| f.degenerate).count();
    let points: Vec<Vec<f64>> = fits.into_iter().filter(|f| !f.degenerate).map(|f| f.a).collect();
    if points.len() < cfg.k {
        return Err(Error::CorpusTooSmall {
            points: points.len(),
            k: cfg.k,
        });
    }
    let mut rng = crate::rng::stream(cfg.seed, "dict.kmeans");
    let km = kmeans(&points, cfg.k, &mut rng)?;
    let learned: Vec<f64> = km.centroids.iter().flatten().copied().collect();
    let dictionary = Dictionary::from_atoms(cfg.k, cfg.order, &learned, cfg.seed, tag)?;
    let dups = dictionary.duplicate_atoms();
    if !dups.is_empty() {
        log::warn!("dictionary has {} duplicate atom pairs (first: {:?})", dups.len(), dups[0]);
    }
    Ok(DictBuild {
        dictionary,
        points,
        assignments: km.assignments,
        inertia_trace: km.inertia_trace,
        skipped_images: 0,
        degenerate_fits,
    })
}

/// Image files (`.png`, `.ppm`) directly inside `dir`, sorted by name.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "ppm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Builds a dictionary from image files. Unreadable files are skipped with a
/// warning and counted.
pub fn build_dictionary(paths: &[PathBuf], cfg: &DictConfig, tag: &str) -> Result<DictBuild> {
    cfg.validate()?;
    let mut images = Vec::with_capacity(paths.len());
    let mut skipped = 0;
    for p in paths {
        match load_image(p) {
            Ok(img) => images.push(img),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                skipped += 1;
            }
        }
    }
    let mut build = build_dictionary_from_images(&images, cfg, tag)?;
    build.skipped_images = skipped;
    Ok(build)
}

#[cfg(test)]
mod tests;
