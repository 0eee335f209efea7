use super::{covariance, Primitives, Sym2};
use crate::error::{Error, Result};

/// Per-primitive enhancement logits, `atoms` values per primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhLogits {
    pub atoms: usize,
    pub data: Vec<f32>,
}

/// One pyramid level of primitives, stored as `f32` arrays.
///
/// `mu` and `log_scale` are interleaved `[x0, y0, x1, y1, ..]`; `color` is
/// `channels` values per primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub(super) height: usize,
    pub(super) width: usize,
    pub(super) frozen: bool,
    pub(super) channels: usize,
    pub(super) mu: Vec<f32>,
    pub(super) log_scale: Vec<f32>,
    pub(super) theta: Vec<f32>,
    pub(super) color: Vec<f32>,
    pub(super) opacity_logit: Vec<f32>,
    pub(super) enh_logits: Option<EnhLogits>,
}

impl Level {
    /// Builds an unfrozen level from working parameters. `colors` holds
    /// `channels` values per primitive.
    pub fn from_params(
        height: usize,
        width: usize,
        prims: &Primitives,
        channels: usize,
        colors: &[f64],
    ) -> Result<Self> {
        let mut level = Level {
            height,
            width,
            frozen: false,
            channels,
            mu: Vec::new(),
            log_scale: Vec::new(),
            theta: Vec::new(),
            color: Vec::new(),
            opacity_logit: Vec::new(),
            enh_logits: None,
        };
        level.write_params(prims, channels, colors)?;
        Ok(level)
    }

    fn write_params(&mut self, prims: &Primitives, channels: usize, colors: &[f64]) -> Result<()> {
        if !prims.is_consistent() || colors.len() != prims.len() * channels {
            return Err(Error::Shape(format!(
                "{} primitives with {} color values for {channels} channels",
                prims.len(),
                colors.len()
            )));
        }
        let n = prims.len();
        if let Some(e) = &self.enh_logits {
            if e.data.len() != n * e.atoms {
                return Err(Error::Shape("primitive count change would orphan logits".into()));
            }
        }
        self.channels = channels;
        self.mu = prims.mu.iter().flat_map(|m| [m[0] as f32, m[1] as f32]).collect();
        self.log_scale = prims
            .log_scale
            .iter()
            .flat_map(|s| [s[0] as f32, s[1] as f32])
            .collect();
        self.theta = prims.theta.iter().map(|&t| t as f32).collect();
        self.color = colors.iter().map(|&c| c as f32).collect();
        self.opacity_logit = prims.opacity_logit.iter().map(|&o| o as f32).collect();
        Ok(())
    }

    /// Replaces the geometry and colors. Fails on a frozen level.
    pub fn set_params(&mut self, index: usize, prims: &Primitives, colors: &[f64]) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenLevel(index));
        }
        let ch = self.channels;
        self.write_params(prims, ch, colors)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn geometry(&self) -> Primitives {
        let n = self.len();
        let mut p = Primitives::with_capacity(n);
        for i in 0..n {
            p.push(
                [self.mu[2 * i] as f64, self.mu[2 * i + 1] as f64],
                [self.log_scale[2 * i] as f64, self.log_scale[2 * i + 1] as f64],
                self.theta[i] as f64,
                self.opacity_logit[i] as f64,
            );
        }
        p
    }

    pub fn colors(&self) -> Vec<f64> {
        self.color.iter().map(|&c| c as f64).collect()
    }

    pub fn enh_logits(&self) -> Option<&EnhLogits> {
        self.enh_logits.as_ref()
    }

    /// Logits may be written on frozen levels; they are not geometry.
    pub fn set_enh_logits(&mut self, atoms: usize, data: &[f64]) -> Result<()> {
        if data.len() != atoms * self.len() {
            return Err(Error::Shape(format!(
                "{} logits for {} primitives x {atoms} atoms",
                data.len(),
                self.len()
            )));
        }
        self.enh_logits = Some(EnhLogits {
            atoms,
            data: data.iter().map(|&v| v as f32).collect(),
        });
        Ok(())
    }

    pub fn clear_enh_logits(&mut self) {
        self.enh_logits = None;
    }

    pub(super) fn validate(&self) -> Result<()> {
        let n = self.len();
        let ok = self.mu.len() == 2 * n
            && self.log_scale.len() == 2 * n
            && self.color.len() == self.channels * n
            && self.opacity_logit.len() == n
            && self.enh_logits.as_ref().is_none_or(|e| e.data.len() == e.atoms * n);
        if !ok {
            return Err(Error::ModelFormat("level arrays have inconsistent lengths".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::ModelFormat("level has a zero dimension".into()));
        }
        Ok(())
    }
}

/// All pyramid levels of a fitted image, coarsest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianSet {
    levels: Vec<Level>,
}

impl GaussianSet {
    pub fn new(levels: Vec<Level>) -> Result<Self> {
        let set = GaussianSet { levels };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.levels {
            l.validate()?;
        }
        for w in self.levels.windows(2) {
            if w[1].height < w[0].height || w[1].width < w[0].width {
                return Err(Error::ModelFormat(
                    "level dimensions must be non-decreasing toward the finest level".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level_mut(&mut self, index: usize) -> &mut Level {
        &mut self.levels[index]
    }

    pub fn push_level(&mut self, level: Level) -> Result<()> {
        if let Some(last) = self.levels.last() {
            if level.height < last.height || level.width < last.width {
                return Err(Error::Shape("levels must be pushed coarse to fine".into()));
            }
        }
        level.validate()?;
        self.levels.push(level);
        Ok(())
    }

    pub fn total_count(&self) -> usize {
        self.levels.iter().map(Level::len).sum()
    }

    pub fn finest_dims(&self) -> Option<(usize, usize)> {
        self.levels.last().map(Level::dims)
    }

    pub fn is_frozen(&self) -> bool {
        !self.levels.is_empty() && self.levels.iter().all(Level::is_frozen)
    }

    pub fn freeze_all(&mut self) {
        self.levels.iter_mut().for_each(Level::freeze);
    }

    /// Atom count of stored enhancement logits, if every level carries them.
    pub fn enh_atoms(&self) -> Option<usize> {
        let first = self.levels.first()?.enh_logits.as_ref()?.atoms;
        self.levels
            .iter()
            .all(|l| l.enh_logits.as_ref().is_some_and(|e| e.atoms == first))
            .then_some(first)
    }

    /// Every level's geometry mapped into the finest level's pixel frame and
    /// concatenated coarse-to-fine.
    pub fn lifted_geometry(&self) -> Primitives {
        let Some((fh, fw)) = self.finest_dims() else {
            return Primitives::default();
        };
        let mut out = Primitives::with_capacity(self.total_count());
        for level in &self.levels {
            let g = level.geometry();
            if level.dims() == (fh, fw) {
                out.extend(&g);
                continue;
            }
            let sx = fw as f64 / level.width as f64;
            let sy = fh as f64 / level.height as f64;
            for i in 0..g.len() {
                let mu = [
                    (g.mu[i][0] + 0.5) * sx - 0.5,
                    (g.mu[i][1] + 0.5) * sy - 0.5,
                ];
                let cov = g.covariance(i);
                let scaled = Sym2 {
                    a: cov.a * sx * sx,
                    b: cov.b * sx * sy,
                    c: cov.c * sy * sy,
                };
                let (theta, scales) = if sx == sy {
                    (g.theta[i], [g.scales(i)[0] * sx, g.scales(i)[1] * sx])
                } else {
                    scaled.to_rotation_scale()
                };
                debug_assert!({
                    let back = covariance(theta, scales);
                    (back.a - scaled.a).abs() <= 1e-6 * (1.0 + scaled.a.abs())
                });
                out.push(mu, [scales[0].ln(), scales[1].ln()], theta, g.opacity_logit[i]);
            }
        }
        out
    }

    /// Concatenated enhancement logits of all levels (coarse-to-fine), if present.
    pub fn lifted_enh_logits(&self) -> Option<(usize, Vec<f64>)> {
        let atoms = self.enh_atoms()?;
        let data = self
            .levels
            .iter()
            .flat_map(|l| l.enh_logits.as_ref().unwrap().data.iter().map(|&v| v as f64))
            .collect();
        Some((atoms, data))
    }

    /// Splits a concatenated logit vector back onto the levels.
    pub fn store_enh_logits(&mut self, atoms: usize, data: &[f64]) -> Result<()> {
        if data.len() != atoms * self.total_count() {
            return Err(Error::Shape("logit vector does not cover every primitive".into()));
        }
        let mut offset = 0;
        for level in &mut self.levels {
            let n = level.len() * atoms;
            level.set_enh_logits(atoms, &data[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }
}
