//! Multiresolution hash encoding and sinusoidal direction encoding.
//!
//! Feature tables are stored level-major inside the flat parameter vector:
//! level `l` occupies `[l·T·F, (l+1)·T·F)` and row `r` of that level starts at
//! `l·T·F + r·F`. Levels whose `(N_l+1)³` vertices fit in the table are
//! indexed densely (`x + (N_l+1)·(y + (N_l+1)·z)`); the rest use the spatial
//! hash `(x·1 ⊕ y·2654435761 ⊕ z·805459861) mod T` in wrapping `u32`
//! arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

/// Positions further than this outside `[0,1]³` are rejected.
pub const DOMAIN_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub table_size_log2: u32,
    pub base_resolution: u32,
    pub max_resolution: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            features_per_level: 2,
            table_size_log2: 14,
            base_resolution: 16,
            max_resolution: 256,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("hash grid: {msg}")));
        if self.levels == 0 {
            return bad("levels must be >= 1");
        }
        if self.features_per_level == 0 {
            return bad("features_per_level must be >= 1");
        }
        if self.table_size_log2 == 0 || self.table_size_log2 > 30 {
            return bad("table_size_log2 must be in 1..=30");
        }
        if self.base_resolution < 2 {
            return bad("base_resolution must be >= 2");
        }
        if self.max_resolution < self.base_resolution {
            return bad("max_resolution must be >= base_resolution");
        }
        if self.max_resolution > 1 << 20 {
            return bad("max_resolution too large");
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1 << self.table_size_log2
    }

    pub fn growth_factor(&self) -> f64 {
        if self.levels <= 1 {
            return 1.0;
        }
        (((self.max_resolution as f64).ln() - (self.base_resolution as f64).ln()) / (self.levels - 1) as f64).exp()
    }

    /// `floor(N_min · b^level)`. A relative 1e-12 nudge keeps the top level
    /// from landing one below `N_max` through rounding in `exp`.
    pub fn resolution(&self, level: usize) -> u32 {
        let r = self.base_resolution as f64 * (level as f64 * self.growth_factor().ln()).exp();
        (r * (1.0 + 1e-12)).floor() as u32
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn param_count(&self) -> usize {
        self.levels * self.table_size() * self.features_per_level
    }

    fn is_dense(&self, resolution: u32) -> bool {
        let side = resolution as u64 + 1;
        side * side * side <= self.table_size() as u64
    }
}

pub fn hash_index(cell: [u32; 3], level: usize, config: &HashGridConfig) -> Result<usize> {
    if level >= config.levels {
        return Err(Error::LevelOutOfRange {
            level,
            levels: config.levels,
        });
    }
    let res = config.resolution(level);
    Ok(vertex_index(cell, res + 1, config.is_dense(res), config.table_size() as u32 - 1))
}

#[inline]
fn vertex_index(cell: [u32; 3], side: u32, dense: bool, mask: u32) -> usize {
    if dense {
        (cell[0] + side * (cell[1] + side * cell[2])) as usize
    } else {
        let h = cell[0].wrapping_mul(PRIMES[0]) ^ cell[1].wrapping_mul(PRIMES[1]) ^ cell[2].wrapping_mul(PRIMES[2]);
        (h & mask) as usize
    }
}

#[derive(Clone, Copy, Debug)]
struct Level {
    resolution: u32,
    dense: bool,
}

/// Precomputed per-level lookup data for a [`HashGridConfig`].
#[derive(Clone, Debug)]
pub struct HashGrid {
    config: HashGridConfig,
    levels: Vec<Level>,
}

/// The 8 interpolation corners of one level: parameter offset of each
/// corner row and its trilinear weight.
pub type LevelCorners = [(u32, f64); 8];

impl HashGrid {
    pub fn new(config: HashGridConfig) -> Result<Self> {
        config.validate()?;
        let levels = (0..config.levels)
            .map(|l| {
                let resolution = config.resolution(l);
                Level {
                    resolution,
                    dense: config.is_dense(resolution),
                }
            })
            .collect();
        Ok(Self { config, levels })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn resolutions(&self) -> Vec<u32> {
        self.levels.iter().map(|l| l.resolution).collect()
    }

    /// Clamps tiny excursions outside `[0,1]³` and rejects larger ones.
    pub fn check_domain(x: [f64; 3]) -> Result<[f64; 3]> {
        let mut out = x;
        for v in out.iter_mut() {
            if !(*v >= -DOMAIN_TOLERANCE && *v <= 1.0 + DOMAIN_TOLERANCE) {
                return Err(Error::Domain(x[0], x[1], x[2]));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(out)
    }

    /// Corner offsets (into the table block of the parameter vector) and
    /// weights for every level, written into `out` (`levels` entries).
    /// `x` must already be inside `[0,1]³`.
    pub fn corners(&self, x: [f64; 3], out: &mut [LevelCorners]) {
        let t = self.config.table_size();
        let f = self.config.features_per_level;
        let mask = t as u32 - 1;
        for (l, (level, slot)) in self.levels.iter().zip(out.iter_mut()).enumerate() {
            let res = level.resolution;
            let mut base = [0u32; 3];
            let mut frac = [0.0f64; 3];
            for a in 0..3 {
                let p = x[a] * res as f64;
                let c = (p.floor() as u32).min(res - 1);
                base[a] = c;
                frac[a] = p - c as f64;
            }
            let level_offset = (l * t * f) as u32;
            for (corner, entry) in slot.iter_mut().enumerate() {
                let mut cell = base;
                let mut w = 1.0;
                for a in 0..3 {
                    if corner & (1 << a) != 0 {
                        cell[a] += 1;
                        w *= frac[a];
                    } else {
                        w *= 1.0 - frac[a];
                    }
                }
                let row = vertex_index(cell, res + 1, level.dense, mask);
                *entry = (level_offset + (row * f) as u32, w);
            }
        }
    }

    /// Interpolates features from precomputed corners into `out`
    /// (`levels · F` values).
    #[inline]
    pub fn gather<R: Real>(&self, corners: &[LevelCorners], tables: &[R], out: &mut [R]) {
        let f = self.config.features_per_level;
        for (l, level) in corners.iter().enumerate() {
            let dst = &mut out[l * f..(l + 1) * f];
            dst.iter_mut().for_each(|v| *v = R::zero());
            for &(offset, w) in level {
                let w = R::from_f64(w);
                let row = &tables[offset as usize..offset as usize + f];
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d += w * v;
                }
            }
        }
    }

    /// Adds `weight · upstream` slices into the corner rows of `grad`.
    #[inline]
    pub fn scatter<R: Real>(&self, corners: &[LevelCorners], upstream: &[R], grad: &mut [R]) {
        let f = self.config.features_per_level;
        for (l, level) in corners.iter().enumerate() {
            let up = &upstream[l * f..(l + 1) * f];
            for &(offset, w) in level {
                let w = R::from_f64(w);
                let row = &mut grad[offset as usize..offset as usize + f];
                for (g, &u) in row.iter_mut().zip(up) {
                    *g += w * u;
                }
            }
        }
    }

    /// Feature vector of length `L·F` for a point of `[0,1]³`.
    pub fn encode<R: Real>(&self, x: [f64; 3], tables: &[R]) -> Result<Vec<R>> {
        self.check_tables(tables.len())?;
        let x = Self::check_domain(x)?;
        let mut corners = vec![[(0u32, 0.0); 8]; self.levels.len()];
        self.corners(x, &mut corners);
        let mut out = vec![R::zero(); self.config.output_dim()];
        self.gather(&corners, tables, &mut out);
        Ok(out)
    }

    /// Sparse gradient of `<upstream, encode(x)>` with respect to the table
    /// entries: `(parameter index, value)` pairs, one per touched feature.
    /// Colliding corners appear as separate pairs; summing them is the
    /// caller's accumulation.
    pub fn encode_backward<R: Real>(&self, x: [f64; 3], upstream: &[R]) -> Result<Vec<(usize, R)>> {
        if upstream.len() != self.config.output_dim() {
            return Err(Error::LengthMismatch {
                expected: self.config.output_dim(),
                actual: upstream.len(),
            });
        }
        let x = Self::check_domain(x)?;
        let f = self.config.features_per_level;
        let mut corners = vec![[(0u32, 0.0); 8]; self.levels.len()];
        self.corners(x, &mut corners);
        let mut out = Vec::with_capacity(self.levels.len() * 8 * f);
        for (l, level) in corners.iter().enumerate() {
            for &(offset, w) in level {
                for j in 0..f {
                    out.push((offset as usize + j, R::from_f64(w) * upstream[l * f + j]));
                }
            }
        }
        Ok(out)
    }

    fn check_tables(&self, len: usize) -> Result<()> {
        if len != self.config.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.config.param_count(),
                actual: len,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinusoidalConfig {
    pub num_frequencies: usize,
}

impl SinusoidalConfig {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        2 * input_dim * self.num_frequencies
    }
}

/// For each frequency `k`: `sin(2^k π v)` for every component, then
/// `cos(2^k π v)` for every component.
pub fn sinusoidal_encode(v: &[f64], config: &SinusoidalConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(config.output_dim(v.len()));
    for k in 0..config.num_frequencies {
        let scale = (1u64 << k) as f64 * std::f64::consts::PI;
        out.extend(v.iter().map(|&c| (scale * c).sin()));
        out.extend(v.iter().map(|&c| (scale * c).cos()));
    }
    out
}
