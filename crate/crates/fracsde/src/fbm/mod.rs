//! Fractional Brownian motion: covariance, Volterra kernel, path generators.

mod generate;
mod kernel;

pub use generate::{sample_cholesky, sample_fgn_circulant, sample_volterra, volterra_weights};
pub use kernel::{conditional_variance, kernel_k, FbmKernel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hurst parameter plus a uniform grid on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstGrid {
    pub hurst: f64,
    pub horizon: f64,
    pub n_steps: usize,
}

impl HurstGrid {
    pub fn new(hurst: f64, horizon: f64, n_steps: usize) -> Result<Self> {
        if !(hurst > 0.0 && hurst <= 0.5) {
            return Err(Error::domain(format!("Hurst parameter {hurst} outside (0, 1/2]")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("horizon {horizon} must be positive")));
        }
        if n_steps == 0 {
            return Err(Error::domain("n_steps must be positive"));
        }
        Ok(Self { hurst, horizon, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    /// Grid point `t_i`; the last node is pinned to the horizon exactly.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.time(i)).collect()
    }

    /// Index of the node nearest to `t`.
    pub fn nearest_node(&self, t: f64) -> usize {
        ((t / self.dt()).round().max(0.0) as usize).min(self.n_steps)
    }

    /// The same horizon with `factor` times fewer steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::domain(format!("cannot coarsen {} steps by {factor}", self.n_steps)));
        }
        Self::new(self.hurst, self.horizon, self.n_steps / factor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorTag {
    Cholesky,
    Volterra,
    FgnCirculant,
}

impl GeneratorTag {
    pub fn code(self) -> u8 {
        match self {
            GeneratorTag::Cholesky => 0,
            GeneratorTag::Volterra => 1,
            GeneratorTag::FgnCirculant => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(GeneratorTag::Cholesky),
            1 => Some(GeneratorTag::Volterra),
            2 => Some(GeneratorTag::FgnCirculant),
            _ => None,
        }
    }
}

/// Jointly sampled Wiener increments and fBm values.
///
/// `b` is laid out path-major, then node, then coordinate. `dw` uses the same
/// layout over steps and is empty for generators that do not produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmEnsemble {
    pub grid: HurstGrid,
    pub dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub generator: GeneratorTag,
    pub dw: Vec<f64>,
    pub b: Vec<f64>,
}

impl FbmEnsemble {
    pub fn path_len(&self) -> usize {
        self.grid.n_nodes() * self.dim
    }

    /// fBm values of one path, node-major.
    pub fn path(&self, p: usize) -> &[f64] {
        let len = self.path_len();
        &self.b[p * len..(p + 1) * len]
    }

    pub fn value(&self, p: usize, node: usize, coord: usize) -> f64 {
        self.b[p * self.path_len() + node * self.dim + coord]
    }

    pub fn has_increments(&self) -> bool {
        !self.dw.is_empty()
    }

    /// Wiener increments of one path, step-major; `None` if not generated.
    pub fn increments(&self, p: usize) -> Option<&[f64]> {
        if self.dw.is_empty() {
            return None;
        }
        let len = self.grid.n_steps * self.dim;
        Some(&self.dw[p * len..(p + 1) * len])
    }

    /// Keeps every `factor`-th node; increments are summed accordingly.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        let d = self.dim;
        let mut b = Vec::with_capacity(self.n_paths * grid.n_nodes() * d);
        let mut dw = Vec::new();
        for p in 0..self.n_paths {
            let path = self.path(p);
            for i in 0..grid.n_nodes() {
                b.extend_from_slice(&path[i * factor * d..(i * factor + 1) * d]);
            }
            if let Some(inc) = self.increments(p) {
                for i in 0..grid.n_steps {
                    for k in 0..d {
                        dw.push((0..factor).map(|j| inc[(i * factor + j) * d + k]).sum());
                    }
                }
            }
        }
        Ok(Self { grid, dim: d, n_paths: self.n_paths, seed: self.seed, generator: self.generator, dw, b })
    }

    /// Empirical covariance of coordinate `coord` at two nodes, with the
    /// standard error of the product mean.
    pub fn empirical_cov(&self, i: usize, j: usize, coord: usize) -> crate::mc::Estimate {
        let prods: Vec<f64> =
            (0..self.n_paths).map(|p| self.value(p, i, coord) * self.value(p, j, coord)).collect();
        crate::mc::Estimate::from_values(&prods)
    }
}

/// fBm covariance ½(s^{2H} + t^{2H} − |t−s|^{2H}).
pub fn covariance(t: f64, s: f64, hurst: f64) -> Result<f64> {
    if t < 0.0 || s < 0.0 {
        return Err(Error::domain(format!("negative time in covariance({t}, {s})")));
    }
    Ok(cov_unchecked(t, s, hurst))
}

pub(crate) fn cov_unchecked(t: f64, s: f64, hurst: f64) -> f64 {
    let e = 2.0 * hurst;
    0.5 * (s.powf(e) + t.powf(e) - (t - s).abs().powf(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_examples() {
        assert!((covariance(1.0, 1.0, 0.17).unwrap() - 1.0).abs() < 1e-15);
        assert!((covariance(2.0, 3.0, 0.5).unwrap() - 2.0).abs() < 1e-14);
        // hand evaluation: 0.5 * (1 + sqrt 2 - 1)
        assert!((covariance(1.0, 2.0, 0.25).unwrap() - 0.707_106_781_186_547_6).abs() < 1e-12);
        assert!(covariance(-1.0, 2.0, 0.25).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(HurstGrid::new(0.6, 1.0, 4).is_err());
        assert!(HurstGrid::new(0.3, 0.0, 4).is_err());
        assert!(HurstGrid::new(0.3, 1.0, 0).is_err());
        let g = HurstGrid::new(0.5, 2.0, 8).unwrap();
        let t = g.times();
        assert_eq!(t[0], 0.0);
        assert_eq!(t[8], 2.0);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn generator_codes_round_trip() {
        for g in [GeneratorTag::Cholesky, GeneratorTag::Volterra, GeneratorTag::FgnCirculant] {
            assert_eq!(GeneratorTag::from_code(g.code()), Some(g));
        }
        assert_eq!(GeneratorTag::from_code(9), None);
    }
}
