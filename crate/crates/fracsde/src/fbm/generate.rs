use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::kernel::FbmKernel;
use super::{cov_unchecked, FbmEnsemble, GeneratorTag, HurstGrid};
use crate::error::{Error, Result};
use crate::mc::{par_map, path_rng};
use crate::quad::{self, QuadSpec};

const BATCH: usize = 256;

/// Packed lower-triangular table A[i][j] = ∫_{j−1}^{j} K_H(i, u) du on the
/// unit-spaced grid, rows i = 1..=n, entries j = 1..=i.
///
/// Self-similarity K_H(ct, cs) = c^{H−½} K_H(t, s) means the table does not
/// depend on the step size; the cell average on a grid of step dt is
/// dt^{H−½}·A[i][j]. Rows are cached per H and extended on demand.
pub fn volterra_weights(hurst: f64, n: usize) -> Result<Arc<Vec<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let need = n * (n + 1) / 2;
    let have = cache.lock().unwrap().get(&hurst.to_bits()).cloned();
    if let Some(w) = &have {
        if w.len() >= need {
            return Ok(w.clone());
        }
    }
    let kernel = FbmKernel::new(hurst)?;
    let mut table = have.map(|w| (*w).clone()).unwrap_or_default();
    let first_row = row_of_len(table.len()) + 1;
    let e = hurst - 0.5;
    let spec = QuadSpec::with_tol(1e-11, 1e-10);
    let rows: Vec<Vec<f64>> = par_map(n + 1 - first_row, 1, |r| {
        let i = first_row + r;
        let t = i as f64;
        (1..=i)
            .map(|j| {
                let (a, b) = ((j - 1) as f64, j as f64);
                if hurst == 0.5 {
                    1.0
                } else if i == 1 {
                    quad::integrate_sing_both(|u, g| kernel.eval_gap(u, g), a, b, e, e, &spec).value
                } else if j == 1 {
                    quad::integrate_sing_left(|u| kernel.eval_gap(u, t - u), a, b, e, &spec).value
                } else if j == i {
                    quad::integrate_sing_right(|g| kernel.eval_gap(t - g, g), a, b, e, &spec).value
                } else {
                    quad::integrate(|u| kernel.eval_gap(u, t - u), a, b, &spec).value
                }
            })
            .collect()
    });
    for r in rows {
        table.extend(r);
    }
    let table = Arc::new(table);
    cache.lock().unwrap().insert(hurst.to_bits(), table.clone());
    Ok(table)
}

/// Number of complete rows in a packed table of `len` entries.
fn row_of_len(len: usize) -> usize {
    let mut r = 0;
    while (r + 1) * (r + 2) / 2 <= len {
        r += 1;
    }
    r
}

fn check_request(d: usize, n_paths: usize) -> Result<()> {
    if d == 0 || n_paths == 0 {
        return Err(Error::domain("dimension and path count must be positive"));
    }
    Ok(())
}

/// Volterra generator: Wiener increments mapped through cell-averaged
/// kernel weights. Stores both `dw` and `b`.
pub fn sample_volterra(grid: &HurstGrid, d: usize, n_paths: usize, seed: u64) -> Result<FbmEnsemble> {
    check_request(d, n_paths)?;
    let n = grid.n_steps;
    let weights = volterra_weights(grid.hurst, n)?;
    let dt = grid.dt();
    let sd = dt.sqrt();
    let scale = dt.powf(grid.hurst - 0.5);
    let per_path = par_map(n_paths, BATCH, |p| {
        let mut rng = path_rng(seed, p as u64);
        let dw: Vec<f64> = (0..n * d).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut b = vec![0.0; (n + 1) * d];
        for k in 0..d {
            for i in 1..=n {
                let row = &weights[(i - 1) * i / 2..i * (i + 1) / 2];
                let mut acc = 0.0;
                for (j, w) in row.iter().enumerate() {
                    acc += w * dw[j * d + k];
                }
                b[i * d + k] = scale * acc;
            }
        }
        (dw, b)
    });
    let mut dw = Vec::with_capacity(n_paths * n * d);
    let mut b = Vec::with_capacity(n_paths * (n + 1) * d);
    for (w, x) in per_path {
        dw.extend(w);
        b.extend(x);
    }
    Ok(FbmEnsemble { grid: *grid, dim: d, n_paths, seed, generator: GeneratorTag::Volterra, dw, b })
}

type CholKey = (usize, u64, u64);

fn cholesky_factor(grid: &HurstGrid) -> Result<Arc<Vec<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<CholKey, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (grid.n_steps, grid.horizon.to_bits(), grid.hurst.to_bits());
    if let Some(l) = cache.lock().unwrap().get(&key) {
        return Ok(l.clone());
    }
    let n = grid.n_steps;
    let cov = DMatrix::from_fn(n, n, |i, j| cov_unchecked(grid.time(i + 1), grid.time(j + 1), grid.hurst));
    let l = match cov.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let max_diag = cov.diagonal().max();
            let jitter = 1e-12 * max_diag;
            log::warn!("Cholesky failed, retrying with diagonal jitter {jitter:e}");
            let mut cj = cov.clone();
            for i in 0..n {
                cj[(i, i)] += jitter;
            }
            match cj.cholesky() {
                Some(c) => c.l(),
                None => {
                    let ev = cov.symmetric_eigenvalues();
                    let cond = ev.max() / ev.min().abs().max(f64::MIN_POSITIVE);
                    return Err(Error::Numeric(format!(
                        "covariance factorization failed (condition estimate {cond:e})"
                    )));
                }
            }
        }
    };
    let mut packed = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            packed.push(l[(i, j)]);
        }
    }
    let packed = Arc::new(packed);
    cache.lock().unwrap().insert(key, packed.clone());
    Ok(packed)
}

/// Exact Gaussian sampling from the covariance matrix of the grid values.
pub fn sample_cholesky(grid: &HurstGrid, d: usize, n_paths: usize, seed: u64) -> Result<FbmEnsemble> {
    check_request(d, n_paths)?;
    let n = grid.n_steps;
    let l = cholesky_factor(grid)?;
    let per_path = par_map(n_paths, BATCH, |p| {
        let mut rng = path_rng(seed, p as u64);
        let mut b = vec![0.0; (n + 1) * d];
        let mut z = vec![0.0; n];
        for k in 0..d {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            for i in 0..n {
                let row = &l[i * (i + 1) / 2..(i + 1) * (i + 2) / 2];
                b[(i + 1) * d + k] = row.iter().zip(&z).map(|(a, x)| a * x).sum();
            }
        }
        b
    });
    let b = per_path.into_iter().flatten().collect();
    Ok(FbmEnsemble {
        grid: *grid,
        dim: d,
        n_paths,
        seed,
        generator: GeneratorTag::Cholesky,
        dw: Vec::new(),
        b,
    })
}

/// Eigenvalues of the circulant embedding of unit-step fGn, length 2n.
fn circulant_eigenvalues(hurst: f64, n: usize) -> Result<Arc<Vec<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&(n, hurst.to_bits())) {
        return Ok(v.clone());
    }
    let e = 2.0 * hurst;
    let gamma = |k: usize| {
        let k = k as f64;
        0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
    };
    let m = 2 * n;
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|k| {
            let lag = if k <= n { k } else { m - k };
            Complex::new(gamma(lag), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut row);
    let mut eig = Vec::with_capacity(m);
    for c in row {
        let l = c.re;
        if l < -1e-10 {
            return Err(Error::Numeric(format!("circulant embedding eigenvalue {l:e} is negative")));
        }
        if l < 0.0 {
            log::warn!("clipping circulant eigenvalue {l:e} to zero");
        }
        eig.push(l.max(0.0));
    }
    let eig = Arc::new(eig);
    cache.lock().unwrap().insert((n, hurst.to_bits()), eig.clone());
    Ok(eig)
}

/// Circulant-embedding fGn, cumulated into fBm. O(n log n) per path.
pub fn sample_fgn_circulant(grid: &HurstGrid, d: usize, n_paths: usize, seed: u64) -> Result<FbmEnsemble> {
    check_request(d, n_paths)?;
    let n = grid.n_steps;
    let m = 2 * n;
    let eig = circulant_eigenvalues(grid.hurst, n)?;
    let fft = FftPlanner::new().plan_fft_forward(m);
    let scale = grid.dt().powf(grid.hurst);
    let per_path = par_map(n_paths, BATCH, |p| {
        let mut rng = path_rng(seed, p as u64);
        let mut b = vec![0.0; (n + 1) * d];
        let mut w = vec![Complex::new(0.0, 0.0); m];
        for k in 0..d {
            for (j, c) in w.iter_mut().enumerate() {
                let s = (eig[j] / m as f64).sqrt();
                *c = Complex::new(s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal));
            }
            fft.process(&mut w);
            // real and imaginary parts are each exact fGn; the real part is used
            let mut acc = 0.0;
            for i in 0..n {
                acc += scale * w[i].re;
                b[(i + 1) * d + k] = acc;
            }
        }
        b
    });
    let b = per_path.into_iter().flatten().collect();
    Ok(FbmEnsemble {
        grid: *grid,
        dim: d,
        n_paths,
        seed,
        generator: GeneratorTag::FgnCirculant,
        dw: Vec::new(),
        b,
    })
}
