//! Monte Carlo plumbing: counter-keyed substreams, compensated reductions,
//! batched execution and a two-sample KS test.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generator for replicate `index` under `seed`.
///
/// The ChaCha stream id is the path index, so draws for a path never depend
/// on how paths are grouped into batches or spread over workers.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = compensated_sum(values.iter().copied()) / n as f64;
        if n == 1 {
            return Self { mean, se: f64::NAN, n };
        }
        let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        let var = ss / (n as f64 - 1.0);
        Self { mean, se: (var / n as f64).sqrt(), n }
    }

    /// Whether `target` lies within `k` standard errors plus `rel` relative slack.
    pub fn covers(&self, target: f64, k: f64, rel: f64) -> bool {
        (self.mean - target).abs() <= k * self.se + rel * target.abs()
    }

    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub estimate: f64,
    pub standard_error: f64,
    pub n_effective: usize,
    pub excluded_paths: usize,
    pub seed: u64,
    pub wall_time: f64,
}

/// Maximum tolerated fraction of excluded paths.
pub const MAX_EXCLUDED_FRACTION: f64 = 1e-3;

/// Number of workers used by the batch runner.
pub fn worker_count() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Evaluates `f(i)` for `i in 0..n`, fanning contiguous batches out to
/// scoped threads; output order is always the index order.
pub fn par_map<T, F>(n: usize, batch_size: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let batch_size = batch_size.max(1);
    let n_batches = n.div_ceil(batch_size);
    let workers = worker_count().min(n_batches.max(1));
    if workers <= 1 {
        return (0..n).map(&f).collect();
    }
    let mut slots: Vec<Option<Vec<T>>> = (0..n_batches).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = n_batches.div_ceil(workers);
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    let lo = w * chunk;
                    let hi = ((w + 1) * chunk).min(n_batches);
                    (lo..hi)
                        .map(|b| {
                            let start = b * batch_size;
                            let end = (start + batch_size).min(n);
                            (b, (start..end).map(f).collect::<Vec<T>>())
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (b, v) in h.join().expect("worker panicked") {
                slots[b] = Some(v);
            }
        }
    });
    slots.into_iter().flat_map(|s| s.unwrap_or_default()).collect()
}

/// Runs a per-path task and reduces the results.
///
/// `task(i, rng)` returns `Ok(Some(x))` for a usable path, `Ok(None)` for an
/// excluded one. A task error aborts the run and names the batch.
pub fn mc_batch<F>(task: F, n_paths: usize, seed: u64, batch_size: usize) -> Result<McSummary>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<Option<f64>> + Sync,
{
    if n_paths == 0 {
        return Err(Error::Usage("mc_batch needs at least one path".into()));
    }
    if batch_size == 0 {
        return Err(Error::Usage("batch_size must be positive".into()));
    }
    let start = Instant::now();
    let results = par_map(n_paths, batch_size, |i| {
        let mut rng = path_rng(seed, i as u64);
        task(i, &mut rng)
    });
    let mut values = Vec::with_capacity(n_paths);
    let mut excluded = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(Some(x)) => values.push(x),
            Ok(None) => excluded += 1,
            Err(e) => return Err(Error::Batch { index: i / batch_size, msg: e.to_string() }),
        }
    }
    if excluded as f64 > MAX_EXCLUDED_FRACTION * n_paths as f64 {
        return Err(Error::Numeric(format!("{excluded} of {n_paths} paths excluded")));
    }
    let est = Estimate::from_values(&values);
    Ok(McSummary {
        estimate: est.mean,
        standard_error: est.se,
        n_effective: values.len(),
        excluded_paths: excluded,
        seed,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn streams_are_keyed_by_index() {
        let a: f64 = path_rng(7, 3).sample(StandardNormal);
        let b: f64 = path_rng(7, 3).sample(StandardNormal);
        let c: f64 = path_rng(7, 4).sample(StandardNormal);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn zero_paths_rejected() {
        assert!(mc_batch(|_, _| Ok(Some(1.0)), 0, 1, 8).is_err());
    }

    #[test]
    fn ks_same_sample_accepts() {
        let a: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
    }

    #[test]
    fn ks_shifted_sample_rejects() {
        let mut r = path_rng(1, 0);
        let a: Vec<f64> = (0..2000).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..2000).map(|_| r.sample::<f64, _>(StandardNormal) + 0.3).collect();
        assert!(ks_two_sample(&a, &b).1 < 1e-6);
    }
}
