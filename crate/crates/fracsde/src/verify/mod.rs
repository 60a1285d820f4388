//! Numerical checks of the density, moment, integral and regularity
//! estimates. Every checker returns a [`CheckReport`] with an implied
//! constant and the lattice point where it is attained.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

mod density;
mod flow;
mod integrals;
mod malliavin;

pub use density::{
    bump_lp_norm, check_density_bound, check_product_moment, density_gap_sweep, product_moment_gap_sweep,
    product_moment_ibp, GaussBump,
};
pub use flow::{empirical_flow_regularity, sobolev_level_stability, FlowRegularity};
pub use integrals::{
    check_kernel_bounds, check_shuffle_identity, check_simplex_identity, check_taming_bound, check_taming_mirror,
    kernel_double_integral, simplex_closed_form,
};
pub use malliavin::{
    compactness_beta, compactness_quantities, jacobian_bump_check, picard_check, CompactnessLevel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Unstable,
}

/// Tabular data behind a check, exported as CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Sweep {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_name: String,
    pub verdict: Verdict,
    pub implied_constant: f64,
    pub worst_point: Vec<f64>,
    pub tolerances: BTreeMap<String, f64>,
    /// Wall time in seconds.
    pub runtime: f64,
    /// Named scalar results specific to the check.
    pub values: BTreeMap<String, f64>,
    pub sweep: Sweep,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn value(&self, key: &str) -> f64 {
        self.values.get(key).copied().unwrap_or(f64::NAN)
    }
}

/// Accumulates a report and stamps the runtime on completion.
pub(crate) struct ReportBuilder {
    start: Instant,
    report: CheckReport,
}

impl ReportBuilder {
    pub(crate) fn new(name: &str) -> Self {
        Self {
            start: Instant::now(),
            report: CheckReport {
                check_name: name.to_string(),
                verdict: Verdict::Fail,
                implied_constant: f64::NAN,
                worst_point: Vec::new(),
                tolerances: BTreeMap::new(),
                runtime: 0.0,
                values: BTreeMap::new(),
                sweep: Sweep::default(),
            },
        }
    }

    pub(crate) fn tol(&mut self, key: &str, v: f64) -> &mut Self {
        self.report.tolerances.insert(key.to_string(), v);
        self
    }

    pub(crate) fn value(&mut self, key: &str, v: f64) -> &mut Self {
        self.report.values.insert(key.to_string(), v);
        self
    }

    pub(crate) fn constant(&mut self, c: f64, at: Vec<f64>) -> &mut Self {
        self.report.implied_constant = c;
        self.report.worst_point = at;
        self
    }

    pub(crate) fn sweep(&mut self, s: Sweep) -> &mut Self {
        self.report.sweep = s;
        self
    }

    pub(crate) fn finish(mut self, verdict: Verdict) -> CheckReport {
        self.report.verdict = verdict;
        self.report.runtime = self.start.elapsed().as_secs_f64();
        self.report
    }
}

pub(crate) fn pass_if(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

pub(crate) fn stable_if(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Unstable
    }
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Largest factor separating any value from the median, max(x/m, m/x).
pub(crate) fn median_spread(xs: &[f64]) -> f64 {
    let m = median(xs);
    xs.iter().map(|&x| (x / m).max(m / x)).fold(1.0, f64::max)
}

/// max/min − 1.
pub(crate) fn relative_spread(xs: &[f64]) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi / lo - 1.0
}
