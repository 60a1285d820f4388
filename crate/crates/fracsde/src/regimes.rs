//! Parameter conditions for well-posedness and the comparison table of
//! known weak/strong regimes.
//!
//! All inequalities are strict; points on a boundary report `false` with a
//! zero residual. Infinite p or q enter through 1/∞ = 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serde for f64 exponents that may be infinite, written as `"inf"`.
pub mod inf_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => parse(&t).map_err(de::Error::custom),
        }
    }

    pub fn parse(t: &str) -> Result<f64, String> {
        match t.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
            s => s.parse().map_err(|_| format!("not a number or inf: {t}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub hurst: f64,
    pub d: usize,
    #[serde(with = "inf_f64")]
    pub p: f64,
    #[serde(with = "inf_f64")]
    pub q: f64,
}

impl RegimeParams {
    pub fn new(hurst: f64, d: usize, p: f64, q: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::domain(format!("H = {hurst} outside (0, 1)")));
        }
        if d == 0 {
            return Err(Error::domain("d must be at least 1"));
        }
        if !(p >= 1.0) || !(q >= 1.0) {
            return Err(Error::domain(format!("p, q must lie in [1, inf], got ({p}, {q})")));
        }
        Ok(Self { hurst, d, p, q })
    }

    fn ip(&self) -> f64 {
        1.0 / self.p
    }

    fn iq(&self) -> f64 {
        1.0 / self.q
    }

    fn hdp(&self) -> f64 {
        self.hurst * self.d as f64 / self.p
    }
}

/// Verdict of one strict inequality with `residual = rhs − lhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub holds: bool,
    pub residual: f64,
}

impl Check {
    fn lt(lhs: f64, rhs: f64) -> Self {
        let residual = rhs - lhs;
        Self { holds: residual > 0.0, residual }
    }
}

/// (H1): 1/q + Hd/p < 1 − H.
pub fn check_h1(r: &RegimeParams) -> Check {
    Check::lt(r.iq() + r.hdp(), 1.0 - r.hurst)
}

/// (H2): p ≥ 2, Hq ≥ 1 and H < ½.
pub fn check_h2(r: &RegimeParams) -> bool {
    h2_without_hurst_cap(r) && r.hurst < 0.5
}

fn h2_without_hurst_cap(r: &RegimeParams) -> bool {
    r.p >= 2.0 && r.hurst * r.q >= 1.0
}

/// Weak existence: (1−H)/q + Hd/p < 1 − H.
pub fn check_weak_lps(r: &RegimeParams) -> Check {
    Check::lt((1.0 - r.hurst) * r.iq() + r.hdp(), 1.0 - r.hurst)
}

/// κ = 1 − H − Hd/p − 1/q.
pub fn kappa(r: &RegimeParams) -> f64 {
    1.0 - r.hurst - r.hdp() - r.iq()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Applicability {
    Applies,
    Fails,
    /// The row makes no claim for this solution type.
    NotClaimed,
    /// The row's stated range lies outside what is encoded here.
    NotEncoded,
}

impl Applicability {
    fn from_bool(b: bool) -> Self {
        if b {
            Applicability::Applies
        } else {
            Applicability::Fails
        }
    }

    pub fn applies(self) -> bool {
        self == Applicability::Applies
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Applicability,
    /// The conditions with their evaluated sides, e.g. `1/q + Hd/p = 0.13 < 0.2`.
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowVerdict {
    pub row: usize,
    pub reference: String,
    pub weak: Verdict,
    pub strong: Verdict,
}

/// Accumulates conjunctions of conditions with a readable rendering.
struct Conj {
    ok: bool,
    parts: Vec<String>,
}

impl Conj {
    fn new() -> Self {
        Self { ok: true, parts: Vec::new() }
    }

    fn lt(mut self, name: &str, lhs: f64, rhs: f64) -> Self {
        let c = Check::lt(lhs, rhs);
        self.ok &= c.holds;
        self.parts.push(format!("{name}: {} {} {}", fmt(lhs), if c.holds { "<" } else { ">=" }, fmt(rhs)));
        self
    }

    fn ge(mut self, name: &str, lhs: f64, rhs: f64) -> Self {
        let h = lhs >= rhs;
        self.ok &= h;
        self.parts.push(format!("{name}: {} {} {}", fmt(lhs), if h { ">=" } else { "<" }, fmt(rhs)));
        self
    }

    fn is(mut self, name: &str, holds: bool) -> Self {
        self.ok &= holds;
        self.parts.push(format!("{name}: {holds}"));
        self
    }

    fn done(self) -> Verdict {
        Verdict { status: Applicability::from_bool(self.ok), rendered: self.parts.join("; ") }
    }
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        let mut s = String::new();
        let _ = write!(s, "{:.6}", v);
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    }
}

fn not_claimed() -> Verdict {
    Verdict { status: Applicability::NotClaimed, rendered: "/".into() }
}

/// The eight comparison rows, in table order.
pub fn table_rows(r: &RegimeParams) -> Vec<RowVerdict> {
    let h = r.hurst;
    let d = r.d as f64;
    let (ip, iq, hdp) = (r.ip(), r.iq(), r.hdp());
    let q_inf = r.q.is_infinite();
    let row = |row: usize, reference: &str, weak: Verdict, strong: Verdict| RowVerdict {
        row,
        reference: reference.into(),
        weak,
        strong,
    };
    let mut out = Vec::with_capacity(8);

    out.push(row(
        1,
        "Krylov-Rockner (2005)",
        not_claimed(),
        Conj::new()
            .lt("2/q + d/p < 1", 2.0 * iq + d * ip, 1.0)
            .ge("p >= 2", r.p, 2.0)
            .ge("q >= 2", r.q, 2.0)
            .is("H = 1/2", h == 0.5)
            .done(),
    ));

    out.push(row(
        2,
        "Anzeletti et al. (2023)",
        Conj::new().is("q = inf", q_inf).lt("d/p < 1/(2H) - 1/2", d * ip, 0.5 / h - 0.5).done(),
        Conj::new()
            .is("q = inf", q_inf)
            .lt("d/p < 1/(2H) - 1", d * ip, 0.5 / h - 1.0)
            .lt("H < 1/2", h, 0.5)
            .done(),
    ));

    out.push(row(
        3,
        "Butkovsky-Gallay (2023)",
        Conj::new().lt("(1-H)/q + Hd/p < 1-H", (1.0 - h) * iq + hdp, 1.0 - h).done(),
        not_claimed(),
    ));

    let b24 = {
        let mut c = Conj::new()
            .ge("p >= 2dH", r.p, 2.0 * d * h)
            .lt("Hd/p + 1/q < 1-H", hdp + iq, 1.0 - h)
            .lt("H < 1/2", h, 0.5);
        let guard = r.p < 1.0 / (1.0 - h) && r.q > 2.0;
        if guard {
            let rhs = (ip - iq) / (ip - 0.5) * (0.5 - h);
            c = c.lt("Hd/p < (1/p - 1/q)/(1/p - 1/2) (1/2 - H) [p < 1/(1-H), q > 2]", hdp, rhs);
        } else {
            c = c.is("third condition vacuous (p >= 1/(1-H) or q <= 2)", true);
        }
        c.done()
    };
    out.push(row(4, "Butkovsky et al. (2024)", b24.clone(), b24));

    out.push(row(
        5,
        "Butkovsky et al. (2023)",
        Conj::new().is("q = inf", q_inf).lt("Hd/p < 1-H", hdp, 1.0 - h).done(),
        not_claimed(),
    ));

    out.push(row(
        6,
        "Catellier-Gubinelli (2016)",
        Conj::new()
            .is("q = inf", q_inf)
            .lt("Hd/p < 1/(2H) - 1", hdp, 0.5 / h - 1.0)
            .lt("H < 1/2", h, 0.5)
            .done(),
        not_claimed(),
    ));

    let gg_strong = if h > 0.0 && h < 1.0 {
        Conj::new().lt("1/min(q,2) + Hd/p < 1-H", 1.0 / r.q.min(2.0) + hdp, 1.0 - h).done()
    } else {
        Verdict { status: Applicability::NotEncoded, rendered: "H outside (0,1) not encoded".into() }
    };
    out.push(row(
        7,
        "Galeati-Gerencser (2022)",
        Conj::new()
            .lt("1/q + Hd/p < 1-H", iq + hdp, 1.0 - h)
            .lt("d/p < 1/(2H) - 1/2", d * ip, 0.5 / h - 0.5)
            .done(),
        gg_strong,
    ));

    let le = |rhs: f64, name: &str| {
        Conj::new()
            .lt(name, iq + hdp, rhs)
            .lt("H < 1/2", h, 0.5)
            .ge("p >= 2", r.p, 2.0)
            .ge("q >= 2", r.q, 2.0)
            .done()
    };
    out.push(row(8, "Le (2020)", le(0.5, "1/q + Hd/p < 1/2"), le(0.5 - h, "1/q + Hd/p < 1/2 - H")));
    out
}

/// Hölder exponent bounds of the solution field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderBounds {
    /// `None` when (H1) fails and the bound does not apply.
    pub time_bound: Option<f64>,
    pub space_bound: Option<f64>,
}

/// time_bound = min(H, 1 − H − Hd/p − (1−H)/q, (1 − 1/q)/2); space bound 1.
pub fn holder_exponents(r: &RegimeParams) -> HolderBounds {
    if !check_h1(r).holds {
        return HolderBounds { time_bound: None, space_bound: None };
    }
    let h = r.hurst;
    let t = h.min(1.0 - h - r.hdp() - (1.0 - h) * r.iq()).min(0.5 * (1.0 - r.iq()));
    HolderBounds { time_bound: Some(t), space_bound: Some(1.0) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub params: RegimeParams,
    pub h1: Check,
    pub h2: bool,
    pub weak_lps: Check,
    pub kappa: f64,
    /// Strong well-posedness through (H1) and (H2).
    pub strong: bool,
    pub literature_rows: Vec<RowVerdict>,
    pub holder: HolderBounds,
}

pub fn classify(r: &RegimeParams) -> RegimeReport {
    let h1 = check_h1(r);
    let h2 = check_h2(r);
    RegimeReport {
        params: *r,
        h1,
        h2,
        weak_lps: check_weak_lps(r),
        kappa: kappa(r),
        strong: h1.holds && h2,
        literature_rows: table_rows(r),
        holder: holder_exponents(r),
    }
}

/// At H = ½ the strong conditions should collapse to 2/q + d/p < 1,
/// p, q ≥ 2. (H2)'s H < ½ clause is dropped here, since with it the
/// conjunction is empty at H = ½. Returns (reduced conditions, target).
pub fn half_reduction(p: f64, q: f64, d: usize) -> (bool, bool) {
    let r = RegimeParams { hurst: 0.5, d, p, q };
    let lhs = check_h1(&r).holds && h2_without_hurst_cap(&r);
    let rhs = 2.0 / q + d as f64 / p < 1.0 && p >= 2.0 && q >= 2.0;
    (lhs, rhs)
}

/// Refuses unless (H1) and (H2) hold, naming the violated inequality.
pub fn require_strong(r: &RegimeParams) -> Result<RegimeReport> {
    let rep = classify(r);
    if !rep.h1.holds {
        return Err(Error::RegimeRefused(format!(
            "(H1) 1/q + Hd/p < 1 - H: {} >= {}",
            fmt(r.iq() + r.hdp()),
            fmt(1.0 - r.hurst)
        )));
    }
    if !rep.h2 {
        let why = if r.p < 2.0 {
            format!("(H2) p >= 2: p = {}", fmt(r.p))
        } else if r.hurst * r.q < 1.0 {
            format!("(H2) Hq >= 1: Hq = {}", fmt(r.hurst * r.q))
        } else {
            format!("(H2) H < 1/2: H = {}", fmt(r.hurst))
        };
        return Err(Error::RegimeRefused(why));
    }
    Ok(rep)
}

/// CSV lattice sweep over p and q with verdict columns
/// `p,q,h1,h2,weak_lps,row_1..row_8` (strong verdict where a row claims one,
/// weak otherwise).
pub fn region_sample(hurst: f64, d: usize, ps: &[f64], qs: &[f64]) -> Result<String> {
    let mut s = String::from("p,q,h1,h2,weak_lps");
    for k in 1..=8 {
        let _ = write!(s, ",row_{k}");
    }
    s.push('\n');
    for &p in ps {
        for &q in qs {
            let r = RegimeParams::new(hurst, d, p, q)?;
            let rep = classify(&r);
            let _ = write!(s, "{},{},{},{},{}", fmt(p), fmt(q), rep.h1.holds, rep.h2, rep.weak_lps.holds);
            for row in &rep.literature_rows {
                let v = if row.strong.status == Applicability::NotClaimed { &row.weak } else { &row.strong };
                let _ = write!(s, ",{}", v.status.applies());
            }
            s.push('\n');
        }
    }
    Ok(s)
}

/// Lattice helper: `n` points between `lo` and `hi` in 1/x (so that the
/// infinite end is reachable), with `hi = inf` allowed.
pub fn reciprocal_lattice(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (1.0 / lo, 1.0 / hi);
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            let inv = a + (b - a) * t;
            if inv == 0.0 {
                f64::INFINITY
            } else {
                1.0 / inv
            }
        })
        .collect()
}
