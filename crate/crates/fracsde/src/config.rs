//! Run configuration: a versioned TOML schema with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drift::{DriftField, DriftKind};
use crate::error::{Error, Result};
use crate::fbm::{GeneratorTag, HurstGrid};
use crate::regimes::{inf_f64, require_strong, RegimeParams, RegimeReport};

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable overriding `output_dir`.
pub const OUTPUT_ENV: &str = "FRACSDE_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    Girsanov,
    Converge,
    Flow,
    Verify,
    Regimes,
}

/// Checks reachable from the `verify` experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum CheckKind {
    /// Time-increment slope of the solution against 2H.
    Holder,
    Kernel,
    /// Kernel-increment double integral under quadrature refinement.
    DoubleIntegral,
    Density,
    Simplex,
    Shuffle,
    Taming,
    Jacobian,
    Picard,
    Compactness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    #[serde(rename = "H")]
    pub hurst: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_steps: usize,
    pub d: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub generator: GeneratorTag,
    pub drift: DriftKind,
    /// Integrability exponents declared for the drift.
    #[serde(with = "inf_f64")]
    pub p: f64,
    #[serde(with = "inf_f64")]
    pub q: f64,
    pub box_half_width: f64,
    /// Initial value, the same in every coordinate.
    pub x0: f64,
    pub mollification_levels: Vec<f64>,
    /// Step coarsening factors for self-convergence, finest last.
    pub step_factors: Vec<usize>,
    pub output_dir: PathBuf,
    /// Finest relative quadrature tolerance of the double-integral check.
    pub quad_rel_tol: f64,
    pub checkpoints: Vec<f64>,
    pub batch_size: usize,
    /// Write the binary path cache next to the reports.
    pub cache: bool,
    /// Number of paths exported to CSV.
    pub csv_paths: usize,
    /// Check run by the `verify` experiment.
    pub check: CheckKind,
    /// Path cache to read instead of sampling, if present.
    pub input_cache: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: Experiment::Simulate,
            hurst: 0.3,
            horizon: 1.0,
            n_steps: 256,
            d: 1,
            n_paths: 1000,
            seed: 1,
            generator: GeneratorTag::Volterra,
            drift: DriftKind::Zero,
            p: 4.0,
            q: f64::INFINITY,
            box_half_width: 3.0,
            x0: 0.0,
            mollification_levels: vec![0.5, 0.25, 0.125, 0.0625],
            step_factors: vec![4, 2, 1],
            output_dir: PathBuf::from("out"),
            quad_rel_tol: 1e-5,
            checkpoints: vec![0.25, 0.5, 0.75, 1.0],
            batch_size: 64,
            cache: false,
            csv_paths: 100,
            check: CheckKind::Holder,
            input_cache: None,
        }
    }
}

fn field_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), msg: msg.into() }
}

impl RunConfig {
    /// Parses TOML; a missing key takes its default. Errors name the
    /// offending field path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let mut base = toml::Table::try_from(Self::default()).expect("default config serializes");
        let overlay: toml::Table = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            field_err(&path, e.into_inner().message().trim().to_string())
        })?;
        for (k, v) in overlay {
            base.insert(k, v);
        }
        let cfg: Self = serde_path_to_error::deserialize(base)
            .map_err(|e| field_err(&e.path().to_string(), e.into_inner().to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| field_err(".", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| field_err("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies `FRACSDE_OUT` when set and non-empty.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    /// Schema-level checks, naming the field at fault.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(field_err(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(field_err("H", format!("must lie in (0, 1), got {}", self.hurst)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(field_err("T", format!("must be positive, got {}", self.horizon)));
        }
        if self.n_steps == 0 {
            return Err(field_err("n_steps", "must be positive"));
        }
        if !(1..=3).contains(&self.d) {
            return Err(field_err("d", format!("must be 1, 2 or 3, got {}", self.d)));
        }
        if self.n_paths == 0 {
            return Err(field_err("n_paths", "must be positive"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(field_err("seed", format!("must fit a signed 64-bit TOML integer, got {}", self.seed)));
        }
        if self.batch_size == 0 {
            return Err(field_err("batch_size", "must be positive"));
        }
        if !(self.p >= 1.0) {
            return Err(field_err("p", format!("must be at least 1, got {}", self.p)));
        }
        if !(self.q >= 1.0) {
            return Err(field_err("q", format!("must be at least 1, got {}", self.q)));
        }
        if let Some(e) = self.mollification_levels.iter().find(|e| !(**e > 0.0)) {
            return Err(field_err("mollification_levels", format!("levels must be positive, got {e}")));
        }
        if self.step_factors.iter().any(|&f| f == 0 || self.n_steps % f != 0) {
            return Err(field_err("step_factors", format!("each factor must divide n_steps = {}", self.n_steps)));
        }
        if let Some(c) = self.checkpoints.iter().find(|c| !(**c > 0.0 && **c <= self.horizon)) {
            return Err(field_err("checkpoints", format!("{c} outside (0, T]")));
        }
        if !(self.quad_rel_tol > 0.0 && self.quad_rel_tol < 1.0) {
            return Err(field_err("quad_rel_tol", format!("must lie in (0, 1), got {}", self.quad_rel_tol)));
        }
        self.drift_field().map_err(|e| field_err("drift", e.to_string()))?;
        Ok(())
    }

    pub fn grid(&self) -> Result<HurstGrid> {
        HurstGrid::new(self.hurst, self.horizon, self.n_steps)
    }

    pub fn regime(&self) -> Result<RegimeParams> {
        RegimeParams::new(self.hurst, self.d, self.p, self.q)
    }

    pub fn drift_field(&self) -> Result<DriftField> {
        DriftField::new(self.drift.clone(), self.d, self.box_half_width)
    }

    pub fn x0_vec(&self) -> Vec<f64> {
        vec![self.x0; self.d]
    }

    /// The regime gate: convergence studies and Girsanov runs on singular
    /// drifts need the strong conditions to hold.
    pub fn gate(&self) -> Result<Option<RegimeReport>> {
        let needs = match self.experiment {
            Experiment::Converge => true,
            Experiment::Girsanov => self.drift_field()?.is_singular(),
            _ => false,
        };
        if needs {
            require_strong(&self.regime()?).map(Some)
        } else {
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_keys_take_defaults() {
        let c = RunConfig::from_toml("experiment = \"flow\"\nH = 0.25\n").unwrap();
        assert_eq!(c.experiment, Experiment::Flow);
        assert_eq!(c.hurst, 0.25);
        assert_eq!(c.n_steps, RunConfig::default().n_steps);
    }

    #[test]
    fn unknown_key_names_field() {
        let e = RunConfig::from_toml("[drift]\nkind = \"bump\"\namp = 1.0\nwidth = 1.0\ncenter = 0.0\nsize = 2\n")
            .unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("drift"), "{e}");
    }

    #[test]
    fn bad_value_names_field() {
        let e = RunConfig::from_toml("n_paths = 0\n").unwrap_err();
        assert!(e.to_string().contains("`n_paths`"), "{e}");
        let e = RunConfig::from_toml("H = \"half\"\n").unwrap_err();
        assert!(e.to_string().contains("`H`"), "{e}");
    }

    #[test]
    fn infinite_q_roundtrips() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(back.q.is_infinite());
    }

    #[test]
    fn converge_is_gated() {
        let mut c = RunConfig { experiment: Experiment::Converge, ..RunConfig::default() };
        c.drift = DriftKind::SingularPower { gamma: 0.3, radius: 1.0 };
        assert!(c.gate().unwrap().is_some());
        c.p = 1.2;
        assert_eq!(c.gate().unwrap_err().exit_code(), 3);
    }
}
