use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fracsde::config::{CheckKind, Experiment, RunConfig};
use fracsde::drift::DriftKind;
use fracsde::fbm::GeneratorTag;
use fracsde::regimes::inf_f64;
use fracsde::run::run;
use fracsde::{Error, Result};

/// Simulation and numerical checks for SDEs driven by fractional Brownian
/// motion with singular drift.
#[derive(Parser, Debug)]
#[command(name = "fracsde", version)]
struct Cli {
    /// TOML run configuration; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample noise and solve the SDE; writes paths, solution and summary.
    Simulate(Overrides),
    /// Girsanov weights and the Kazamaki diagnostic.
    Girsanov(Overrides),
    /// Mollification-level and step-halving convergence of a singular drift.
    Converge(Overrides),
    /// Flow regularity: Hölder slopes and weighted Sobolev norms.
    Flow(Overrides),
    /// Run one numerical check.
    Verify(Overrides),
    /// Classify (H, d, p, q) against the well-posedness conditions.
    Regimes(Overrides),
    /// Run the experiment named in the config file.
    Run(Overrides),
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long = "H")]
    hurst: Option<f64>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// cholesky, volterra or fgn_circulant.
    #[arg(long, value_parser = parse_generator)]
    generator: Option<GeneratorTag>,
    /// Drift as `kind:key=value,...`, e.g. `bump:amp=0.5,width=1,center=0`.
    #[arg(long, value_parser = parse_drift)]
    drift: Option<DriftKind>,
    #[arg(long, value_parser = inf_f64::parse)]
    p: Option<f64>,
    /// Accepts `inf`.
    #[arg(long, value_parser = inf_f64::parse)]
    q: Option<f64>,
    #[arg(long)]
    box_half_width: Option<f64>,
    #[arg(long)]
    x0: Option<f64>,
    /// Comma-separated mollification levels.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Comma-separated step coarsening factors, finest last.
    #[arg(long, value_delimiter = ',')]
    step_factors: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<f64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    csv_paths: Option<usize>,
    /// Also write the binary path cache.
    #[arg(long)]
    cache: bool,
    /// Read noise from a path cache instead of sampling.
    #[arg(long)]
    input_cache: Option<PathBuf>,
    #[arg(long, value_enum)]
    check: Option<CheckKind>,
}

fn parse_generator(s: &str) -> std::result::Result<GeneratorTag, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_drift(s: &str) -> std::result::Result<DriftKind, String> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut table = toml::Table::new();
    table.insert("kind".into(), toml::Value::String(kind.trim().to_string()));
    for kv in rest.split(',').filter(|t| !t.trim().is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got `{kv}`"))?;
        let v: f64 = v.trim().parse().map_err(|_| format!("`{}` is not a number", v.trim()))?;
        table.insert(k.trim().to_string(), toml::Value::Float(v));
    }
    table.try_into().map_err(|e: toml::de::Error| e.message().to_string())
}

impl Overrides {
    fn apply(self, c: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { c.$target = v; })*
            };
        }
        set!(hurst => hurst, horizon => horizon, n_steps => n_steps, d => d, n_paths => n_paths, seed => seed,
            generator => generator, drift => drift, p => p, q => q, box_half_width => box_half_width, x0 => x0,
            levels => mollification_levels, step_factors => step_factors, checkpoints => checkpoints,
            output_dir => output_dir, batch_size => batch_size, csv_paths => csv_paths, check => check);
        if self.cache {
            c.cache = true;
        }
        if self.input_cache.is_some() {
            c.input_cache = self.input_cache;
        }
    }
}

/// Defaults, then the config file, then `FRACSDE_OUT`, then flags.
fn resolve(cli: Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    let (experiment, ov) = match cli.command {
        Command::Simulate(o) => (Some(Experiment::Simulate), o),
        Command::Girsanov(o) => (Some(Experiment::Girsanov), o),
        Command::Converge(o) => (Some(Experiment::Converge), o),
        Command::Flow(o) => (Some(Experiment::Flow), o),
        Command::Verify(o) => (Some(Experiment::Verify), o),
        Command::Regimes(o) => (Some(Experiment::Regimes), o),
        Command::Run(o) => {
            if cli.config.is_none() {
                return Err(Error::Usage("`run` needs --config".into()));
            }
            (None, o)
        }
    };
    if let Some(e) = experiment {
        cfg.experiment = e;
    }
    ov.apply(&mut cfg);
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = resolve(cli).and_then(|cfg| {
        let out = run(&cfg)?;
        for f in &out.files {
            println!("{}", f.display());
        }
        Ok(out)
    });
    match result {
        Ok(out) => match out.check {
            Some(r) if !r.passed() => {
                eprintln!("{}: {:?}", r.check_name, r.verdict);
                ExitCode::from(1)
            }
            _ => ExitCode::SUCCESS,
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
