//! Run configuration, pricing commands and report emission.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceSpec;
use crate::dual::{dual_value, upper_bound, DualConfig};
use crate::error::{Error, Result};
use crate::lattice::{fixtures, Lattice};
use crate::lsm::{
    fit_policy, lower_bound, primal_value, BasisSpec, BoundEstimate, PrimalSetup, RegressionPolicy,
};
use crate::market::{simulate_paths_tagged, stream, ExerciseGrid, GbmParams, PathSet, PayoffSpec};
use crate::oracle::{run_oracle_suite, OracleConfig, OracleReport};
use crate::search::ShiftSearchConfig;

/// Benchmark market: `d` symmetric GBM assets and a discounted max-call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub s0: f64,
    pub r: f64,
    pub delta: f64,
    pub sigma: f64,
    pub assets: usize,
    pub maturity: f64,
    /// Number of exercise periods `J`; dates are `j T / J` for `j = 0..=J`.
    pub periods: usize,
    pub strike: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            s0: 90.0,
            r: 0.05,
            delta: 0.1,
            sigma: 0.2,
            assets: 2,
            maturity: 3.0,
            periods: 9,
            strike: 100.0,
        }
    }
}

impl MarketConfig {
    pub fn params(&self) -> GbmParams {
        GbmParams {
            s0: self.s0,
            r: self.r,
            delta: self.delta,
            sigma: self.sigma,
            d: self.assets,
        }
    }

    pub fn grid(&self) -> Result<ExerciseGrid> {
        ExerciseGrid::equidistant(self.maturity, self.periods)
    }

    pub fn payoff(&self) -> Result<PayoffSpec> {
        PayoffSpec::max_call(self.strike, self.r)
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        self.grid()?;
        self.payoff()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Parse(format!("unknown format '{other}' (expected csv or json)"))),
        }
    }
}

/// Everything needed to reproduce a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketConfig,
    pub risks: Vec<DivergenceSpec>,
    pub n_training: usize,
    pub n_testing: usize,
    pub n_inner: usize,
    pub seed: u64,
    pub basis: String,
    /// Prices are divided by this before entering the basis.
    pub basis_scale: f64,
    pub grid_points: usize,
    pub refine_tolerance: f64,
    pub search: ShiftSearchConfig,
    /// Skip the nested-simulation upper bound.
    pub lower_only: bool,
    /// Extra shifts for the upper bound; the reported upper bound is the
    /// smallest over these and the primal `x*`.
    pub dual_x_values: Vec<f64>,
    /// Report wall time; turn off for byte-identical reports.
    pub record_timing: bool,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            market: MarketConfig::default(),
            risks: vec![DivergenceSpec::AVaR(0.5)],
            n_training: 10_000,
            n_testing: 10_000,
            n_inner: 1_000,
            seed: 2024,
            basis: "sorted-cubic".into(),
            basis_scale: 100.0,
            grid_points: 21,
            refine_tolerance: 1e-3,
            search: ShiftSearchConfig::default(),
            lower_only: false,
            dual_x_values: Vec::new(),
            record_timing: true,
            format: OutputFormat::Csv,
        }
    }
}

impl RunConfig {
    /// Reduced profile for continuous integration.
    pub fn fast() -> Self {
        RunConfig::default().into_fast()
    }

    pub fn into_fast(mut self) -> Self {
        self.n_training = 5_000;
        self.n_testing = 2_000;
        self.n_inner = 200;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        for spec in &self.risks {
            spec.validate()?;
        }
        for (name, v) in [
            ("n_training", self.n_training),
            ("n_testing", self.n_testing),
            ("n_inner", self.n_inner),
        ] {
            if v < 1 {
                return Err(Error::InvalidInput(format!("{name} must be at least 1")));
            }
        }
        if self.grid_points < 3 {
            return Err(Error::InvalidInput("grid_points must be at least 3".into()));
        }
        if self.dual_x_values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("dual_x_values must be finite".into()));
        }
        if !(self.refine_tolerance > 0.0) {
            return Err(Error::InvalidInput("refine_tolerance must be positive".into()));
        }
        self.basis_spec()?;
        self.search.validate()
    }

    pub fn basis_spec(&self) -> Result<BasisSpec> {
        BasisSpec::by_name(&self.basis, self.basis_scale)
    }

    /// Parses TOML, falling back to JSON.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = match toml::from_str(text) {
            Ok(c) => c,
            Err(toml_err) => serde_json::from_str(text).map_err(|json_err| {
                Error::Parse(format!("config is neither TOML ({toml_err}) nor JSON ({json_err})"))
            })?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn primal_setup(&self, spec: DivergenceSpec) -> Result<PrimalSetup> {
        Ok(PrimalSetup {
            spec,
            payoff: self.market.payoff()?,
            params: self.market.params(),
            grid: self.market.grid()?,
            basis: self.basis_spec()?,
            search: self.search,
            n_training: self.n_training,
            n_testing: self.n_testing,
            seed: self.seed,
            grid_points: self.grid_points,
            refine_tolerance: self.refine_tolerance,
        })
    }

    pub fn dual_config(&self) -> DualConfig {
        DualConfig {
            n_inner: self.n_inner,
            seed_offset: 0,
        }
    }

    /// Outer paths of the upper bound; the same testing paths as the
    /// lower bound.
    pub fn testing_paths(&self) -> Result<PathSet> {
        simulate_paths_tagged(
            self.market.params(),
            &self.market.grid()?,
            self.n_testing,
            self.seed,
            stream::TESTING,
        )
    }
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub risk: DivergenceSpec,
    pub label: String,
    pub lower: BoundEstimate,
    pub upper: Option<BoundEstimate>,
    pub x_star: f64,
    pub seconds: f64,
}

/// Lower bound, then the upper bound at the same shift.
pub fn cmd_price(cfg: &RunConfig, spec: DivergenceSpec) -> Result<(ReportRow, RegressionPolicy)> {
    cfg.validate()?;
    spec.validate()?;
    let start = Instant::now();
    let primal = primal_value(&cfg.primal_setup(spec)?)?;
    let x = primal.estimate.x_star;
    let upper = if cfg.lower_only {
        None
    } else {
        let testing = cfg.testing_paths()?;
        let payoff = cfg.market.payoff()?;
        let mut candidates = vec![primal.policy.clone()];
        if !cfg.dual_x_values.is_empty() {
            let training = simulate_paths_tagged(
                cfg.market.params(),
                &cfg.market.grid()?,
                cfg.n_training,
                cfg.seed,
                stream::TRAINING,
            )?;
            let basis = cfg.basis_spec()?;
            for &extra in &cfg.dual_x_values {
                candidates.push(fit_policy(&training, &payoff, spec, extra, &basis)?);
            }
        }
        Some(dual_value(&candidates, &testing, spec, &payoff, &cfg.dual_config())?)
    };
    let row = ReportRow {
        risk: spec,
        label: spec.label(),
        lower: primal.estimate,
        upper,
        x_star: x,
        seconds: if cfg.record_timing { start.elapsed().as_secs_f64() } else { 0.0 },
    };
    Ok((row, primal.policy))
}

/// Bounds for a previously fitted policy, evaluated on fresh testing paths.
pub fn cmd_price_with_policy(cfg: &RunConfig, spec: DivergenceSpec, policy: &RegressionPolicy) -> Result<ReportRow> {
    cfg.validate()?;
    spec.validate()?;
    let start = Instant::now();
    let testing = cfg.testing_paths()?;
    let payoff = cfg.market.payoff()?;
    let x = policy.shift;
    let lower = lower_bound(policy, &testing, &payoff, spec, x)?;
    let upper = if cfg.lower_only {
        None
    } else {
        Some(upper_bound(policy, &testing, spec, &payoff, x, &cfg.dual_config())?)
    };
    Ok(ReportRow {
        risk: spec,
        label: spec.label(),
        lower,
        upper,
        x_star: x,
        seconds: if cfg.record_timing { start.elapsed().as_secs_f64() } else { 0.0 },
    })
}

/// One row per configured risk level.
pub fn cmd_table(cfg: &RunConfig) -> Result<Vec<ReportRow>> {
    if cfg.risks.is_empty() {
        return Err(Error::InvalidInput("the risk list is empty".into()));
    }
    cfg.risks.iter().map(|&spec| cmd_price(cfg, spec).map(|r| r.0)).collect()
}

pub const CSV_HEADER: &str = "risk,label,lower,lower_sd,upper,upper_sd,x_star,seconds";

pub fn render_rows(rows: &[ReportRow], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
        OutputFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in rows {
                let (u, usd) = match &r.upper {
                    Some(u) => (format!("{:.6}", u.value), format!("{:.6}", u.stderr)),
                    None => (String::new(), String::new()),
                };
                out.push_str(&format!(
                    "{},{},{:.6},{:.6},{u},{usd},{:.6},{:.3}\n",
                    r.risk, r.label, r.lower.value, r.lower.stderr, r.x_star, r.seconds
                ));
            }
            Ok(out)
        }
    }
}

/// Resolves `"builtin"`, a fixture name or a JSON file path.
pub fn load_fixtures(source: &str) -> Result<Vec<Lattice>> {
    if source == "builtin" {
        return Ok(fixtures::builtin());
    }
    if fixtures::FIXTURE_NAMES.contains(&source) {
        return Ok(vec![fixtures::by_name(source)?]);
    }
    let mut l = Lattice::load(Path::new(source))?;
    if l.name.is_empty() {
        l.name = source.to_string();
    }
    Ok(vec![l])
}

pub fn cmd_oracle(source: &str, cfg: &OracleConfig) -> Result<OracleReport> {
    let lattices = load_fixtures(source)?;
    Ok(run_oracle_suite(&lattices, cfg))
}
