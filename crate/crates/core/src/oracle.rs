//! Exact consistency checks on lattices, reported as one line per check.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::divergence::{initial_bracket, DivergenceSpec};
use crate::error::{Error, Result};
use crate::lattice::{
    enumerate_stopping_times, find_saddle, kernel_distribution, kernel_objective, minimax_check,
    pathwise_dual_check, robust_value_lattice, shifted_rewards, snell_envelope, tail_integral_objective,
    Lattice, MinimaxConfig, StoppingRule, DEFAULT_ENUMERATION_CAP,
};
use crate::stats::sample_variance;

/// Tolerance of the exact identities (DP, Doob-Meyer, pathwise dual).
pub const EXACT_TOLERANCE: f64 = 1e-12;
/// Tolerance of the randomized minimax equality.
pub const MINIMAX_TOLERANCE: f64 = 1e-6;
/// Slack allowed in the weak-duality inequalities.
pub const WEAK_DUALITY_SLACK: f64 = 1e-9;
/// Tolerance of the tail-integral representation.
pub const TAIL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub fixture: String,
    pub check: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OracleReport {
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail).count()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!("{} {} {}: {}\n", c.status, c.fixture, c.check, c.detail));
        }
        let pass = self.checks.iter().filter(|c| c.status == CheckStatus::Pass).count();
        let skip = self.checks.iter().filter(|c| c.status == CheckStatus::Skipped).count();
        out.push_str(&format!("{pass} passed, {} failed, {skip} skipped\n", self.failures()));
        out
    }

    fn push(&mut self, lattice: &Lattice, check: impl Into<String>, ok: bool, detail: String) {
        self.checks.push(CheckResult {
            fixture: lattice.name.clone(),
            check: check.into(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            detail,
        });
    }

    fn skip(&mut self, lattice: &Lattice, check: impl Into<String>, detail: String) {
        self.checks.push(CheckResult {
            fixture: lattice.name.clone(),
            check: check.into(),
            status: CheckStatus::Skipped,
            detail,
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub specs: Vec<DivergenceSpec>,
    pub enumeration_cap: u64,
    pub minimax: MinimaxConfig,
    /// Points of the shift grid handed to the minimax and saddle checks.
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            specs: vec![
                DivergenceSpec::AVaR(0.5),
                DivergenceSpec::Entropic(0.3),
                DivergenceSpec::Power(2.0),
                DivergenceSpec::RiskNeutral,
            ],
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            minimax: MinimaxConfig::default(),
            grid_points: 41,
            seed: 17,
        }
    }
}

/// Runs every check on every lattice.
pub fn run_oracle_suite(lattices: &[Lattice], cfg: &OracleConfig) -> OracleReport {
    let mut report = OracleReport::default();
    for l in lattices {
        check_lattice(l, cfg, &mut report);
    }
    report
}

fn check_lattice(l: &Lattice, cfg: &OracleConfig, report: &mut OracleReport) {
    let y = l.payoffs();
    let snell = match snell_envelope(l, &y) {
        Ok(s) => s,
        Err(e) => {
            report.push(l, "snell", false, e.to_string());
            return;
        }
    };
    let v0 = snell.root_value();

    match enumerate_stopping_times(l, &y, cfg.enumeration_cap) {
        Ok((best, _)) => {
            let diff = (best - v0).abs();
            report.push(
                l,
                "dp-enumeration",
                diff <= EXACT_TOLERANCE,
                format!("dp {v0:.12} enumeration {best:.12} diff {diff:.2e}"),
            );
        }
        Err(e @ Error::EnumerationCap { .. }) => report.skip(l, "dp-enumeration", e.to_string()),
        Err(e) => report.push(l, "dp-enumeration", false, e.to_string()),
    }

    let mut rebuild = 0.0f64;
    let mut cond_mean = 0.0f64;
    let mut monotone = snell.compensator[0] == 0.0 && snell.martingale[0] == 0.0;
    for id in l.top_down() {
        rebuild = rebuild.max((v0 + snell.martingale[id] - snell.compensator[id] - snell.value[id]).abs());
        let node = l.node(id);
        if !node.children.is_empty() {
            let m: f64 = node
                .children
                .iter()
                .zip(&node.probs)
                .map(|(&c, &p)| p * (snell.martingale[c] - snell.martingale[id]))
                .sum();
            cond_mean = cond_mean.max(m.abs());
            monotone &= node.children.iter().all(|&c| snell.compensator[c] >= snell.compensator[id]);
        }
    }
    report.push(
        l,
        "doob-meyer",
        rebuild <= EXACT_TOLERANCE && cond_mean <= EXACT_TOLERANCE && monotone,
        format!("reconstruction {rebuild:.2e} increment mean {cond_mean:.2e} compensator monotone {monotone}"),
    );

    let dual = pathwise_dual_check(l, &y, &snell.martingale, v0);
    let var = sample_variance(&dual.path_maxima);
    report.push(
        l,
        "pathwise-dual",
        dual.max_deviation <= EXACT_TOLERANCE && var <= 1e-18,
        format!("deviation {:.2e} variance {var:.2e}", dual.max_deviation),
    );

    mixture_checks(l, &y, &snell.optimal_rule(l, &y), cfg, report);

    let (lo, hi) = initial_bracket(&y);
    let n = cfg.grid_points.max(2);
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    for &spec in &cfg.specs {
        spec_checks(l, &y, spec, &grid, cfg, report);
    }
}

fn mixture_checks(l: &Lattice, y: &[f64], optimal: &StoppingRule, cfg: &OracleConfig, report: &mut OracleReport) {
    let a = StoppingRule::at_level(l, 0).to_kernel(l);
    let b = optimal.to_kernel(l);
    let lambda = 0.3;
    let outcome = (|| -> Result<(f64, f64)> {
        let mixed = kernel_distribution(l, y, &a.mixture(&b, lambda)?)?;
        let by_law = kernel_distribution(l, y, &a)?.mix(&kernel_distribution(l, y, &b)?, lambda)?;
        let mut law = 0.0f64;
        if mixed.support() != by_law.support() {
            law = f64::INFINITY;
        } else {
            for (p, q) in mixed.probs().iter().zip(by_law.probs()) {
                law = law.max((p - q).abs());
            }
        }
        // the objective is affine in the kernel for every fixed shift
        let mut affine = 0.0f64;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mix = a.mixture(&b, lambda)?;
        for &spec in &cfg.specs {
            let x = rng.random_range(-5.0..2.0);
            let lhs = kernel_objective(l, y, &mix, spec, x);
            let rhs = lambda * kernel_objective(l, y, &a, spec, x)
                + (1.0 - lambda) * kernel_objective(l, y, &b, spec, x);
            affine = affine.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
        }
        Ok((law, affine))
    })();
    match outcome {
        Ok((law, affine)) => report.push(
            l,
            "mixture-law",
            law <= 1e-15 && affine <= 1e-13,
            format!("law diff {law:.2e} affine diff {affine:.2e}"),
        ),
        Err(e) => report.push(l, "mixture-law", false, e.to_string()),
    }
}

fn spec_checks(
    l: &Lattice,
    y: &[f64],
    spec: DivergenceSpec,
    grid: &[f64],
    cfg: &OracleConfig,
    report: &mut OracleReport,
) {
    let tag = |name: &str| format!("{name}[{spec}]");

    // tail integral on the laws of a few stopping rules
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37);
    for j in [0, l.depth() / 2, l.depth()] {
        let k = StoppingRule::at_level(l, j).to_kernel(l);
        let Ok(dist) = kernel_distribution(l, y, &k) else { continue };
        for _ in 0..4 {
            let x = rng.random_range(-6.0..3.0);
            let direct = dist.expectation(|v| spec.phi_star(x + v)) - x;
            match tail_integral_objective(&dist, spec, x) {
                Ok(t) => worst = worst.max((t - direct).abs()),
                Err(_) => worst = f64::INFINITY,
            }
        }
    }
    report.push(l, tag("tail-integral"), worst <= TAIL_TOLERANCE, format!("max diff {worst:.2e}"));

    // convexity of the robust objective on the grid
    let values: Vec<f64> = grid
        .iter()
        .map(|&x| {
            snell_envelope(l, &shifted_rewards(y, spec, x))
                .map(|s| s.root_value())
                .unwrap_or(f64::NAN)
        })
        .collect();
    let worst_curv = values
        .windows(3)
        .map(|w| w[0] - 2.0 * w[1] + w[2])
        .fold(f64::INFINITY, f64::min);
    let robust = robust_value_lattice(l, y, spec, &cfg.minimax.search);
    let grid_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    match robust {
        Ok((v, x)) => report.push(
            l,
            tag("robust-value"),
            worst_curv >= -1e-9 && v <= grid_min + 1e-9,
            format!("value {v:.10} at x {x:.6}, grid min {grid_min:.10}, min curvature {worst_curv:.2e}"),
        ),
        Err(e) => report.push(l, tag("robust-value"), false, e.to_string()),
    }

    let mm_cfg = MinimaxConfig {
        enumeration_cap: cfg.minimax.enumeration_cap.min(cfg.enumeration_cap),
        ..cfg.minimax
    };
    match minimax_check(l, y, spec, grid, &mm_cfg) {
        Ok(r) => {
            let det = r.sup_inf_deterministic;
            let weak = det.map_or(true, |d| d <= r.sup_inf_randomized + WEAK_DUALITY_SLACK)
                && r.sup_inf_randomized <= r.inf_sup + WEAK_DUALITY_SLACK;
            let gap = (r.inf_sup - r.sup_inf_randomized).abs();
            let det_text = det.map_or("capped".to_string(), |d| format!("{d:.10}"));
            report.push(
                l,
                tag("minimax"),
                weak && gap <= MINIMAX_TOLERANCE,
                format!(
                    "inf-sup {:.10} sup-inf randomized {:.10} deterministic {det_text} gap {gap:.2e} cuts {}",
                    r.inf_sup,
                    r.sup_inf_randomized,
                    r.cuts.len()
                ),
            );
        }
        Err(e) => report.push(l, tag("minimax"), false, e.to_string()),
    }

    match find_saddle(l, y, spec, grid, &cfg.minimax) {
        Ok(s) => report.push(
            l,
            tag("saddle"),
            true,
            format!(
                "x* {:.8} value {:.10} violations {:.2e} / {:.2e}",
                s.x_star, s.value, s.stopping_violation, s.shift_violation
            ),
        ),
        Err(e) => report.push(l, tag("saddle"), false, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::fixtures;

    #[test]
    fn builtin_suite_passes() {
        let report = run_oracle_suite(&fixtures::builtin(), &OracleConfig::default());
        assert!(report.passed(), "{}", report.render_text());
    }
}
