use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::divergence::{oce_value_weighted, DivergenceSpec};
use crate::error::{Error, Result};
use crate::search::ShiftSearchConfig;

use super::enumerate::for_each_stopping_rule;
use super::kernel::{kernel_distribution, kernel_objective, RandomizedKernel};
use super::snell::{robust_value_lattice, shifted_rewards, snell_envelope};
use super::{Lattice, StoppingRule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimaxConfig {
    /// Largest number of deterministic rules enumerated for the
    /// deterministic max-min; above it that value is reported as `None`.
    pub enumeration_cap: u64,
    /// Stop adding cuts once the LP bound and the certified kernel value
    /// are this close.
    pub gap_tolerance: f64,
    pub max_cuts: usize,
    /// Largest violation of either saddle inequality accepted by
    /// [`find_saddle`].
    pub saddle_tolerance: f64,
    pub search: ShiftSearchConfig,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        MinimaxConfig {
            enumeration_cap: 1 << 16,
            gap_tolerance: 1e-10,
            max_cuts: 500,
            saddle_tolerance: 1e-8,
            search: ShiftSearchConfig {
                x_tolerance: 1e-12,
                ..ShiftSearchConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxReport {
    /// `inf_x sup_tau`, solved by backward induction per `x`.
    pub inf_sup: f64,
    pub x_star: f64,
    /// `sup` over randomized kernels of `inf_x`, certified by the kernel
    /// below.
    pub sup_inf_randomized: f64,
    /// LP value over the final cut set; an upper bound for
    /// `sup_inf_randomized`.
    pub lp_bound: f64,
    pub kernel: RandomizedKernel,
    /// `sup` over deterministic rules of `inf_x`, or `None` when the rule
    /// count exceeds the enumeration cap.
    pub sup_inf_deterministic: Option<f64>,
    pub deterministic_rule: Option<StoppingRule>,
    pub cuts: Vec<f64>,
}

impl MinimaxReport {
    /// Checks `sup_inf_deterministic <= sup_inf_randomized <= inf_sup` and
    /// `sup_inf_randomized = inf_sup`, all within `tol`.
    pub fn chain_holds(&self, tol: f64) -> bool {
        let det_ok = self
            .sup_inf_deterministic
            .map_or(true, |d| d <= self.sup_inf_randomized + tol);
        det_ok
            && self.sup_inf_randomized <= self.inf_sup + tol
            && (self.inf_sup - self.sup_inf_randomized).abs() <= tol
    }
}

fn lp_error(e: impl std::fmt::Display) -> Error {
    Error::LinearProgram(e.to_string())
}

/// Maximin value of a kernel over a finite set of shifts:
/// `max t` s.t. `t <= sum_n reach_n w_n phi*(x_k + y_n) - x_k` for every
/// cut `x_k`, path masses summing to one, `w >= 0`.
fn solve_cut_lp(lattice: &Lattice, y: &[f64], spec: DivergenceSpec, cuts: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let w: Vec<_> = (0..lattice.len()).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    for path in lattice.paths() {
        let row: Vec<_> = path.iter().map(|&id| (w[id], 1.0)).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Eq, 1.0);
    }
    let reach = lattice.reach();
    for &x in cuts {
        let mut row: Vec<_> = (0..lattice.len())
            .map(|id| (w[id], -reach[id] * spec.phi_star(x + y[id])))
            .collect();
        row.push((t, 1.0));
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, -x);
    }
    let sol = lp.solve().map_err(lp_error)?.into_solution().map_err(|_| lp_error("LP solve interrupted"))?;
    let mass = w.iter().map(|&v| sol.var_value(v).clamp(0.0, 1.0)).collect();
    Ok((sol.var_value(t), mass))
}

/// Computes both sides of the minimax identity on a lattice.
///
/// The randomized max-min is found by a cutting-plane LP started from the
/// shifts in `x_grid` (plus the minimizing shift of the min-max side); each
/// round adds a cut at the minimizing shift of the current kernel.
pub fn minimax_check(
    lattice: &Lattice,
    y: &[f64],
    spec: DivergenceSpec,
    x_grid: &[f64],
    cfg: &MinimaxConfig,
) -> Result<MinimaxReport> {
    spec.validate()?;
    if y.len() != lattice.len() {
        return Err(Error::InvalidInput("payoff vector does not match the lattice".into()));
    }
    if let Some(id) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::MalformedLattice {
            node: id,
            reason: "non-finite payoff".into(),
        });
    }
    let (inf_sup, x_star) = robust_value_lattice(lattice, y, spec, &cfg.search)?;

    let kernel_inf = |mass: &[f64]| -> Result<(f64, f64)> {
        let k = RandomizedKernel::new_unchecked(mass.to_vec());
        let d = kernel_distribution(lattice, y, &k)?;
        oce_value_weighted(spec, d.support(), d.probs(), &cfg.search)
    };

    let mut cuts: Vec<f64> = x_grid.iter().copied().filter(|x| x.is_finite()).collect();
    cuts.push(x_star);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut lp_bound = f64::INFINITY;
    for _ in 0..cfg.max_cuts {
        let (t, mass) = solve_cut_lp(lattice, y, spec, &cuts)?;
        lp_bound = lp_bound.min(t);
        let (value, x_min) = kernel_inf(&mass)?;
        if best.as_ref().map_or(true, |(b, _)| value > *b) {
            best = Some((value, mass));
        }
        let certified = best.as_ref().expect("set above").0;
        if lp_bound - certified <= cfg.gap_tolerance {
            break;
        }
        if cuts.iter().any(|&c| c == x_min) {
            // no new information; the remaining gap is search noise
            break;
        }
        cuts.push(x_min);
    }
    let (sup_inf_randomized, mass) = best.expect("at least one LP round");
    let kernel = RandomizedKernel::new(lattice, mass)?;

    let mut det: Option<(f64, StoppingRule)> = None;
    let mut failure = None;
    let visited = for_each_stopping_rule(lattice, cfg.enumeration_cap, |rule| {
        if failure.is_some() {
            return;
        }
        match kernel_inf(rule.to_kernel(lattice).masses()) {
            Ok((v, _)) => {
                if det.as_ref().map_or(true, |(b, _)| v > *b) {
                    det = Some((v, rule.clone()));
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let (sup_inf_deterministic, deterministic_rule) = match visited {
        Ok(()) => {
            let (v, r) = det.expect("at least one rule");
            (Some(v), Some(r))
        }
        Err(Error::EnumerationCap { .. }) => (None, None),
        Err(e) => return Err(e),
    };

    Ok(MinimaxReport {
        inf_sup,
        x_star,
        sup_inf_randomized,
        lp_bound,
        kernel,
        sup_inf_deterministic,
        deterministic_rule,
        cuts,
    })
}

/// Saddle point `(x*, kernel*)` of `E[phi*(x + y_tau)] - x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Saddle {
    pub x_star: f64,
    pub kernel: RandomizedKernel,
    pub value: f64,
    /// `sup_tau J(tau, x*) - J(kernel*, x*)`.
    pub stopping_violation: f64,
    /// `J(kernel*, x*) - min_x J(kernel*, x)`, the minimum taken over the
    /// continuum and over `x_grid`.
    pub shift_violation: f64,
}

/// Locates a saddle point and verifies both inequalities; fails with
/// [`Error::NoSaddle`] when either is violated by more than the tolerance.
pub fn find_saddle(
    lattice: &Lattice,
    y: &[f64],
    spec: DivergenceSpec,
    x_grid: &[f64],
    cfg: &MinimaxConfig,
) -> Result<Saddle> {
    let no_enum = MinimaxConfig {
        enumeration_cap: 0,
        ..*cfg
    };
    let report = minimax_check(lattice, y, spec, x_grid, &no_enum)?;
    let x = report.x_star;
    let value = kernel_objective(lattice, y, &report.kernel, spec, x);
    let best_response = snell_envelope(lattice, &shifted_rewards(y, spec, x))?.root_value();
    let stopping_violation = best_response - value;
    let grid_min = x_grid
        .iter()
        .map(|&g| kernel_objective(lattice, y, &report.kernel, spec, g))
        .fold(report.sup_inf_randomized, f64::min);
    let shift_violation = value - grid_min;
    let gap = stopping_violation.max(shift_violation);
    if !(gap <= cfg.saddle_tolerance) {
        return Err(Error::NoSaddle { gap });
    }
    Ok(Saddle {
        x_star: x,
        kernel: report.kernel,
        value,
        stopping_violation,
        shift_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::fixtures;

    #[test]
    fn deterministic_chain_has_no_gap() {
        let l = fixtures::by_name("chain").unwrap();
        let y = l.payoffs();
        let spec = DivergenceSpec::AVaR(0.5);
        let r = minimax_check(&l, &y, spec, &[-5.0, -1.0, 0.0], &MinimaxConfig::default()).unwrap();
        let best = y.iter().copied().fold(f64::MIN, f64::max);
        assert!((r.inf_sup - best).abs() < 1e-9);
        assert!((r.sup_inf_randomized - best).abs() < 1e-9);
        assert!((r.sup_inf_deterministic.unwrap() - best).abs() < 1e-9);
    }

    #[test]
    fn risk_neutral_is_the_snell_value() {
        let l = fixtures::by_name("binomial-4").unwrap();
        let y = l.payoffs();
        let r = minimax_check(&l, &y, DivergenceSpec::RiskNeutral, &[0.0], &MinimaxConfig::default()).unwrap();
        let v = snell_envelope(&l, &y).unwrap().root_value();
        assert!((r.inf_sup - v).abs() < 1e-12);
        assert!((r.sup_inf_randomized - v).abs() < 1e-9);
        assert!(r.chain_holds(1e-9));
    }

    #[test]
    fn cap_turns_deterministic_side_off() {
        let l = fixtures::by_name("one-step").unwrap();
        let cfg = MinimaxConfig {
            enumeration_cap: 1,
            ..MinimaxConfig::default()
        };
        let r = minimax_check(&l, &l.payoffs(), DivergenceSpec::Entropic(0.5), &[], &cfg).unwrap();
        assert!(r.sup_inf_deterministic.is_none());
    }
}
