//! Regression-based (Longstaff-Schwartz) stopping rules for the shifted
//! reward `Z_j(x) = phi*(x + Y_j) - x`, and the low-biased estimate of the
//! robust value obtained by minimizing over the shift.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::market::{simulate_paths_tagged, stream, ExerciseGrid, GbmParams, PathSet, PayoffSpec};
use crate::search::{golden_section, grid_then_golden, ShiftSearchConfig};
use crate::stats::mean_and_stderr;

/// Regression basis families over the sorted prices and current payoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    /// Monomials up to degree three in the two largest prices, plus `y, y^2`
    /// (12 functions for `d >= 2`, 6 for `d = 1`).
    SortedCubic,
    /// Monomials up to degree two in the two largest prices, plus `y`.
    SortedQuadratic,
}

/// Regression basis with the price scale used to normalize its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub scale: f64,
}

impl BasisSpec {
    pub fn sorted_cubic(scale: f64) -> Self {
        BasisSpec {
            kind: BasisKind::SortedCubic,
            scale,
        }
    }

    pub fn by_name(name: &str, scale: f64) -> Result<Self> {
        let kind = match name {
            "sorted-cubic" => BasisKind::SortedCubic,
            "sorted-quadratic" => BasisKind::SortedQuadratic,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown basis '{other}' (expected sorted-cubic or sorted-quadratic)"
                )))
            }
        };
        if !(scale > 0.0) {
            return Err(Error::InvalidInput("basis scale must be positive".into()));
        }
        Ok(BasisSpec { kind, scale })
    }

    pub fn len(&self, d: usize) -> usize {
        self.names(d).len()
    }

    pub fn is_empty(&self, d: usize) -> bool {
        self.len(d) == 0
    }

    /// Names of the basis functions for `d` assets.
    pub fn names(&self, d: usize) -> Vec<&'static str> {
        match (self.kind, d) {
            (BasisKind::SortedCubic, 1) => vec!["1", "s1", "s1^2", "s1^3", "y", "y^2"],
            (BasisKind::SortedCubic, _) => vec![
                "1", "s1", "s2", "s1^2", "s2^2", "s1*s2", "s1^3", "s2^3", "s1^2*s2", "s1*s2^2",
                "y", "y^2",
            ],
            (BasisKind::SortedQuadratic, 1) => vec!["1", "s1", "s1^2", "y"],
            (BasisKind::SortedQuadratic, _) => vec!["1", "s1", "s2", "s1^2", "s2^2", "s1*s2", "y"],
        }
    }

    /// Writes the basis values for one state into `out`.
    #[inline]
    pub fn eval(&self, prices: &[f64], y: f64, out: &mut [f64]) {
        let inv = 1.0 / self.scale;
        let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &p in prices {
            if p > a {
                b = a;
                a = p;
            } else if p > b {
                b = p;
            }
        }
        let s1 = a * inv;
        let s2 = b * inv;
        let y = y * inv;
        match (self.kind, prices.len()) {
            (BasisKind::SortedCubic, 1) => {
                out.copy_from_slice(&[1.0, s1, s1 * s1, s1 * s1 * s1, y, y * y]);
            }
            (BasisKind::SortedCubic, _) => out.copy_from_slice(&[
                1.0,
                s1,
                s2,
                s1 * s1,
                s2 * s2,
                s1 * s2,
                s1 * s1 * s1,
                s2 * s2 * s2,
                s1 * s1 * s2,
                s1 * s2 * s2,
                y,
                y * y,
            ]),
            (BasisKind::SortedQuadratic, 1) => out.copy_from_slice(&[1.0, s1, s1 * s1, y]),
            (BasisKind::SortedQuadratic, _) => {
                out.copy_from_slice(&[1.0, s1, s2, s1 * s1, s2 * s2, s1 * s2, y])
            }
        }
    }
}

/// Continuation-value regressions defining the stopping rule for one shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionPolicy {
    /// Shift `x` the policy was fitted for.
    pub shift: f64,
    pub basis: BasisSpec,
    pub basis_names: Vec<String>,
    pub dates: Vec<f64>,
    pub assets: usize,
    /// Continuation estimate at `t_0`, where all paths share one state.
    pub initial_continuation: f64,
    /// Coefficients for dates `1..J-1`; entry `k` belongs to date `k + 1`.
    pub coefficients: Vec<Vec<f64>>,
    /// Dates whose normal equations needed the ridge fallback.
    pub ridge_dates: Vec<usize>,
}

impl RegressionPolicy {
    pub fn last_date(&self) -> usize {
        self.dates.len() - 1
    }

    /// Fitted continuation value at date `j` for the given features.
    #[inline]
    pub fn continuation(&self, j: usize, features: &[f64]) -> f64 {
        if j == 0 {
            return self.initial_continuation;
        }
        self.coefficients[j - 1]
            .iter()
            .zip(features)
            .map(|(b, f)| b * f)
            .sum()
    }

    /// Stop when the reward weakly exceeds the fitted continuation value.
    #[inline]
    pub fn should_stop(&self, j: usize, z: f64, features: &[f64]) -> bool {
        j == self.last_date() || z >= self.continuation(j, features)
    }

    /// Stopping decision from a raw state (computes the features).
    #[inline]
    pub fn should_stop_at(&self, j: usize, prices: &[f64], y: f64, z: f64, scratch: &mut [f64]) -> bool {
        if j == self.last_date() {
            return true;
        }
        if j == 0 {
            return z >= self.initial_continuation;
        }
        self.basis.eval(prices, y, scratch);
        z >= self.continuation(j, scratch)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: RegressionPolicy = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.basis.len(self.assets);
        if self.dates.is_empty() {
            return Err(Error::InvalidInput("policy has no dates".into()));
        }
        if self.coefficients.len() != self.dates.len().saturating_sub(2) {
            return Err(Error::InvalidInput(format!(
                "policy has {} coefficient vectors for {} dates",
                self.coefficients.len(),
                self.dates.len()
            )));
        }
        for (i, c) in self.coefficients.iter().enumerate() {
            if c.len() != k || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "coefficients for date {} are malformed",
                    i + 1
                )));
            }
        }
        if !self.shift.is_finite() || !self.initial_continuation.is_finite() {
            return Err(Error::InvalidInput("policy values must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Lower,
    Upper,
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub x_star: f64,
    pub kind: BoundKind,
}

impl BoundEstimate {
    pub fn from_samples(samples: &[f64], x_star: f64, kind: BoundKind) -> Self {
        let (value, stderr) = mean_and_stderr(samples);
        BoundEstimate {
            value,
            stderr,
            n: samples.len(),
            x_star,
            kind,
        }
    }
}

/// Payoffs and basis features of a path set, computed once and reused
/// across shifts.
#[derive(Debug, Clone)]
pub struct PathData {
    pub n: usize,
    pub dates: usize,
    pub k: usize,
    /// `Y` per `[path][date]`.
    pub payoffs: Vec<f64>,
    /// Basis values per `[path][date][k]`.
    pub features: Vec<f64>,
}

impl PathData {
    pub fn new(paths: &PathSet, payoff: &PayoffSpec, basis: &BasisSpec) -> Self {
        let n = paths.n_paths();
        let dates = paths.n_dates();
        let k = basis.len(paths.n_assets());
        let times = paths.grid.dates();
        let mut payoffs = vec![0.0; n * dates];
        let mut features = vec![0.0; n * dates * k];
        payoffs
            .par_chunks_mut(dates)
            .zip(features.par_chunks_mut(dates * k))
            .enumerate()
            .for_each(|(i, (ys, fs))| {
                for j in 0..dates {
                    let s = paths.state(i, j);
                    let y = payoff.value(s, times[j]);
                    ys[j] = y;
                    basis.eval(s, y, &mut fs[j * k..(j + 1) * k]);
                }
            });
        PathData {
            n,
            dates,
            k,
            payoffs,
            features,
        }
    }

    #[inline]
    pub fn y(&self, i: usize, j: usize) -> f64 {
        self.payoffs[i * self.dates + j]
    }

    #[inline]
    pub fn feat(&self, i: usize, j: usize) -> &[f64] {
        let s = (i * self.dates + j) * self.k;
        &self.features[s..s + self.k]
    }

    pub fn max_payoff(&self) -> f64 {
        self.payoffs.iter().copied().fold(0.0, f64::max)
    }
}

/// Factorized normal equations per regression date.
struct DateSolver {
    chol: Cholesky<f64, nalgebra::Dyn>,
    ridge: bool,
}

/// Training paths with their shift-independent regression structure.
pub struct TrainingSet {
    pub data: PathData,
    solvers: Vec<DateSolver>,
    basis: BasisSpec,
    times: Vec<f64>,
    assets: usize,
}

/// Relative size of the smallest Cholesky pivot below which the normal
/// equations are treated as rank deficient.
const PIVOT_FLOOR: f64 = 1e-12;
const RIDGE: f64 = 1e-10;

impl TrainingSet {
    pub fn new(paths: &PathSet, payoff: &PayoffSpec, basis: &BasisSpec) -> Result<Self> {
        let data = PathData::new(paths, payoff, basis);
        let k = data.k;
        if data.dates > 2 && data.n < k {
            return Err(Error::InvalidInput(format!(
                "{} training paths cannot support a {k}-function basis",
                data.n
            )));
        }
        let mut solvers = Vec::new();
        for j in 1..data.dates.saturating_sub(1) {
            let mut gram = DMatrix::<f64>::zeros(k, k);
            for i in 0..data.n {
                let f = data.feat(i, j);
                for a in 0..k {
                    for b in 0..=a {
                        gram[(a, b)] += f[a] * f[b];
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    gram[(b, a)] = gram[(a, b)];
                }
            }
            gram /= data.n as f64;
            solvers.push(factorize(gram)?);
        }
        Ok(TrainingSet {
            data,
            solvers,
            basis: *basis,
            times: paths.grid.dates().to_vec(),
            assets: paths.n_assets(),
        })
    }

    /// Backward induction on `Z_j(x)` over all training paths.
    pub fn fit(&self, spec: DivergenceSpec, x: f64) -> RegressionPolicy {
        let d = &self.data;
        let last = d.dates - 1;
        let k = d.k;
        let mut cash: Vec<f64> = (0..d.n).map(|i| spec.phi_star(x + d.y(i, last)) - x).collect();
        let mut coefficients = vec![Vec::new(); last.saturating_sub(1)];
        let mut ridge_dates = Vec::new();
        for j in (1..last).rev() {
            let solver = &self.solvers[j - 1];
            let mut rhs = DVector::<f64>::zeros(k);
            for (i, c) in cash.iter().enumerate() {
                for (r, f) in rhs.iter_mut().zip(d.feat(i, j)) {
                    *r += f * c;
                }
            }
            rhs /= d.n as f64;
            let beta = solver.chol.solve(&rhs);
            for (i, c) in cash.iter_mut().enumerate() {
                let z = spec.phi_star(x + d.y(i, j)) - x;
                let cont: f64 = beta.iter().zip(d.feat(i, j)).map(|(b, f)| b * f).sum();
                if z >= cont {
                    *c = z;
                }
            }
            if solver.ridge {
                ridge_dates.push(j);
            }
            coefficients[j - 1] = beta.iter().copied().collect();
        }
        ridge_dates.reverse();
        let initial_continuation = if last == 0 {
            f64::INFINITY
        } else {
            cash.iter().sum::<f64>() / d.n as f64
        };
        RegressionPolicy {
            shift: x,
            basis: self.basis,
            basis_names: self.basis.names(self.assets).iter().map(|s| s.to_string()).collect(),
            dates: self.times.clone(),
            assets: self.assets,
            // a single-date grid has no continuation; keep JSON finite
            initial_continuation: if initial_continuation.is_finite() {
                initial_continuation
            } else {
                f64::MAX
            },
            coefficients,
            ridge_dates,
        }
    }
}

fn factorize(gram: DMatrix<f64>) -> Result<DateSolver> {
    let k = gram.nrows();
    let scale = (0..k).map(|a| gram[(a, a)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if let Some(chol) = Cholesky::new(gram.clone()) {
        let l = chol.l_dirty();
        let min_pivot = (0..k).map(|a| l[(a, a)] * l[(a, a)]).fold(f64::INFINITY, f64::min);
        if min_pivot > PIVOT_FLOOR * scale {
            return Ok(DateSolver { chol, ridge: false });
        }
    }
    let trace: f64 = (0..k).map(|a| gram[(a, a)]).sum();
    let lambda = RIDGE * (trace / k as f64).max(f64::MIN_POSITIVE);
    let ridged = gram + DMatrix::<f64>::identity(k, k) * lambda;
    let chol = Cholesky::new(ridged)
        .ok_or_else(|| Error::InvalidInput("normal equations are not positive definite".into()))?;
    Ok(DateSolver { chol, ridge: true })
}

/// Fits a stopping rule for shift `x` on the training paths.
pub fn fit_policy(
    training: &PathSet,
    payoff: &PayoffSpec,
    spec: DivergenceSpec,
    x: f64,
    basis: &BasisSpec,
) -> Result<RegressionPolicy> {
    spec.validate()?;
    if !x.is_finite() {
        return Err(Error::InvalidInput("shift must be finite".into()));
    }
    Ok(TrainingSet::new(training, payoff, basis)?.fit(spec, x))
}

fn check_shift(policy: &RegressionPolicy, x: f64) -> Result<()> {
    if (policy.shift - x).abs() > 1e-9 * (1.0 + x.abs()) {
        return Err(Error::InvalidInput(format!(
            "policy was fitted for x = {}, not {x}",
            policy.shift
        )));
    }
    Ok(())
}

/// Realized rewards `Z_tau` of the policy on precomputed path data.
pub fn policy_rewards(policy: &RegressionPolicy, data: &PathData, spec: DivergenceSpec) -> Vec<f64> {
    let x = policy.shift;
    (0..data.n)
        .into_par_iter()
        .map(|i| {
            for j in 0..data.dates {
                let z = spec.phi_star(x + data.y(i, j)) - x;
                if policy.should_stop(j, z, data.feat(i, j)) {
                    return z;
                }
            }
            unreachable!("policies always stop at the last date")
        })
        .collect()
}

/// Low-biased estimate of `sup_tau E[Z_tau(x)]` from fresh paths.
pub fn lower_bound(
    policy: &RegressionPolicy,
    testing: &PathSet,
    payoff: &PayoffSpec,
    spec: DivergenceSpec,
    x: f64,
) -> Result<BoundEstimate> {
    check_shift(policy, x)?;
    check_compatible(policy, testing)?;
    let data = PathData::new(testing, payoff, &policy.basis);
    let rewards = policy_rewards(policy, &data, spec);
    Ok(BoundEstimate::from_samples(&rewards, x, BoundKind::Lower))
}

pub(crate) fn check_compatible(policy: &RegressionPolicy, paths: &PathSet) -> Result<()> {
    if policy.dates.as_slice() != paths.grid.dates() || policy.assets != paths.n_assets() {
        return Err(Error::InvalidInput(
            "policy and paths use different grids or asset counts".into(),
        ));
    }
    Ok(())
}

/// Inputs of the primal (lower bound) computation.
#[derive(Debug, Clone)]
pub struct PrimalSetup {
    pub spec: DivergenceSpec,
    pub payoff: PayoffSpec,
    pub params: GbmParams,
    pub grid: ExerciseGrid,
    pub basis: BasisSpec,
    pub search: ShiftSearchConfig,
    pub n_training: usize,
    pub n_testing: usize,
    pub seed: u64,
    /// Points of the coarse shift grid.
    pub grid_points: usize,
    /// Tolerance of the golden-section refinement of the shift.
    pub refine_tolerance: f64,
}

/// Primal estimate together with the policy fitted at `x*`.
#[derive(Debug, Clone)]
pub struct PrimalResult {
    pub estimate: BoundEstimate,
    pub policy: RegressionPolicy,
    /// In-sample minimum over the shift on the search paths.
    pub search_value: f64,
    /// Coarse grid `(x, estimate)` evaluated with common random numbers.
    pub search_curve: Vec<(f64, f64)>,
}

/// Low-biased estimate of the robust value: `min_x` of the regression
/// lower bound, with a fresh evaluation at the minimizing shift.
pub fn primal_value(setup: &PrimalSetup) -> Result<PrimalResult> {
    setup.spec.validate()?;
    setup.search.validate()?;
    if setup.n_training < 1 || setup.n_testing < 1 {
        return Err(Error::InvalidInput("path counts must be positive".into()));
    }
    let train_paths = simulate_paths_tagged(
        setup.params,
        &setup.grid,
        setup.n_training,
        setup.seed,
        stream::TRAINING,
    )?;
    let training = TrainingSet::new(&train_paths, &setup.payoff, &setup.basis)?;
    drop(train_paths);
    let test_paths = simulate_paths_tagged(
        setup.params,
        &setup.grid,
        setup.n_testing,
        setup.seed,
        stream::TESTING,
    )?;
    let test = PathData::new(&test_paths, &setup.payoff, &setup.basis);
    drop(test_paths);

    let spec = setup.spec;
    if spec.is_risk_neutral() {
        let policy = training.fit(spec, 0.0);
        let rewards = policy_rewards(&policy, &test, spec);
        let estimate = BoundEstimate::from_samples(&rewards, 0.0, BoundKind::Lower);
        return Ok(PrimalResult {
            search_value: estimate.value,
            estimate,
            policy,
            search_curve: Vec::new(),
        });
    }

    let search_paths = simulate_paths_tagged(
        setup.params,
        &setup.grid,
        setup.n_testing,
        setup.seed,
        stream::SEARCH,
    )?;
    let search = PathData::new(&search_paths, &setup.payoff, &setup.basis);
    drop(search_paths);

    let objective = |x: f64| {
        let policy = training.fit(spec, x);
        let r = policy_rewards(&policy, &search, spec);
        r.iter().sum::<f64>() / r.len() as f64
    };
    let top = training.data.max_payoff().max(search.max_payoff()) + 1.0;
    let cap = setup.search.upper_cap_at_zero && spec.supports_nonpositive_shift();
    let (lo, hi) = if cap { (-top, 0.0) } else { (-top, top) };
    let (mut best, mut curve) = grid_then_golden(
        objective,
        lo,
        hi,
        setup.grid_points,
        setup.refine_tolerance,
    );
    // the minimum should be interior unless the shift is capped at zero
    let mut width = hi - lo;
    let mut left = lo;
    let mut expansions = 0;
    while best.x <= left + 1e-12 * width.max(1.0) {
        if expansions >= setup.search.max_iterations {
            return Err(Error::Bracketing {
                iterations: expansions,
                lo: left,
                hi,
            });
        }
        expansions += 1;
        let new_left = left - setup.search.bracket_expansion_factor * width;
        let m = golden_section(&mut |x| objective(x), new_left, left + width * 0.1, setup.refine_tolerance);
        curve.push((m.x, m.value));
        width = left - new_left;
        left = new_left;
        if m.value < best.value {
            best = m;
        } else {
            break;
        }
    }
    if !cap {
        let mut right = hi;
        let mut expansions = 0;
        while best.x >= right - 1e-12 * (right - lo).max(1.0) {
            if expansions >= setup.search.max_iterations {
                return Err(Error::Bracketing {
                    iterations: expansions,
                    lo,
                    hi: right,
                });
            }
            expansions += 1;
            let w = right - lo;
            let new_right = right + setup.search.bracket_expansion_factor * w;
            let m = golden_section(&mut |x| objective(x), right - w * 0.1, new_right, setup.refine_tolerance);
            curve.push((m.x, m.value));
            right = new_right;
            if m.value < best.value {
                best = m;
            } else {
                break;
            }
        }
    }

    let x_star = best.x;
    let policy = training.fit(spec, x_star);
    let rewards = policy_rewards(&policy, &test, spec);
    Ok(PrimalResult {
        estimate: BoundEstimate::from_samples(&rewards, x_star, BoundKind::Lower),
        policy,
        search_value: best.value,
        search_curve: curve,
    })
}
