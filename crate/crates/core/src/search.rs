//! One-dimensional minimization of convex functions: geometric bracket
//! growth followed by golden-section refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Controls the outer search over the shift `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftSearchConfig {
    /// Factor by which a bracket endpoint is pushed away from the centre.
    pub bracket_expansion_factor: f64,
    /// Absolute tolerance on the minimizer.
    pub x_tolerance: f64,
    /// Maximum number of bracket expansions.
    pub max_iterations: usize,
    /// Restrict the search to `x <= 0` (only honoured for AV@R).
    pub upper_cap_at_zero: bool,
}

impl Default for ShiftSearchConfig {
    fn default() -> Self {
        ShiftSearchConfig {
            bracket_expansion_factor: 2.0,
            x_tolerance: 1e-8,
            max_iterations: 200,
            upper_cap_at_zero: true,
        }
    }
}

impl ShiftSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_tolerance > 0.0) {
            return Err(Error::InvalidInput("x_tolerance must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if !(self.bracket_expansion_factor > 1.0) {
            return Err(Error::InvalidInput(
                "bracket_expansion_factor must exceed 1".into(),
            ));
        }
        Ok(())
    }
}

/// Minimum the bracketed endpoints must exceed the centre value by.
pub const BRACKET_MARGIN: f64 = 1.0;

/// Result of a 1-D minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    /// Final bracket used for the golden-section phase.
    pub bracket: (f64, f64),
}

/// Grows `[lo, hi]` until both ends exceed the centre value by
/// [`BRACKET_MARGIN`]. With `cap_hi` the upper end is pinned.
pub fn grow_bracket<F: FnMut(f64) -> f64>(
    f: &mut F,
    mut lo: f64,
    mut hi: f64,
    cap_hi: bool,
    cfg: &ShiftSearchConfig,
) -> Result<(f64, f64)> {
    if !(lo < hi) {
        return Err(Error::InvalidInput(format!("empty bracket [{lo}, {hi}]")));
    }
    let mid = 0.5 * (lo + hi);
    let f_mid = f(mid);
    for _ in 0..cfg.max_iterations {
        let left_ok = f(lo) >= f_mid + BRACKET_MARGIN;
        let right_ok = cap_hi || f(hi) >= f_mid + BRACKET_MARGIN;
        if left_ok && right_ok {
            return Ok((lo, hi));
        }
        if !left_ok {
            lo = mid - cfg.bracket_expansion_factor * (mid - lo);
        }
        if !right_ok {
            hi = mid + cfg.bracket_expansion_factor * (hi - mid);
        }
        if !lo.is_finite() || !hi.is_finite() {
            break;
        }
    }
    Err(Error::Bracketing {
        iterations: cfg.max_iterations,
        lo,
        hi,
    })
}

/// Golden-section search on `[lo, hi]` down to `tol`.
pub fn golden_section<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64, tol: f64) -> Minimum {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    // 1e4 halvings of the golden ratio is far beyond f64 resolution
    for _ in 0..10_000 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        if c >= d {
            break;
        }
    }
    // endpoints matter when the minimum sits on a capped boundary
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for x in [a, b] {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    Minimum {
        x: best.0,
        value: best.1,
        bracket: (lo, hi),
    }
}

/// Minimizes a convex, coercive `f` starting from `[lo, hi]`.
pub fn minimize_convex<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    cap_hi: bool,
    cfg: &ShiftSearchConfig,
) -> Result<Minimum> {
    cfg.validate()?;
    let (a, b) = grow_bracket(&mut f, lo, hi, cap_hi, cfg)?;
    let mut m = golden_section(&mut f, a, b, cfg.x_tolerance);
    m.bracket = (a, b);
    Ok(m)
}

/// Evaluates `f` on an equidistant grid, then refines around the grid
/// argmin by golden section. Meant for objectives that are convex only up
/// to Monte Carlo noise, where a purely local method could stall.
pub fn grid_then_golden<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    points: usize,
    tol: f64,
) -> (Minimum, Vec<(f64, f64)>) {
    let points = points.max(3);
    let step = (hi - lo) / (points - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..points)
        .map(|i| {
            let x = if i + 1 == points { hi } else { lo + step * i as f64 };
            (x, f(x))
        })
        .collect();
    let arg = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let a = grid[arg.saturating_sub(1)].0;
    let b = grid[(arg + 1).min(points - 1)].0;
    let mut m = golden_section(&mut f, a, b, tol);
    if grid[arg].1 < m.value {
        m.x = grid[arg].0;
        m.value = grid[arg].1;
    }
    (m, grid)
}
