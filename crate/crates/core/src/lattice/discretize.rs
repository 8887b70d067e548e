use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::search::ShiftSearchConfig;

use super::snell::robust_value_with_mask;
use super::{Lattice, StoppingRule};

/// Levels reachable by rounding stopping times up to the dyadic grid
/// `{k T / 2^m : k = 0, ..., 2^m}`. A level is allowed when it is the first
/// date at or after some grid point.
pub fn dyadic_exercise_mask(times: &[f64], m: u32) -> Result<Vec<bool>> {
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("times must be non-empty and strictly increasing".into()));
    }
    if m > 52 {
        return Err(Error::InvalidInput(format!("dyadic level {m} exceeds f64 resolution")));
    }
    let (t0, t_end) = (times[0], *times.last().expect("non-empty"));
    let span = t_end - t0;
    let tol = 1e-12 * span.max(1.0);
    let n = 1u64 << m;
    let mut mask = vec![false; times.len()];
    for k in 0..=n {
        let target = t0 + span * k as f64 / n as f64;
        let j = times.iter().position(|&t| t >= target - tol).unwrap_or(times.len() - 1);
        mask[j] = true;
    }
    Ok(mask)
}

/// Rounds a stopping rule up to the allowed levels: every path stops at the
/// first allowed node at or after its original stopping node.
pub fn discretize_rule(lattice: &Lattice, rule: &StoppingRule, allowed: &[bool]) -> Result<StoppingRule> {
    if allowed.len() != lattice.depth() + 1 {
        return Err(Error::InvalidInput("exercise mask does not match the lattice depth".into()));
    }
    let mut stop = vec![false; lattice.len()];
    let mut stack = vec![(0usize, false)];
    while let Some((id, pending)) = stack.pop() {
        let node = lattice.node(id);
        let triggered = pending || rule.stops(id);
        if triggered && (allowed[node.level] || node.children.is_empty()) {
            stop[id] = true;
        } else {
            stack.extend(node.children.iter().map(|&c| (c, triggered)));
        }
    }
    Ok(StoppingRule::new(lattice, stop))
}

/// Robust stopping value restricted to the allowed levels.
pub fn robust_value_masked(
    lattice: &Lattice,
    y: &[f64],
    spec: DivergenceSpec,
    cfg: &ShiftSearchConfig,
    allowed: &[bool],
) -> Result<(f64, f64)> {
    if allowed.len() != lattice.depth() + 1 {
        return Err(Error::InvalidInput("exercise mask does not match the lattice depth".into()));
    }
    robust_value_with_mask(lattice, y, spec, cfg, allowed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::fixtures;

    #[test]
    fn masks_on_a_uniform_grid() {
        let times: Vec<f64> = (0..=4).map(|j| j as f64 * 0.75).collect();
        assert_eq!(dyadic_exercise_mask(&times, 0).unwrap(), vec![true, false, false, false, true]);
        assert_eq!(dyadic_exercise_mask(&times, 1).unwrap(), vec![true, false, true, false, true]);
        assert_eq!(dyadic_exercise_mask(&times, 2).unwrap(), vec![true; 5]);
        assert_eq!(dyadic_exercise_mask(&times, 5).unwrap(), vec![true; 5]);
    }

    #[test]
    fn rounding_up_never_stops_earlier() {
        let l = fixtures::by_name("binomial-4").unwrap();
        let rule = StoppingRule::at_level(&l, 1);
        let mask = vec![true, false, false, true, true];
        let r = discretize_rule(&l, &rule, &mask).unwrap();
        assert_eq!(r, StoppingRule::at_level(&l, 3));
        let same = discretize_rule(&l, &rule, &[true; 5]).unwrap();
        assert_eq!(same.stopping_nodes(&l), rule.stopping_nodes(&l));
    }
}
