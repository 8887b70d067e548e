use crate::divergence::{minimize_shift, DivergenceSpec};
use crate::error::{Error, Result};
use crate::search::ShiftSearchConfig;

use super::{Lattice, StoppingRule};

/// Snell envelope with its Doob-Meyer decomposition `V = V_0 + M - A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnellResult {
    /// Envelope value per node.
    pub value: Vec<f64>,
    /// Conditional expectation of the envelope one step ahead
    /// (`-inf` at leaves).
    pub continuation: Vec<f64>,
    /// Martingale part, zero at the root.
    pub martingale: Vec<f64>,
    /// Non-decreasing predictable part, zero at the root.
    pub compensator: Vec<f64>,
    allowed: Vec<bool>,
}

impl SnellResult {
    pub fn root_value(&self) -> f64 {
        self.value[0]
    }

    /// First time the reward reaches the continuation value (ties stop).
    pub fn optimal_rule(&self, lattice: &Lattice, z: &[f64]) -> StoppingRule {
        let stop = (0..lattice.len())
            .map(|id| self.allowed[lattice.node(id).level] && z[id] >= self.continuation[id])
            .collect();
        StoppingRule::new(lattice, stop)
    }
}

/// `phi*(x + y) - x` for every node.
pub fn shifted_rewards(y: &[f64], spec: DivergenceSpec, x: f64) -> Vec<f64> {
    y.iter().map(|&v| spec.phi_star(x + v) - x).collect()
}

/// Backward induction for the optimal stopping problem with reward `z`.
pub fn snell_envelope(lattice: &Lattice, z: &[f64]) -> Result<SnellResult> {
    let allowed = vec![true; lattice.depth() + 1];
    snell_envelope_masked(lattice, z, &allowed)
}

/// Snell envelope when stopping is only allowed at levels with
/// `allowed[j]`. The last level is always allowed.
pub fn snell_envelope_masked(lattice: &Lattice, z: &[f64], allowed: &[bool]) -> Result<SnellResult> {
    let n = lattice.len();
    if z.len() != n {
        return Err(Error::InvalidInput(format!(
            "reward vector has length {} but the lattice has {n} nodes",
            z.len()
        )));
    }
    if allowed.len() != lattice.depth() + 1 {
        return Err(Error::InvalidInput(format!(
            "exercise mask has length {} but the lattice has {} levels",
            allowed.len(),
            lattice.depth() + 1
        )));
    }
    if let Some(id) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::MalformedLattice {
            node: id,
            reason: "non-finite reward".into(),
        });
    }
    let mut allowed = allowed.to_vec();
    *allowed.last_mut().expect("non-empty") = true;

    let mut value = vec![0.0; n];
    let mut continuation = vec![f64::NEG_INFINITY; n];
    for id in lattice.bottom_up() {
        let node = lattice.node(id);
        if node.children.is_empty() {
            value[id] = z[id];
            continue;
        }
        let c: f64 = node.children.iter().zip(&node.probs).map(|(&c, &p)| p * value[c]).sum();
        continuation[id] = c;
        value[id] = if allowed[node.level] { z[id].max(c) } else { c };
    }
    let mut martingale = vec![0.0; n];
    let mut compensator = vec![0.0; n];
    for id in lattice.top_down() {
        if let Some(p) = lattice.node(id).parent {
            martingale[id] = martingale[p] + value[id] - continuation[p];
            compensator[id] = compensator[p] + value[p] - continuation[p];
        }
    }
    Ok(SnellResult {
        value,
        continuation,
        martingale,
        compensator,
        allowed,
    })
}

/// Pathwise maxima of `z - M` along every root-to-leaf path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwiseDual {
    pub path_maxima: Vec<f64>,
    /// `max |path max - V_0|` over paths.
    pub max_deviation: f64,
}

pub fn pathwise_dual_check(lattice: &Lattice, z: &[f64], martingale: &[f64], v0: f64) -> PathwiseDual {
    let path_maxima: Vec<f64> = lattice
        .paths()
        .iter()
        .map(|p| p.iter().map(|&id| z[id] - martingale[id]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let max_deviation = path_maxima.iter().fold(0.0f64, |acc, m| acc.max((m - v0).abs()));
    PathwiseDual {
        path_maxima,
        max_deviation,
    }
}

/// Robust stopping value `inf_x sup_tau E[phi*(x + Y_tau) - x]` with each
/// inner supremum solved by backward induction. Returns `(value, x_star)`.
pub fn robust_value_lattice(
    lattice: &Lattice,
    y: &[f64],
    spec: DivergenceSpec,
    cfg: &ShiftSearchConfig,
) -> Result<(f64, f64)> {
    let allowed = vec![true; lattice.depth() + 1];
    robust_value_with_mask(lattice, y, spec, cfg, &allowed)
}

pub(super) fn robust_value_with_mask(
    lattice: &Lattice,
    y: &[f64],
    spec: DivergenceSpec,
    cfg: &ShiftSearchConfig,
    allowed: &[bool],
) -> Result<(f64, f64)> {
    spec.validate()?;
    cfg.validate()?;
    if y.len() != lattice.len() {
        return Err(Error::InvalidInput("payoff vector does not match the lattice".into()));
    }
    if spec.is_risk_neutral() {
        let s = snell_envelope_masked(lattice, y, allowed)?;
        return Ok((s.root_value(), 0.0));
    }
    // the lattice was validated, so every objective evaluation succeeds
    let objective = |x: f64| {
        let z = shifted_rewards(y, spec, x);
        snell_envelope_masked(lattice, &z, allowed)
            .map(|s| s.root_value())
            .unwrap_or(f64::NAN)
    };
    let m = minimize_shift(spec, objective, y, cfg)?;
    Ok((m.value, m.x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::fixtures;

    #[test]
    fn two_period_by_hand() {
        // root 1; children 4 (p .25) and 0 (p .75); no grandchildren
        let l = fixtures::by_name("one-step").unwrap();
        let z = l.payoffs();
        let s = snell_envelope(&l, &z).unwrap();
        assert_eq!(s.root_value(), 1.0);
        assert_eq!(s.martingale[1], 3.0);
        assert_eq!(s.martingale[2], -1.0);
        assert_eq!(s.compensator, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn doob_meyer_reconstructs_the_envelope() {
        for l in fixtures::builtin() {
            let z = l.payoffs();
            let s = snell_envelope(&l, &z).unwrap();
            for id in 0..l.len() {
                let rebuilt = s.root_value() + s.martingale[id] - s.compensator[id];
                assert!((rebuilt - s.value[id]).abs() < 1e-12, "{} node {id}", l.name);
                if let Some(p) = l.node(id).parent {
                    assert!(s.compensator[id] >= s.compensator[p] - 1e-15);
                }
            }
            let d = pathwise_dual_check(&l, &z, &s.martingale, s.root_value());
            assert!(d.max_deviation < 1e-12, "{}", l.name);
            let rule = s.optimal_rule(&l, &z);
            assert!((rule.expected_reward(&l, &z) - s.root_value()).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_forbidding_everything_but_the_end() {
        let l = fixtures::by_name("binomial-4").unwrap();
        let z = l.payoffs();
        let mut mask = vec![false; l.depth() + 1];
        mask[l.depth()] = true;
        let s = snell_envelope_masked(&l, &z, &mask).unwrap();
        let end = StoppingRule::at_level(&l, l.depth()).expected_reward(&l, &z);
        assert!((s.root_value() - end).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let l = fixtures::by_name("one-step").unwrap();
        assert!(snell_envelope(&l, &[1.0]).is_err());
    }
}
