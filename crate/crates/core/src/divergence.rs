//! Conjugate divergence functions and optimized certainty equivalents.
//!
//! Every supported risk measure is handled through its dual form
//! `inf_x E[phi*(x + Y) - x]`, where `phi*` is the Fenchel-Legendre
//! conjugate of the divergence generator. The conjugates are convex,
//! nondecreasing and vanish at zero, which is what the shift searches
//! below rely on.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::search::{minimize_convex, Minimum, ShiftSearchConfig};

/// Risk-measure family, identified by its divergence generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceSpec {
    /// Average value at risk at level `alpha` in `(0, 1]`.
    AVaR(f64),
    /// Entropic risk with coefficient `gamma > 0`.
    Entropic(f64),
    /// Power divergence `x^p / p` with `p > 1`.
    Power(f64),
    /// Plain expectation.
    RiskNeutral,
}

impl DivergenceSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DivergenceSpec::AVaR(a) if !(a > 0.0 && a <= 1.0) => Err(Error::InvalidInput(
                format!("AV@R level must lie in (0, 1], got {a}"),
            )),
            DivergenceSpec::Entropic(g) if !(g > 0.0 && g.is_finite()) => Err(
                Error::InvalidInput(format!("entropic coefficient must be positive, got {g}")),
            ),
            DivergenceSpec::Power(p) if !(p > 1.0 && p.is_finite()) => Err(Error::InvalidInput(
                format!("power exponent must exceed 1, got {p}"),
            )),
            _ => Ok(()),
        }
    }

    /// True when the risk measure is the plain expectation (including
    /// AV@R at level 1), so no shift search is needed.
    pub fn is_risk_neutral(&self) -> bool {
        matches!(self, DivergenceSpec::RiskNeutral) || *self == DivergenceSpec::AVaR(1.0)
    }

    /// Whether the shift search may be restricted to `x <= 0`.
    pub fn supports_nonpositive_shift(&self) -> bool {
        matches!(self, DivergenceSpec::AVaR(_))
    }

    /// Conjugate `phi*(y)`.
    pub fn phi_star(&self, y: f64) -> f64 {
        match *self {
            DivergenceSpec::AVaR(alpha) => y.max(0.0) / alpha,
            DivergenceSpec::Entropic(gamma) => (gamma * y).exp_m1() / gamma,
            DivergenceSpec::Power(p) => {
                let q = p / (p - 1.0);
                y.max(0.0).powf(q) * (p - 1.0) / p
            }
            DivergenceSpec::RiskNeutral => y.max(0.0),
        }
    }

    /// Right derivative of `phi*` at `y`.
    pub fn phi_star_derivative(&self, y: f64) -> f64 {
        match *self {
            DivergenceSpec::AVaR(alpha) => {
                if y >= 0.0 {
                    1.0 / alpha
                } else {
                    0.0
                }
            }
            DivergenceSpec::Entropic(gamma) => (gamma * y).exp(),
            DivergenceSpec::Power(p) => y.max(0.0).powf(1.0 / (p - 1.0)),
            DivergenceSpec::RiskNeutral => {
                if y >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `int_a^b phi*'(z) dz`, written per family from the antiderivative of
    /// the right derivative.
    pub fn derivative_integral(&self, a: f64, b: f64) -> f64 {
        match *self {
            DivergenceSpec::AVaR(alpha) => (b.max(0.0) - a.max(0.0)) / alpha,
            DivergenceSpec::Entropic(gamma) => {
                // e^{ga}(e^{g(b-a)} - 1)/g keeps precision for short pieces
                (gamma * a).exp() * (gamma * (b - a)).exp_m1() / gamma
            }
            DivergenceSpec::Power(p) => {
                let q = p / (p - 1.0);
                (b.max(0.0).powf(q) - a.max(0.0).powf(q)) / q
            }
            DivergenceSpec::RiskNeutral => b.max(0.0) - a.max(0.0),
        }
    }

    /// Short human-readable label, e.g. `AV@R(0.50)`.
    pub fn label(&self) -> String {
        match *self {
            DivergenceSpec::AVaR(a) => format!("AV@R({a})"),
            DivergenceSpec::Entropic(g) => format!("entropic({g})"),
            DivergenceSpec::Power(p) => format!("power({p})"),
            DivergenceSpec::RiskNeutral => "risk-neutral".to_string(),
        }
    }
}

impl fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DivergenceSpec::AVaR(a) => write!(f, "avar:{a}"),
            DivergenceSpec::Entropic(g) => write!(f, "entropic:{g}"),
            DivergenceSpec::Power(p) => write!(f, "power:{p}"),
            DivergenceSpec::RiskNeutral => write!(f, "neutral"),
        }
    }
}

impl FromStr for DivergenceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s.as_str(), None),
        };
        let value = |name: &str| -> Result<f64> {
            let a = arg.ok_or_else(|| Error::Parse(format!("{name} needs a parameter, e.g. {name}:0.5")))?;
            a.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad {name} parameter '{a}'")))
        };
        let spec = match kind {
            "avar" | "cvar" => DivergenceSpec::AVaR(value("avar")?),
            "entropic" => DivergenceSpec::Entropic(value("entropic")?),
            "power" => DivergenceSpec::Power(value("power")?),
            "neutral" | "risk-neutral" => DivergenceSpec::RiskNeutral,
            other => {
                return Err(Error::Parse(format!(
                    "unknown risk '{other}' (expected avar:A, entropic:G, power:P or neutral)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for DivergenceSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DivergenceSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Free function form of [`DivergenceSpec::phi_star`].
pub fn phi_star(spec: DivergenceSpec, y: f64) -> f64 {
    spec.phi_star(y)
}

/// Sample mean of `phi*(x + Y_i) - x`.
pub fn oce_objective(spec: DivergenceSpec, samples: &[f64], x: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let sum: f64 = samples.iter().map(|&y| spec.phi_star(x + y)).sum();
    Ok(sum / samples.len() as f64 - x)
}

/// Weighted version of [`oce_objective`]; weights must sum to one.
pub fn oce_objective_weighted(spec: DivergenceSpec, support: &[f64], probs: &[f64], x: f64) -> f64 {
    support
        .iter()
        .zip(probs)
        .map(|(&y, &p)| p * spec.phi_star(x + y))
        .sum::<f64>()
        - x
}

/// Starting bracket for the shift: `[-(max|Y| + 1), max|Y| + 1]`.
pub fn initial_bracket(support: &[f64]) -> (f64, f64) {
    let m = support.iter().fold(0.0f64, |acc, y| acc.max(y.abs())) + 1.0;
    (-m, m)
}

/// Minimizes `x -> objective(x)` over payoffs in `support`. For AV@R the
/// minimizer is minus an upper quantile, so with the cap enabled the search
/// stays below `max(0, -min Y)`, which is zero for non-negative payoffs.
pub(crate) fn minimize_shift<F: FnMut(f64) -> f64>(
    spec: DivergenceSpec,
    objective: F,
    support: &[f64],
    cfg: &ShiftSearchConfig,
) -> Result<Minimum> {
    let bracket = initial_bracket(support);
    let cap = cfg.upper_cap_at_zero && spec.supports_nonpositive_shift();
    let (lo, hi) = if cap {
        let floor = support.iter().copied().fold(f64::INFINITY, f64::min);
        (bracket.0.min(-1.0), (-floor).max(0.0))
    } else {
        bracket
    };
    minimize_convex(objective, lo, hi, cap, cfg)
}

/// Optimized certainty equivalent `inf_x mean(phi*(x + Y_i) - x)` of an
/// equally weighted sample. Returns `(value, x_star)`.
pub fn oce_value(
    spec: DivergenceSpec,
    samples: &[f64],
    cfg: &ShiftSearchConfig,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let w = 1.0 / samples.len() as f64;
    let probs = vec![w; samples.len()];
    oce_value_weighted(spec, samples, &probs, cfg)
}

/// Optimized certainty equivalent of a discrete distribution.
pub fn oce_value_weighted(
    spec: DivergenceSpec,
    support: &[f64],
    probs: &[f64],
    cfg: &ShiftSearchConfig,
) -> Result<(f64, f64)> {
    spec.validate()?;
    if support.is_empty() {
        return Err(Error::EmptySample);
    }
    if support.len() != probs.len() {
        return Err(Error::InvalidInput(
            "support and probabilities differ in length".into(),
        ));
    }
    if spec.is_risk_neutral() {
        let mean = support.iter().zip(probs).map(|(y, p)| y * p).sum();
        return Ok((mean, 0.0));
    }
    let m = minimize_shift(
        spec,
        |x| oce_objective_weighted(spec, support, probs, x),
        support,
        cfg,
    )?;
    Ok((m.value, m.x))
}

/// Entropic risk `ln(mean exp(gamma Y_i)) / gamma` via log-sum-exp.
pub fn entropic_closed_form(gamma: f64, samples: &[f64]) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!(
            "entropic coefficient must be positive, got {gamma}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let top = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = samples.iter().map(|&y| (gamma * (y - top)).exp()).sum();
    Ok((s / samples.len() as f64).ln() / gamma + top)
}
