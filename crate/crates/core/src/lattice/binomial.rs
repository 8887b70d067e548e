use crate::error::{Error, Result};

/// Bermudan value on a recombining one-asset binomial lattice.
///
/// Exercise is allowed at `j T / dates` for `j = 0..=dates`; each period
/// is split into `steps_per_date` binomial steps moment-matched to a GBM
/// with drift `r - delta`. `payoff(s, t)` must already be discounted.
pub fn binomial_bermudan_value<F: Fn(f64, f64) -> f64>(
    s0: f64,
    r: f64,
    delta: f64,
    sigma: f64,
    maturity: f64,
    dates: usize,
    steps_per_date: usize,
    payoff: F,
) -> Result<f64> {
    if !(s0 > 0.0 && sigma > 0.0 && maturity > 0.0) || dates == 0 || steps_per_date == 0 {
        return Err(Error::InvalidInput(
            "binomial pricer needs positive s0, sigma, maturity, dates and steps".into(),
        ));
    }
    let n = dates * steps_per_date;
    let dt = maturity / n as f64;
    let up = (sigma * dt.sqrt()).exp();
    let q = (((r - delta) * dt).exp() - 1.0 / up) / (up - 1.0 / up);
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidInput(format!(
            "step too coarse: up probability {q} outside (0, 1)"
        )));
    }
    let spot = |step: usize, i: usize| s0 * up.powi(2 * i as i32 - step as i32);
    let t_end = n as f64 * dt;
    let mut v: Vec<f64> = (0..=n).map(|i| payoff(spot(n, i), t_end)).collect();
    for step in (0..n).rev() {
        let t = step as f64 * dt;
        let exercise = step % steps_per_date == 0;
        for i in 0..=step {
            let cont = q * v[i + 1] + (1.0 - q) * v[i];
            v[i] = if exercise { cont.max(payoff(spot(step, i), t)) } else { cont };
        }
        v.truncate(step + 1);
    }
    Ok(v[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{snell_envelope, Lattice};

    #[test]
    fn matches_the_expanded_tree() {
        let (s0, r, delta, sigma, t) = (100.0, 0.05, 0.1, 0.2, 1.0);
        let pay = |s: f64, time: f64| (s - 95.0f64).max(0.0) * (-r * time).exp();
        let tree = Lattice::gbm_binomial(s0, r, delta, sigma, t, 6, pay).unwrap();
        let exact = snell_envelope(&tree, &tree.payoffs()).unwrap().root_value();
        let fast = binomial_bermudan_value(s0, r, delta, sigma, t, 6, 1, pay).unwrap();
        assert!((exact - fast).abs() < 1e-10, "{exact} vs {fast}");
    }

    #[test]
    fn european_limit_below_bermudan() {
        let pay = |s: f64, time: f64| (s - 100.0f64).max(0.0) * (-0.05 * time).exp();
        let berm = binomial_bermudan_value(90.0, 0.05, 0.1, 0.2, 3.0, 9, 50, pay).unwrap();
        let euro = binomial_bermudan_value(90.0, 0.05, 0.1, 0.2, 3.0, 1, 450, pay).unwrap();
        assert!(berm >= euro);
        assert!(euro > 0.0);
    }
}
