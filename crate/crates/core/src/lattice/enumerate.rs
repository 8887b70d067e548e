use crate::error::{Error, Result};

use super::{Lattice, StoppingRule};

/// Largest number of stopping rules enumerated by default.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 20;

/// Number of distinct stopping rules: `N(leaf) = 1` and
/// `N(node) = 1 + prod N(child)`. Returned as `f64` since it overflows
/// integers quickly.
pub fn count_stopping_times(lattice: &Lattice) -> f64 {
    subtree_counts(lattice)[0]
}

fn subtree_counts(lattice: &Lattice) -> Vec<f64> {
    let mut count = vec![1.0f64; lattice.len()];
    for id in lattice.bottom_up() {
        let node = lattice.node(id);
        if !node.children.is_empty() {
            count[id] = 1.0 + node.children.iter().map(|&c| count[c]).product::<f64>();
        }
    }
    count
}

/// Visits every deterministic stopping rule. Fails without visiting any if
/// the count exceeds `cap`.
pub fn for_each_stopping_rule<F: FnMut(&StoppingRule)>(lattice: &Lattice, cap: u64, mut visit: F) -> Result<()> {
    let counts = subtree_counts(lattice);
    if counts[0] > cap as f64 {
        return Err(Error::EnumerationCap { count: counts[0], cap });
    }
    let counts: Vec<u64> = counts.iter().map(|&c| c as u64).collect();
    let mut stop = vec![false; lattice.len()];
    for k in 0..counts[0] {
        stop.iter_mut().for_each(|s| *s = false);
        decode(lattice, &counts, 0, k, &mut stop);
        visit(&StoppingRule::new(lattice, stop.clone()));
    }
    Ok(())
}

/// Mixed-radix decoding: index 0 stops here, otherwise `k - 1` is split
/// across the children.
fn decode(lattice: &Lattice, counts: &[u64], id: usize, k: u64, stop: &mut [bool]) {
    let node = lattice.node(id);
    if node.children.is_empty() || k == 0 {
        stop[id] = true;
        return;
    }
    let mut rest = k - 1;
    for &c in &node.children {
        decode(lattice, counts, c, rest % counts[c], stop);
        rest /= counts[c];
    }
}

/// Brute-force `max_tau E[z_tau]`, returning the value and a maximizing rule.
pub fn enumerate_stopping_times(lattice: &Lattice, z: &[f64], cap: u64) -> Result<(f64, StoppingRule)> {
    if z.len() != lattice.len() {
        return Err(Error::InvalidInput("reward vector does not match the lattice".into()));
    }
    let mut best: Option<(f64, StoppingRule)> = None;
    for_each_stopping_rule(lattice, cap, |rule| {
        let v = rule.expected_reward(lattice, z);
        if best.as_ref().map_or(true, |(b, _)| v > *b) {
            best = Some((v, rule.clone()));
        }
    })?;
    Ok(best.expect("at least one rule"))
}
