//! Built-in lattices for the oracle suite, plus a random tree generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::enumerate::{count_stopping_times, DEFAULT_ENUMERATION_CAP};
use super::{Lattice, LatticeRecord, NodeRecord};

/// Builds a lattice from `(payoff, [(child, prob)])` rows indexed by id.
fn from_rows(name: &str, rows: &[(f64, &[(usize, f64)])]) -> Lattice {
    let nodes = rows
        .iter()
        .enumerate()
        .map(|(id, (payoff, kids))| NodeRecord {
            id,
            payoff: *payoff,
            children: kids.iter().map(|k| k.0).collect(),
            probs: kids.iter().map(|k| k.1).collect(),
        })
        .collect();
    Lattice::from_record(&LatticeRecord {
        name: name.to_string(),
        times: None,
        nodes,
    })
    .expect("built-in fixture is valid")
}

/// One period, root payoff 1, leaves 4 and 0 with probabilities 1/4, 3/4.
pub fn one_step() -> Lattice {
    from_rows(
        "one-step",
        &[(1.0, &[(1, 0.25), (2, 0.75)]), (4.0, &[]), (0.0, &[])],
    )
}

/// Single path, payoffs 2, 5, 3, 7, 4.
pub fn chain() -> Lattice {
    from_rows(
        "chain",
        &[
            (2.0, &[(1, 1.0)]),
            (5.0, &[(2, 1.0)]),
            (3.0, &[(3, 1.0)]),
            (7.0, &[(4, 1.0)]),
            (4.0, &[]),
        ],
    )
}

/// Two periods with asymmetric branching probabilities.
pub fn two_period_asymmetric() -> Lattice {
    from_rows(
        "two-period-asymmetric",
        &[
            (3.0, &[(1, 0.3), (2, 0.7)]),
            (6.0, &[(3, 0.6), (4, 0.4)]),
            (1.0, &[(5, 0.2), (6, 0.8)]),
            (9.0, &[]),
            (2.0, &[]),
            (5.0, &[]),
            (0.0, &[]),
        ],
    )
}

/// Three-period binary tree with hand-set payoffs.
pub fn three_period_hand() -> Lattice {
    let mut rows: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let payoffs = [
        2.0, // level 0
        1.0, 4.0, // level 1
        0.0, 3.0, 6.0, 2.5, // level 2
        1.0, 0.0, 5.0, 2.0, 8.0, 3.0, 0.5, 4.0, // level 3
    ];
    for (id, &p) in payoffs.iter().enumerate() {
        let kids = if id < 7 {
            let up = if id % 2 == 0 { 0.55 } else { 0.4 };
            vec![(2 * id + 1, up), (2 * id + 2, 1.0 - up)]
        } else {
            vec![]
        };
        rows.push((p, kids));
    }
    let borrowed: Vec<(f64, &[(usize, f64)])> = rows.iter().map(|(p, k)| (*p, k.as_slice())).collect();
    from_rows("three-period-hand", &borrowed)
}

/// Two-period trinomial tree.
pub fn trinomial_two() -> Lattice {
    trinomial("trinomial-2", 2)
}

/// Five-period trinomial tree; too many stopping rules to enumerate.
pub fn trinomial_five() -> Lattice {
    trinomial("trinomial-5", 5)
}

fn trinomial(name: &str, periods: usize) -> Lattice {
    let mut nodes = vec![NodeRecord {
        id: 0,
        payoff: 3.0,
        children: vec![],
        probs: vec![],
    }];
    let mut level = vec![(0usize, 0i32)];
    for j in 1..=periods {
        let mut next = Vec::new();
        for &(id, pos) in &level {
            for (step, p) in [(1, 0.25), (0, 0.5), (-1, 0.25)] {
                let c = nodes.len();
                let k = pos + step;
                // put-like reward on a symmetric random walk, decaying in time
                let payoff = (3.0 - k as f64).max(0.0) * 0.97f64.powi(j as i32);
                nodes.push(NodeRecord {
                    id: c,
                    payoff,
                    children: vec![],
                    probs: vec![],
                });
                nodes[id].children.push(c);
                nodes[id].probs.push(p);
                next.push((c, k));
            }
        }
        level = next;
    }
    Lattice::from_record(&LatticeRecord {
        name: name.to_string(),
        times: None,
        nodes,
    })
    .expect("trinomial fixture is valid")
}

/// Four-step binomial put, `up = 1.1`, `q = 0.5`, strike 105, 2% rate.
pub fn binomial_four() -> Lattice {
    let mut l = Lattice::binomial_tree(
        100.0,
        1.1,
        0.5,
        4,
        |s, t| (105.0 - s).max(0.0) * (-0.02 * t).exp(),
        1.0,
    )
    .expect("binomial fixture is valid");
    l.name = "binomial-4".into();
    l
}

/// One period where a randomized rule beats every deterministic one under
/// AV@R(0.5): root payoff 2, leaves 10 and 0 with probabilities 0.1, 0.9.
pub fn atom_gap() -> Lattice {
    from_rows(
        "atom-gap",
        &[(2.0, &[(1, 0.1), (2, 0.9)]), (10.0, &[]), (0.0, &[])],
    )
}

/// Fixtures run by the built-in oracle suite.
pub fn builtin() -> Vec<Lattice> {
    vec![
        one_step(),
        chain(),
        two_period_asymmetric(),
        three_period_hand(),
        trinomial_two(),
        binomial_four(),
        atom_gap(),
    ]
}

/// Looks up a fixture by name, including ones outside [`builtin`].
pub fn by_name(name: &str) -> Result<Lattice> {
    let l = match name {
        "one-step" => one_step(),
        "chain" => chain(),
        "two-period-asymmetric" => two_period_asymmetric(),
        "three-period-hand" => three_period_hand(),
        "trinomial-2" => trinomial_two(),
        "trinomial-5" => trinomial_five(),
        "binomial-4" => binomial_four(),
        "atom-gap" => atom_gap(),
        other => return Err(Error::InvalidInput(format!("unknown fixture '{other}'"))),
    };
    Ok(l)
}

pub const FIXTURE_NAMES: &[&str] = &[
    "one-step",
    "chain",
    "two-period-asymmetric",
    "three-period-hand",
    "trinomial-2",
    "trinomial-5",
    "binomial-4",
    "atom-gap",
];

/// Random tree with `1..=max_periods` periods and `1..=max_branch`
/// children per node, payoffs uniform on `[0, 10)` and probabilities from
/// normalized uniforms bounded away from zero.
pub fn random_tree(seed: u64, max_periods: usize, max_branch: usize) -> Lattice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let periods = rng.random_range(1..=max_periods.max(1));
    let mut nodes = vec![NodeRecord {
        id: 0,
        payoff: rng.random_range(0.0..10.0),
        children: vec![],
        probs: vec![],
    }];
    let mut level = vec![0usize];
    for _ in 0..periods {
        let mut next = Vec::new();
        for &id in &level {
            let k = rng.random_range(1..=max_branch.max(1));
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mut probs: Vec<f64> = raw.iter().map(|w| w / total).collect();
            // absorb rounding so the row sums to one as closely as possible
            let head: f64 = probs[..k - 1].iter().sum();
            probs[k - 1] = 1.0 - head;
            for p in probs {
                let c = nodes.len();
                nodes.push(NodeRecord {
                    id: c,
                    payoff: rng.random_range(0.0..10.0),
                    children: vec![],
                    probs: vec![],
                });
                nodes[id].children.push(c);
                nodes[id].probs.push(p);
                next.push(c);
            }
        }
        level = next;
    }
    Lattice::from_record(&LatticeRecord {
        name: format!("random-{seed}"),
        times: None,
        nodes,
    })
    .expect("generated tree is valid")
}

/// The first `count` random trees (seeds from `first_seed` upward) whose
/// stopping rules fit under the default enumeration cap.
pub fn enumerable_random_trees(count: usize, first_seed: u64, max_periods: usize, max_branch: usize) -> Vec<Lattice> {
    (first_seed..)
        .map(|s| random_tree(s, max_periods, max_branch))
        .filter(|l| count_stopping_times(l) <= DEFAULT_ENUMERATION_CAP as f64)
        .take(count)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_resolve() {
        for name in FIXTURE_NAMES {
            assert_eq!(by_name(name).unwrap().name, *name);
        }
        assert!(by_name("nope").is_err());
    }

    #[test]
    fn random_trees_are_reproducible() {
        assert_eq!(random_tree(7, 4, 3), random_tree(7, 4, 3));
        let trees = enumerable_random_trees(20, 0, 4, 3);
        assert_eq!(trees.len(), 20);
        assert!(trees.iter().all(|t| t.depth() <= 4));
    }
}
