//! Multi-asset geometric Brownian motion on a discrete exercise grid and
//! the discounted max-call payoff.

use std::io::{BufRead, BufReader, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Purpose tags used to derive independent random substreams.
pub mod stream {
    pub const TRAINING: u64 = 1;
    pub const SEARCH: u64 = 2;
    pub const TESTING: u64 = 3;
    pub const INNER: u64 = 4;
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random generator for the substream identified by `(seed, tag, a, b)`.
pub fn substream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let k = mix64(mix64(mix64(mix64(seed) ^ tag) ^ a) ^ b);
    ChaCha8Rng::seed_from_u64(k)
}

/// Parameters of independent, identically distributed GBM assets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub s0: f64,
    pub r: f64,
    pub delta: f64,
    pub sigma: f64,
    pub d: usize,
}

impl GbmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::InvalidInput(format!("s0 must be positive, got {}", self.s0)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        if self.d < 1 {
            return Err(Error::InvalidInput("at least one asset is required".into()));
        }
        if !self.r.is_finite() || !self.delta.is_finite() {
            return Err(Error::InvalidInput("r and delta must be finite".into()));
        }
        Ok(())
    }

    /// Advances `prices` in place by `dt` using exact lognormal steps.
    #[inline]
    pub fn advance<R: rand::Rng + ?Sized>(&self, prices: &mut [f64], dt: f64, rng: &mut R) {
        let drift = (self.r - self.delta - 0.5 * self.sigma * self.sigma) * dt;
        let vol = self.sigma * dt.sqrt();
        for p in prices.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *p *= (drift + vol * z).exp();
        }
    }
}

/// Exercise dates `t_0 = 0 < t_1 < ... < t_J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseGrid {
    dates: Vec<f64>,
}

impl ExerciseGrid {
    pub fn new(dates: Vec<f64>) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::InvalidInput("exercise grid is empty".into()));
        }
        if dates[0] != 0.0 {
            return Err(Error::InvalidInput("exercise grid must start at 0".into()));
        }
        if dates.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "exercise dates must be strictly increasing".into(),
            ));
        }
        Ok(ExerciseGrid { dates })
    }

    /// `J + 1` equidistant dates on `[0, maturity]`.
    pub fn equidistant(maturity: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return ExerciseGrid::new(vec![0.0]);
        }
        if !(maturity > 0.0) {
            return Err(Error::InvalidInput("maturity must be positive".into()));
        }
        let dates = (0..=steps)
            .map(|j| maturity * j as f64 / steps as f64)
            .collect();
        ExerciseGrid::new(dates)
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    /// Number of dates, `J + 1`.
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Index of the last date, `J`.
    pub fn last(&self) -> usize {
        self.dates.len() - 1
    }
}

/// Simulated trajectories, stored row-major as `[path][date][asset]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub params: GbmParams,
    pub grid: ExerciseGrid,
    pub seed: u64,
    pub stream: u64,
    n: usize,
    prices: Vec<f64>,
}

impl PathSet {
    /// Builds a path set from raw prices (e.g. after import).
    pub fn from_raw(
        params: GbmParams,
        grid: ExerciseGrid,
        n: usize,
        prices: Vec<f64>,
    ) -> Result<Self> {
        if prices.len() != n * grid.len() * params.d {
            return Err(Error::InvalidInput(format!(
                "expected {} prices for {n} paths, got {}",
                n * grid.len() * params.d,
                prices.len()
            )));
        }
        Ok(PathSet {
            params,
            grid,
            seed: 0,
            stream: 0,
            n,
            prices,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n
    }

    pub fn n_dates(&self) -> usize {
        self.grid.len()
    }

    pub fn n_assets(&self) -> usize {
        self.params.d
    }

    /// Asset prices of `path` at date index `j`.
    #[inline]
    pub fn state(&self, path: usize, j: usize) -> &[f64] {
        let d = self.params.d;
        let start = (path * self.grid.len() + j) * d;
        &self.prices[start..start + d]
    }

    /// Full trajectory of one path (`(J + 1) * d` prices).
    pub fn path(&self, path: usize) -> &[f64] {
        let w = self.grid.len() * self.params.d;
        &self.prices[path * w..(path + 1) * w]
    }

    pub fn raw(&self) -> &[f64] {
        &self.prices
    }

    /// Writes the binary layout: `n, dates, assets` as little-endian u64
    /// followed by the prices as little-endian f64, row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for v in [self.n, self.n_dates(), self.n_assets()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for p in &self.prices {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary layout written by [`PathSet::write_binary`].
    pub fn read_binary<R: Read>(mut r: R, params: GbmParams, grid: ExerciseGrid) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut header = [0usize; 3];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word) as usize;
        }
        let [n, dates, assets] = header;
        check_layout(dates, assets, &params, &grid)?;
        let mut prices = Vec::with_capacity(n * dates * assets);
        for _ in 0..n * dates * assets {
            r.read_exact(&mut word)?;
            prices.push(f64::from_le_bytes(word));
        }
        PathSet::from_raw(params, grid, n, prices)
    }

    /// CSV layout: a `n,dates,assets` header line, its values, then one
    /// line per path with the row-major prices.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,dates,assets")?;
        writeln!(w, "{},{},{}", self.n, self.n_dates(), self.n_assets())?;
        for i in 0..self.n {
            let row: Vec<String> = self.path(i).iter().map(|p| format!("{p:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, params: GbmParams, grid: ExerciseGrid) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {what}")))?
                .map_err(Error::from)
        };
        next("header")?;
        let dims: Vec<usize> = next("dimensions")?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("bad dimension line: {e}")))?;
        let [n, dates, assets] = dims[..] else {
            return Err(Error::Parse("dimension line needs three values".into()));
        };
        check_layout(dates, assets, &params, &grid)?;
        let mut prices = Vec::with_capacity(n * dates * assets);
        for i in 0..n {
            let line = next(&format!("path {i}"))?;
            for tok in line.split(',') {
                prices.push(
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("path {i}: {e}")))?,
                );
            }
        }
        PathSet::from_raw(params, grid, n, prices)
    }
}

fn check_layout(dates: usize, assets: usize, params: &GbmParams, grid: &ExerciseGrid) -> Result<()> {
    if dates != grid.len() || assets != params.d {
        return Err(Error::Parse(format!(
            "layout {dates} dates x {assets} assets does not match the grid ({} x {})",
            grid.len(),
            params.d
        )));
    }
    Ok(())
}

/// Simulates `n` paths on the given grid from the `TESTING` substream.
pub fn simulate_paths(params: GbmParams, grid: &ExerciseGrid, n: usize, seed: u64) -> Result<PathSet> {
    simulate_paths_tagged(params, grid, n, seed, stream::TESTING)
}

/// Simulates `n` paths; path `i` depends only on `(seed, tag, i)`.
pub fn simulate_paths_tagged(
    params: GbmParams,
    grid: &ExerciseGrid,
    n: usize,
    seed: u64,
    tag: u64,
) -> Result<PathSet> {
    params.validate()?;
    if n < 1 {
        return Err(Error::InvalidInput("at least one path is required".into()));
    }
    let d = params.d;
    let dates = grid.dates();
    let width = dates.len() * d;
    let mut prices = vec![0.0; n * width];
    prices
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| {
            let mut rng = substream(seed, tag, i as u64, 0);
            row[..d].fill(params.s0);
            for j in 1..dates.len() {
                let (done, rest) = row.split_at_mut(j * d);
                let cur = &mut rest[..d];
                cur.copy_from_slice(&done[(j - 1) * d..]);
                params.advance(cur, dates[j] - dates[j - 1], &mut rng);
            }
        });
    Ok(PathSet {
        params,
        grid: grid.clone(),
        seed,
        stream: tag,
        n,
        prices,
    })
}

/// Discounted max-call `e^{-r t} (max_i X^i - K)^+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffSpec {
    pub strike: f64,
    pub rate: f64,
}

impl PayoffSpec {
    pub fn max_call(strike: f64, rate: f64) -> Result<Self> {
        if !(strike >= 0.0) {
            return Err(Error::InvalidInput(format!("strike must be non-negative, got {strike}")));
        }
        Ok(PayoffSpec { strike, rate })
    }

    /// Payoff of a price vector at time `t`.
    #[inline]
    pub fn value(&self, prices: &[f64], t: f64) -> f64 {
        let top = prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let intrinsic = (top - self.strike).max(0.0);
        if intrinsic == 0.0 {
            0.0
        } else {
            (-self.rate * t).exp() * intrinsic
        }
    }
}

/// Discounted payoff of `path` at date index `j`.
pub fn payoff(spec: &PayoffSpec, paths: &PathSet, path: usize, j: usize) -> Result<f64> {
    if path >= paths.n_paths() || j >= paths.n_dates() {
        return Err(Error::InvalidInput(format!(
            "index ({path}, {j}) out of range ({} paths, {} dates)",
            paths.n_paths(),
            paths.n_dates()
        )));
    }
    Ok(spec.value(paths.state(path, j), paths.grid.dates()[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_and_stderr;

    fn params(sigma: f64) -> GbmParams {
        GbmParams {
            s0: 90.0,
            r: 0.05,
            delta: 0.1,
            sigma,
            d: 2,
        }
    }

    #[test]
    fn zero_volatility_is_deterministic_drift() {
        let grid = ExerciseGrid::equidistant(3.0, 9).unwrap();
        let ps = simulate_paths(params(0.0), &grid, 5, 1).unwrap();
        for i in 0..5 {
            for (j, &t) in grid.dates().iter().enumerate() {
                let expect = 90.0 * ((0.05 - 0.1) * t).exp();
                for &x in ps.state(i, j) {
                    assert!((x - expect).abs() < 1e-12 * expect);
                }
            }
        }
    }

    #[test]
    fn terminal_mean_matches_lognormal_moment() {
        let grid = ExerciseGrid::equidistant(3.0, 9).unwrap();
        let ps = simulate_paths(params(0.2), &grid, 100_000, 7).unwrap();
        let j = grid.last();
        for a in 0..2 {
            let xs: Vec<f64> = (0..ps.n_paths()).map(|i| ps.state(i, j)[a]).collect();
            let (m, se) = mean_and_stderr(&xs);
            let expect = 90.0 * ((0.05f64 - 0.1) * 3.0).exp();
            assert!((m - expect).abs() < 3.0 * se, "{m} vs {expect} (se {se})");
        }
    }

    #[test]
    fn discounted_prices_have_constant_mean() {
        let grid = ExerciseGrid::equidistant(3.0, 9).unwrap();
        let ps = simulate_paths(params(0.2), &grid, 100_000, 11).unwrap();
        for (j, &t) in grid.dates().iter().enumerate() {
            let xs: Vec<f64> = (0..ps.n_paths())
                .map(|i| ps.state(i, j)[0] * (-(0.05 - 0.1) * t).exp())
                .collect();
            let (m, se) = mean_and_stderr(&xs);
            assert!((m - 90.0).abs() <= 3.0 * se.max(1e-12), "date {j}: {m}");
        }
    }

    #[test]
    fn same_seed_is_bit_identical_and_prefix_stable() {
        let grid = ExerciseGrid::equidistant(1.0, 4).unwrap();
        let a = simulate_paths(params(0.3), &grid, 50, 99).unwrap();
        let b = simulate_paths(params(0.3), &grid, 50, 99).unwrap();
        assert_eq!(a.raw(), b.raw());
        // path i depends on (seed, i) only, not on n
        let c = simulate_paths(params(0.3), &grid, 20, 99).unwrap();
        assert_eq!(&a.raw()[..c.raw().len()], c.raw());
        let other = simulate_paths_tagged(params(0.3), &grid, 50, 99, stream::TRAINING).unwrap();
        assert_ne!(a.raw(), other.raw());
    }

    #[test]
    fn payoff_examples() {
        let p = PayoffSpec::max_call(100.0, 0.05).unwrap();
        assert_eq!(p.value(&[90.0, 95.0], 1.0), 0.0);
        assert_eq!(p.value(&[110.0], 0.0), 10.0);
        let v = p.value(&[105.0, 120.0], 1.0);
        assert!((v - 20.0 * (-0.05f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn payoff_index_checked() {
        let grid = ExerciseGrid::equidistant(1.0, 2).unwrap();
        let ps = simulate_paths(params(0.2), &grid, 3, 1).unwrap();
        let p = PayoffSpec::max_call(100.0, 0.05).unwrap();
        assert!(payoff(&p, &ps, 3, 0).is_err());
        assert!(payoff(&p, &ps, 0, 3).is_err());
        assert!(payoff(&p, &ps, 2, 2).unwrap() >= 0.0);
    }

    #[test]
    fn bad_grid_rejected() {
        assert!(ExerciseGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(ExerciseGrid::new(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn binary_and_csv_layouts_round_trip() {
        let grid = ExerciseGrid::equidistant(1.0, 3).unwrap();
        let ps = simulate_paths(params(0.2), &grid, 7, 5).unwrap();
        let mut buf = Vec::new();
        ps.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 8 * 7 * 4 * 2);
        let back = PathSet::read_binary(&buf[..], ps.params, grid.clone()).unwrap();
        assert_eq!(back.raw(), ps.raw());
        let mut csv = Vec::new();
        ps.write_csv(&mut csv).unwrap();
        let back = PathSet::read_csv(&csv[..], ps.params, grid).unwrap();
        assert_eq!(back.raw(), ps.raw());
    }
}
