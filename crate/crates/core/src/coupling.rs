//! Monte Carlo for the controlled chain: Gillespie paths, the coupling of a
//! chain with the deterministic motion it drives, and discounted costs.
//!
//! Every sample draws from its own ChaCha stream of the master seed, so the
//! results do not depend on how samples are spread over threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::ctmc::StationaryPolicy;
use crate::error::{KamError, Result};
use crate::lattice::{shortest_displacement, Dir, Lattice, NodeIndex, TorusPoint};
use crate::problem::LatticeProblem;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub samples: usize,
    pub horizon: f64,
    /// Times at which the coupling gap is reported.
    pub times: Vec<f64>,
    pub lambda: Option<f64>,
    /// Requested bound on the neglected tail of a discounted cost.
    pub truncation: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            samples: 10_000,
            horizon: 1.0,
            times: vec![0.25, 0.5, 1.0],
            lambda: None,
            truncation: 1e-6,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(KamError::config("simulation.samples must be >= 1"));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(KamError::config("simulation.horizon must be finite and >= 0"));
        }
        if self.times.iter().any(|&t| !(t >= 0.0) || t > self.horizon) {
            return Err(KamError::config("simulation.times must lie in [0, horizon]"));
        }
        if self.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(KamError::config("simulation.times must be sorted"));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return Err(KamError::config("simulation.lambda must be > 0"));
            }
        }
        if !(self.truncation > 0.0) {
            return Err(KamError::config("simulation.truncation must be > 0"));
        }
        Ok(())
    }
}

/// Velocity of a time-dependent strategy at `(t, node)`, written to `out`.
pub type VelocityFn<'a> = dyn Fn(f64, usize, &mut [f64]) + Sync + 'a;

#[derive(Clone, Copy)]
pub enum Strategy<'a> {
    Stationary(&'a StationaryPolicy),
    /// `bound` caps the Euclidean speed at every `(t, node)`.
    TimeDependent { velocity: &'a VelocityFn<'a>, bound: f64 },
}

impl Strategy<'_> {
    /// Speed bound `c`.
    pub fn speed_bound(&self) -> f64 {
        match self {
            Strategy::Stationary(p) => p.sup_speed(),
            Strategy::TimeDependent { bound, .. } => *bound,
        }
    }

    fn check(&self, lat: &Lattice) -> Result<()> {
        match self {
            Strategy::Stationary(p) => {
                if p.dim() != lat.dim() || p.node_count() != lat.node_count() {
                    return Err(KamError::argument("policy shape does not match the lattice"));
                }
                if p.as_flat().iter().any(|v| !v.is_finite()) {
                    return Err(KamError::argument("policy velocities must be finite"));
                }
            }
            Strategy::TimeDependent { bound, .. } => {
                if !(*bound >= 0.0) || !bound.is_finite() {
                    return Err(KamError::argument("time-dependent strategy needs a finite speed bound"));
                }
            }
        }
        Ok(())
    }
}

/// One run of the coupled pair. States are unwrapped lifts in `R^d`; the
/// chain sits at `h * chain_lifts[k]` on `[jump_times[k], jump_times[k+1])`.
#[derive(Debug, Clone)]
pub struct CoupledPath {
    pub h: f64,
    pub jump_times: Vec<f64>,
    pub chain_lifts: Vec<Vec<i64>>,
    /// Deterministic motion at each jump time.
    pub motion: Vec<Vec<f64>>,
    pub horizon: f64,
}

impl CoupledPath {
    pub fn jumps(&self) -> usize {
        self.jump_times.len() - 1
    }

    fn segment(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    /// Lift of the chain at time `t`.
    pub fn chain_at(&self, t: f64) -> Vec<f64> {
        self.chain_lifts[self.segment(t)].iter().map(|&k| k as f64 * self.h).collect()
    }

    /// Torus position of the chain at time `t`.
    pub fn chain_point(&self, t: f64) -> TorusPoint {
        TorusPoint::new(&self.chain_at(t))
    }
}

#[derive(Clone)]
struct Walker<'a> {
    lat: &'a Lattice,
    strategy: Strategy<'a>,
    node: usize,
    lift: Vec<i64>,
    motion: Vec<f64>,
    velocity: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Walker<'a> {
    fn new(lat: &'a Lattice, strategy: Strategy<'a>, x1: &[f64], x2: &NodeIndex) -> Self {
        let node = lat.linear(x2);
        let lift: Vec<i64> = x2.as_slice().iter().map(|&k| k as i64).collect();
        let h = lat.h();
        let base: Vec<f64> = lift.iter().map(|&k| k as f64 * h).collect();
        let offset = shortest_displacement(&base, x1);
        let motion = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
        let d = lat.dim();
        Walker {
            lat,
            strategy,
            node,
            lift,
            motion,
            velocity: vec![0.0; d],
            scratch: vec![0.0; d],
        }
    }

    fn velocity_at(&mut self, t: f64) -> Result<()> {
        match self.strategy {
            Strategy::Stationary(p) => self.velocity.copy_from_slice(p.get(self.node)),
            Strategy::TimeDependent { velocity, bound } => {
                velocity(t, self.node, &mut self.velocity);
                let speed = self.velocity.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(speed <= bound * (1.0 + 1e-12)) {
                    return Err(KamError::argument(format!(
                        "strategy speed {speed} exceeds its declared bound {bound}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Moves the deterministic motion from `a` to `b` with the chain frozen.
    fn advance_motion(&mut self, a: f64, b: f64) -> Result<()> {
        if b <= a {
            return Ok(());
        }
        match self.strategy {
            Strategy::Stationary(_) => {
                for (m, v) in self.motion.iter_mut().zip(&self.velocity) {
                    *m += v * (b - a);
                }
            }
            Strategy::TimeDependent { velocity, .. } => {
                // composite Simpson rule, 4 panels
                const PANELS: usize = 4;
                let step = (b - a) / PANELS as f64;
                let mut acc = vec![0.0; self.motion.len()];
                for k in 0..=2 * PANELS {
                    let s = a + k as f64 * step / 2.0;
                    let w = if k == 0 || k == 2 * PANELS {
                        1.0
                    } else if k % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    velocity(s, self.node, &mut self.scratch);
                    for (acc_i, v) in acc.iter_mut().zip(&self.scratch) {
                        *acc_i += w * v;
                    }
                }
                for (m, a_i) in self.motion.iter_mut().zip(acc) {
                    *m += a_i * step / 6.0;
                }
            }
        }
        Ok(())
    }

    fn jump(&mut self, rng: &mut ChaCha8Rng) {
        let total: f64 = self.velocity.iter().map(|v| v.abs()).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut axis = self.velocity.len() - 1;
        for (i, v) in self.velocity.iter().enumerate() {
            if v.abs() > 0.0 && pick < v.abs() {
                axis = i;
                break;
            }
            pick -= v.abs();
        }
        while self.velocity[axis] == 0.0 {
            axis -= 1;
        }
        let dir = if self.velocity[axis] > 0.0 { Dir::Plus } else { Dir::Minus };
        self.node = self.lat.step(self.node, axis, dir);
        self.lift[axis] += if dir == Dir::Plus { 1 } else { -1 };
    }

    fn rate(&self) -> f64 {
        self.lat.resolution() as f64 * self.velocity.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Simulates the pair on `[0, horizon]` and records `(t, squared gap)` at
/// each requested time through `observe`.
fn run_coupled(
    lat: &Lattice,
    strategy: Strategy<'_>,
    x1: &[f64],
    x2: &NodeIndex,
    horizon: f64,
    rng: &mut ChaCha8Rng,
    mut record: Option<&mut CoupledPath>,
    times: &[f64],
    gaps: &mut Vec<f64>,
) -> Result<()> {
    let mut w = Walker::new(lat, strategy, x1, x2);
    let h = lat.h();
    let dominating = lat.resolution() as f64 * (lat.dim() as f64).sqrt() * strategy.speed_bound();
    let mut t = 0.0;
    let mut next_time = 0;
    let gap = |w: &Walker| -> f64 {
        w.motion
            .iter()
            .zip(&w.lift)
            .map(|(m, &k)| (m - k as f64 * h).powi(2))
            .sum()
    };
    w.velocity_at(0.0)?;
    loop {
        // candidate event: exact for stationary policies, thinned otherwise
        let (rate, thinned) = match strategy {
            Strategy::Stationary(_) => (w.rate(), false),
            Strategy::TimeDependent { .. } => (dominating, true),
        };
        let tau = if rate > 0.0 {
            rng.sample::<f64, _>(Exp1) / rate
        } else {
            f64::INFINITY
        };
        let t_next = t + tau;
        while next_time < times.len() && times[next_time] < t_next.min(horizon + f64::EPSILON) {
            let s = times[next_time];
            let mut probe = w.clone();
            probe.advance_motion(t, s)?;
            gaps.push(gap(&probe));
            next_time += 1;
        }
        if t_next > horizon {
            w.advance_motion(t, horizon)?;
            if let Some(path) = record.as_deref_mut() {
                path.horizon = horizon;
            }
            return Ok(());
        }
        w.advance_motion(t, t_next)?;
        t = t_next;
        let accept = if thinned {
            w.velocity_at(t)?;
            rng.random::<f64>() * dominating < w.rate()
        } else {
            true
        };
        if accept && w.rate() > 0.0 {
            w.jump(rng);
            if let Some(path) = record.as_deref_mut() {
                path.jump_times.push(t);
                path.chain_lifts.push(w.lift.clone());
                path.motion.push(w.motion.clone());
            }
        }
        w.velocity_at(t)?;
    }
}

fn sample_rng(seed: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    rng
}

/// A chain path from `x0` with the motion started at the same point.
pub fn simulate_chain(
    lat: &Lattice,
    strategy: Strategy<'_>,
    x0: &NodeIndex,
    horizon: f64,
    seed: u64,
) -> Result<CoupledPath> {
    let start = lat.point(lat.linear(x0));
    simulate_coupled(lat, strategy, &start, x0, horizon, seed)
}

/// The coupled pair started from `x1` (motion) and `x2` (chain), with lifts
/// chosen so that their distance is the torus distance.
pub fn simulate_coupled(
    lat: &Lattice,
    strategy: Strategy<'_>,
    x1: &TorusPoint,
    x2: &NodeIndex,
    horizon: f64,
    seed: u64,
) -> Result<CoupledPath> {
    check_start(lat, &strategy, x1, x2)?;
    if !(horizon >= 0.0) {
        return Err(KamError::argument("horizon must be >= 0"));
    }
    let mut rng = sample_rng(seed, 0);
    let w = Walker::new(lat, strategy, x1.coords(), x2);
    let mut path = CoupledPath {
        h: lat.h(),
        jump_times: vec![0.0],
        chain_lifts: vec![w.lift.clone()],
        motion: vec![w.motion.clone()],
        horizon,
    };
    let mut unused = Vec::new();
    run_coupled(lat, strategy, x1.coords(), x2, horizon, &mut rng, Some(&mut path), &[], &mut unused)?;
    Ok(path)
}

fn check_start(lat: &Lattice, strategy: &Strategy<'_>, x1: &TorusPoint, x2: &NodeIndex) -> Result<()> {
    strategy.check(lat)?;
    if x1.dim() != lat.dim() || x2.as_slice().len() != lat.dim() {
        return Err(KamError::argument("start points do not match the lattice dimension"));
    }
    if x2.as_slice().iter().any(|&k| k >= lat.resolution()) {
        return Err(KamError::argument("chain start is not a lattice node"));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingRow {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
    /// Bound with the initial distance squared, reported for information.
    pub bound_squared_start: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub rows: Vec<CouplingRow>,
    pub speed_bound: f64,
    pub initial_distance: f64,
    pub samples: usize,
    pub seed: u64,
}

impl CouplingReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

fn mean_and_stderr(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Empirical `E |X1_t - X2_t|^2` at `cfg.times` against
/// `|x1 - x2| + sqrt(d) c t / N`.
pub fn estimate_coupling_gap(
    lat: &Lattice,
    strategy: Strategy<'_>,
    x1: &TorusPoint,
    x2: &NodeIndex,
    cfg: &SimConfig,
) -> Result<CouplingReport> {
    cfg.validate()?;
    check_start(lat, &strategy, x1, x2)?;
    let times = &cfg.times;
    let horizon = times.last().copied().unwrap_or(0.0);
    let per_sample = crate::par_map(cfg.samples, |i| {
        let mut rng = sample_rng(cfg.seed, i as u64);
        let mut gaps = Vec::with_capacity(times.len());
        run_coupled(lat, strategy, x1.coords(), x2, horizon, &mut rng, None, times, &mut gaps)?;
        Ok(gaps)
    })?;
    let start = lat.point(lat.linear(x2));
    let dist = crate::lattice::wrap_distance(x1, &start)?;
    let c = strategy.speed_bound();
    let d = lat.dim() as f64;
    let n = lat.resolution() as f64;
    let rows = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (mean, stderr) = mean_and_stderr(per_sample.iter().map(|g| g[k]), cfg.samples);
            let drift = d.sqrt() * c * t / n;
            let bound = dist + drift;
            CouplingRow {
                t,
                mean,
                stderr,
                bound,
                pass: mean <= bound + 3.0 * stderr,
                bound_squared_start: dist * dist + drift,
            }
        })
        .collect();
    Ok(CouplingReport {
        rows,
        speed_bound: c,
        initial_distance: dist,
        samples: cfg.samples,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscountedEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// Bound on the part of the cost beyond `horizon`.
    pub truncation_bound: f64,
    pub horizon: f64,
    pub samples: usize,
}

/// Monte Carlo of `E int_0^inf e^{-lambda t} L(X_t, pi(X_t)) dt` from `z`.
/// The running cost is constant between jumps, so each holding interval is
/// integrated exactly; paths are cut at a horizon chosen so the tail is at
/// most `cfg.truncation`, except that a path resting at a node with zero
/// velocity is integrated to infinity.
pub fn estimate_discounted_cost(
    problem: &LatticeProblem,
    policy: &StationaryPolicy,
    z: &NodeIndex,
    lambda: f64,
    cfg: &SimConfig,
) -> Result<DiscountedEstimate> {
    cfg.validate()?;
    if !(lambda > 0.0) {
        return Err(KamError::argument(format!("discount must be > 0, got {lambda}")));
    }
    let lat = problem.lattice();
    let strategy = Strategy::Stationary(policy);
    check_start(lat, &strategy, &lat.point(0), z)?;
    let cost: Vec<f64> = (0..problem.node_count()).map(|x| problem.lagrangian(x, policy.get(x))).collect();
    let sup = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let horizon = if sup > 0.0 {
        ((sup / (lambda * cfg.truncation)).ln() / lambda).max(0.0)
    } else {
        0.0
    };
    let truncation_bound = (-lambda * horizon).exp() * sup / lambda;
    let n = lat.resolution() as f64;
    let start = lat.linear(z);

    let values = crate::par_map(cfg.samples, |i| {
        let mut rng = sample_rng(cfg.seed, i as u64);
        let mut node = start;
        let mut t = 0.0f64;
        let mut total = 0.0;
        loop {
            let v = policy.get(node);
            let rate = n * v.iter().map(|w| w.abs()).sum::<f64>();
            let weight_from = (-lambda * t).exp();
            if rate == 0.0 {
                total += cost[node] * weight_from / lambda;
                return Ok(total);
            }
            let tau = rng.sample::<f64, _>(Exp1) / rate;
            let end = (t + tau).min(horizon);
            total += cost[node] * (weight_from - (-lambda * end).exp()) / lambda;
            if t + tau >= horizon {
                return Ok(total);
            }
            t += tau;
            let mut pick = rng.random::<f64>() * rate / n;
            let mut axis = v.len() - 1;
            for (a, w) in v.iter().enumerate() {
                if w.abs() > 0.0 && pick < w.abs() {
                    axis = a;
                    break;
                }
                pick -= w.abs();
            }
            while v[axis] == 0.0 {
                axis -= 1;
            }
            node = lat.step(node, axis, if v[axis] > 0.0 { Dir::Plus } else { Dir::Minus });
        }
    })?;
    let (estimate, stderr) = mean_and_stderr(values.iter().copied(), cfg.samples);
    Ok(DiscountedEstimate {
        estimate,
        stderr,
        truncation_bound,
        horizon,
        samples: cfg.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{LagrangianSpec, Potential};

    #[test]
    fn zero_policy_never_jumps() {
        let lat = Lattice::new(2, 8).unwrap();
        let p = StationaryPolicy::zero(&lat);
        let path = simulate_chain(&lat, Strategy::Stationary(&p), &NodeIndex::new(&[3, 4]), 5.0, 1).unwrap();
        assert_eq!(path.jumps(), 0);
        assert_eq!(path.chain_at(4.0), vec![0.375, 0.5]);
    }

    #[test]
    fn jump_counts_are_poisson() {
        let lat = Lattice::new(1, 10).unwrap();
        let p = StationaryPolicy::constant(&lat, &[2.0]).unwrap();
        let samples = 10_000;
        let counts: Vec<f64> = (0..samples)
            .map(|s| simulate_chain(&lat, Strategy::Stationary(&p), &NodeIndex::new(&[0]), 1.0, s).unwrap().jumps() as f64)
            .collect();
        let (mean, stderr) = mean_and_stderr(counts.iter().copied(), samples as usize);
        assert!((mean - 20.0).abs() <= 3.0 * stderr, "{mean} +- {stderr}");
        // every jump moves one step in the policy direction
        let path = simulate_chain(&lat, Strategy::Stationary(&p), &NodeIndex::new(&[0]), 1.0, 7).unwrap();
        for w in path.chain_lifts.windows(2) {
            assert_eq!(w[1][0] - w[0][0], 1);
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let lat = Lattice::new(2, 6).unwrap();
        let p = StationaryPolicy::constant(&lat, &[1.0, -0.5]).unwrap();
        let a = simulate_chain(&lat, Strategy::Stationary(&p), &NodeIndex::new(&[1, 1]), 3.0, 42).unwrap();
        let b = simulate_chain(&lat, Strategy::Stationary(&p), &NodeIndex::new(&[1, 1]), 3.0, 42).unwrap();
        assert_eq!(a.jump_times, b.jump_times);
        assert_eq!(a.chain_lifts, b.chain_lifts);
        let cfg = SimConfig {
            samples: 500,
            seed: 9,
            ..SimConfig::default()
        };
        let x1 = lat.point(7);
        let r1 = estimate_coupling_gap(&lat, Strategy::Stationary(&p), &x1, &NodeIndex::new(&[1, 1]), &cfg).unwrap();
        let r2 = estimate_coupling_gap(&lat, Strategy::Stationary(&p), &x1, &NodeIndex::new(&[1, 1]), &cfg).unwrap();
        for (a, b) in r1.rows.iter().zip(&r2.rows) {
            assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        }
    }

    #[test]
    fn constant_policy_gap_matches_poisson_variance() {
        let lat = Lattice::new(1, 10).unwrap();
        let p = StationaryPolicy::constant(&lat, &[2.0]).unwrap();
        let cfg = SimConfig {
            seed: 3,
            ..SimConfig::default()
        };
        let x = NodeIndex::new(&[0]);
        let r = estimate_coupling_gap(&lat, Strategy::Stationary(&p), &lat.point(0), &x, &cfg).unwrap();
        for row in &r.rows {
            let exact = 0.1 * 2.0 * row.t;
            assert!((row.mean - exact).abs() <= 3.0 * row.stderr, "t={}: {} vs {exact}", row.t, row.mean);
            assert!((row.bound - exact).abs() < 1e-15);
        }
        assert!(r.all_pass());
    }

    #[test]
    fn zero_policy_gap_vanishes() {
        let lat = Lattice::new(1, 10).unwrap();
        let p = StationaryPolicy::zero(&lat);
        let cfg = SimConfig {
            samples: 10,
            ..SimConfig::default()
        };
        let r = estimate_coupling_gap(&lat, Strategy::Stationary(&p), &lat.point(4), &NodeIndex::new(&[4]), &cfg).unwrap();
        assert!(r.rows.iter().all(|row| row.mean == 0.0 && row.bound >= 0.0 && row.pass));
    }

    #[test]
    fn time_dependent_strategy_matches_stationary_equivalent() {
        let lat = Lattice::new(1, 10).unwrap();
        let f = |_t: f64, _x: usize, out: &mut [f64]| out[0] = 2.0;
        let strategy = Strategy::TimeDependent { velocity: &f, bound: 2.0 };
        let cfg = SimConfig {
            seed: 1,
            samples: 10_000,
            ..SimConfig::default()
        };
        let r = estimate_coupling_gap(&lat, strategy, &lat.point(0), &NodeIndex::new(&[0]), &cfg).unwrap();
        for row in &r.rows {
            assert!((row.mean - 0.2 * row.t).abs() <= 3.0 * row.stderr);
        }
        let too_fast = |_t: f64, _x: usize, out: &mut [f64]| out[0] = 3.0;
        let bad = Strategy::TimeDependent { velocity: &too_fast, bound: 2.0 };
        assert!(matches!(
            estimate_coupling_gap(&lat, bad, &lat.point(0), &NodeIndex::new(&[0]), &cfg),
            Err(KamError::Argument(_))
        ));
    }

    #[test]
    fn discounted_cost_of_resting_path_is_exact() {
        let problem = LatticeProblem::new(
            Lattice::new(1, 8).unwrap(),
            LagrangianSpec::mechanical(1, Potential::cosine(&[1], 1.0, 0.0)).unwrap(),
        )
        .unwrap();
        let p = StationaryPolicy::zero(problem.lattice());
        let cfg = SimConfig {
            samples: 4,
            ..SimConfig::default()
        };
        let e = estimate_discounted_cost(&problem, &p, &NodeIndex::new(&[0]), 1.0, &cfg).unwrap();
        assert_eq!(e.estimate, 1.0);
        assert_eq!(e.stderr, 0.0);
        let free = LatticeProblem::new(Lattice::new(1, 8).unwrap(), LagrangianSpec::mechanical(1, Potential::zero()).unwrap()).unwrap();
        let e = estimate_discounted_cost(&free, &p, &NodeIndex::new(&[0]), 1.0, &cfg).unwrap();
        assert_eq!(e.estimate, 0.0);
    }
}
