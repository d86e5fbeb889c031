//! wasm-bindgen entry points for the static demo page. Every export takes
//! plain numbers and returns a JSON string; errors come back as JS exceptions.

use kamgrid::coupling::{estimate_coupling_gap, SimConfig, Strategy};
use kamgrid::ctmc::StationaryPolicy;
use kamgrid::discounted::SolverConfig;
use kamgrid::harness::{effective_h_reference, effective_h_study};
use kamgrid::lagrangian::TrigTerm;
use kamgrid::weak_kam::{solve_weak_kam, ContinuationSchedule};
use kamgrid::{KamError, LagrangianSpec, Lattice, LatticeProblem, NodeIndex, Potential};
use serde_json::json;
use wasm_bindgen::prelude::*;

const MAX_NODES: usize = 512;

fn js_err(e: KamError) -> JsError {
    JsError::new(&e.to_string())
}

/// `|v|^2/2 + a cos(2 pi x) + b sin(2 pi x)` on the circle.
fn pendulum(a: f64, b: f64) -> Result<LagrangianSpec, KamError> {
    LagrangianSpec::mechanical(
        1,
        Potential::Trig(vec![TrigTerm {
            k: vec![1],
            cos_coeff: a,
            sin_coeff: b,
        }]),
    )
}

fn check_resolution(n: usize) -> Result<(), JsError> {
    if !(2..=MAX_NODES).contains(&n) {
        return Err(JsError::new(&format!("resolution must lie in 2..={MAX_NODES}")));
    }
    Ok(())
}

/// Corrector, optimal velocities and `Hbar_N` for the pendulum at resolution `n`.
#[wasm_bindgen]
pub fn weak_kam_profile(n: usize, a: f64, b: f64) -> Result<String, JsError> {
    check_resolution(n)?;
    let spec = pendulum(a, b).map_err(js_err)?;
    let lat = Lattice::new(1, n).map_err(js_err)?;
    let problem = LatticeProblem::new(lat, spec.clone()).map_err(js_err)?;
    let sol = solve_weak_kam(&problem, &ContinuationSchedule::default(), &SolverConfig::default()).map_err(js_err)?;
    let reference = effective_h_reference(&spec).map_err(js_err)?;
    let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let potential: Vec<f64> = x.iter().map(|&xi| spec.potential().eval(&[xi])).collect();
    Ok(json!({
        "n": n,
        "h_bar": sol.h_bar,
        "reference": reference.value,
        "residual": sol.residual,
        "x": x,
        "psi": sol.psi.values(),
        "velocity": sol.policy.as_flat(),
        "potential": potential,
    })
    .to_string())
}

/// `|Hbar_N - Hbar|` over `N = 2^k` for `k` in `[lo, hi]`.
#[wasm_bindgen]
pub fn effective_h_sweep(a: f64, b: f64, lo: u32, hi: u32) -> Result<String, JsError> {
    if lo < 1 || hi > 9 || hi < lo + 2 {
        return Err(JsError::new("need 1 <= lo, hi <= 9 and at least three resolutions"));
    }
    let spec = pendulum(a, b).map_err(js_err)?;
    let sweep: Vec<usize> = (lo..=hi).map(|k| 1usize << k).collect();
    let study = effective_h_study(
        &spec,
        &sweep,
        512,
        1.0,
        &ContinuationSchedule::default(),
        &SolverConfig::default(),
    )
    .map_err(js_err)?;
    serde_json::to_string(&study).map_err(|e| JsError::new(&e.to_string()))
}

/// Coupling gap `E|x1(t) - X2(t)|` for a constant velocity, with its bound.
#[wasm_bindgen]
pub fn coupling_curve(n: usize, velocity: f64, samples: usize, seed: u64) -> Result<String, JsError> {
    check_resolution(n)?;
    if !(1..=200_000).contains(&samples) {
        return Err(JsError::new("samples must lie in 1..=200000"));
    }
    let lat = Lattice::new(1, n).map_err(js_err)?;
    let policy = StationaryPolicy::constant(&lat, &[velocity]).map_err(js_err)?;
    let cfg = SimConfig {
        seed,
        samples,
        horizon: 1.0,
        times: (1..=20).map(|k| k as f64 / 20.0).collect(),
        ..SimConfig::default()
    };
    let start = NodeIndex::new(&[0]);
    let report = estimate_coupling_gap(&lat, Strategy::Stationary(&policy), &lat.point(0), &start, &cfg)
        .map_err(js_err)?;
    serde_json::to_string(&report).map_err(|e| JsError::new(&e.to_string()))
}
