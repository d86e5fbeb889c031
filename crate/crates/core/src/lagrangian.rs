//! Lagrangians `L(x,v) = sum_i kappa_i |v_i|^alpha_i / alpha_i + P(x)` on the
//! torus, their Legendre transforms and the lattice Hamiltonian
//! `H_N(x, xi) = sup_v [xi . v - L(x,v)]`.
//!
//! Separable power-law kinetic energy admits per-axis closed forms for every
//! supremum. A black-box Lagrangian ([`GenericLagrangian`]) is maximized
//! numerically inside a declared velocity box.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{KamError, Result};
use crate::lattice::{canonical, pair_dot_unchecked, AxisVec, DiscreteGradient, TorusPoint};

/// One Fourier mode `cos_coeff * cos(2 pi k.x) + sin_coeff * sin(2 pi k.x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub k: Vec<i32>,
    #[serde(rename = "cos")]
    pub cos_coeff: f64,
    #[serde(rename = "sin", default)]
    pub sin_coeff: f64,
}

/// Values on an `M^d` periodic grid, read back by multilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPotential {
    dim: usize,
    resolution: usize,
    values: Vec<f64>,
}

impl TabulatedPotential {
    pub fn new(dim: usize, resolution: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || resolution < 2 {
            return Err(KamError::config("tabulated potential needs dim >= 1 and resolution >= 2"));
        }
        let expected = resolution.pow(dim as u32);
        if values.len() != expected {
            return Err(KamError::config(format!(
                "tabulated potential expects {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KamError::config("tabulated potential contains non-finite values"));
        }
        Ok(TabulatedPotential {
            dim,
            resolution,
            values,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let m = self.resolution;
        let dim = self.dim;
        let mut lo: AxisVec<usize> = SmallVec::with_capacity(dim);
        let mut t: AxisVec<f64> = SmallVec::with_capacity(dim);
        for &c in x {
            let s = canonical(c) * m as f64;
            let i = (s.floor() as usize).min(m - 1);
            lo.push(i);
            t.push(s - i as f64);
        }
        let mut total = 0.0;
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut flat = 0usize;
            for a in 0..dim {
                let upper = (corner >> (dim - 1 - a)) & 1 == 1;
                let idx = if upper { (lo[a] + 1) % m } else { lo[a] };
                weight *= if upper { t[a] } else { 1.0 - t[a] };
                flat = flat * m + idx;
            }
            if weight != 0.0 {
                total += weight * self.values[flat];
            }
        }
        total
    }
}

/// Position-dependent part `P(x)` of the Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Trig(Vec<TrigTerm>),
    Tabulated(TabulatedPotential),
}

impl Potential {
    pub fn zero() -> Self {
        Potential::Trig(Vec::new())
    }

    /// `amplitude * cos(2 pi k.x + phase)`.
    pub fn cosine(k: &[i32], amplitude: f64, phase: f64) -> Self {
        Potential::Trig(vec![TrigTerm {
            k: k.to_vec(),
            cos_coeff: amplitude * phase.cos(),
            sin_coeff: -amplitude * phase.sin(),
        }])
    }

    /// Sum of two potentials of the same kind. Tabulated potentials only add
    /// to tabulated potentials of identical resolution.
    pub fn plus(self, other: Potential) -> Result<Self> {
        match (self, other) {
            (Potential::Trig(mut a), Potential::Trig(b)) => {
                a.extend(b);
                Ok(Potential::Trig(a))
            }
            (Potential::Tabulated(a), Potential::Tabulated(b))
                if a.dim == b.dim && a.resolution == b.resolution =>
            {
                let values = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
                Ok(Potential::Tabulated(TabulatedPotential::new(a.dim, a.resolution, values)?))
            }
            _ => Err(KamError::config("cannot add potentials of different kinds")),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Trig(terms) => terms
                .iter()
                .map(|t| {
                    let theta = 2.0 * PI * dot_k(&t.k, x);
                    t.cos_coeff * theta.cos() + t.sin_coeff * theta.sin()
                })
                .sum(),
            Potential::Tabulated(tab) => tab.eval(x),
        }
    }

    /// Exact gradient for trigonometric potentials; central differences at
    /// table resolution for tabulated ones.
    pub fn gradient(&self, x: &[f64]) -> AxisVec<f64> {
        match self {
            Potential::Trig(terms) => {
                let mut g: AxisVec<f64> = SmallVec::from_elem(0.0, x.len());
                for t in terms {
                    let theta = 2.0 * PI * dot_k(&t.k, x);
                    let common = 2.0 * PI * (-t.cos_coeff * theta.sin() + t.sin_coeff * theta.cos());
                    for (gi, &ki) in g.iter_mut().zip(&t.k) {
                        *gi += common * ki as f64;
                    }
                }
                g
            }
            Potential::Tabulated(tab) => {
                let step = 1.0 / tab.resolution as f64;
                (0..x.len())
                    .map(|a| {
                        let mut up: AxisVec<f64> = x.iter().copied().collect();
                        let mut down = up.clone();
                        up[a] += step;
                        down[a] -= step;
                        (tab.eval(&up) - tab.eval(&down)) / (2.0 * step)
                    })
                    .collect()
            }
        }
    }

    /// Dimension the potential was declared for, if it fixes one.
    pub fn declared_dim(&self) -> Option<usize> {
        match self {
            Potential::Trig(terms) => terms.first().map(|t| t.k.len()),
            Potential::Tabulated(t) => Some(t.dim),
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            Potential::Trig(terms) => {
                if let Some(bad) = terms.iter().find(|t| t.k.len() != dim) {
                    return Err(KamError::config(format!(
                        "potential term with multi-index {:?} does not match dimension {dim}",
                        bad.k
                    )));
                }
                if terms.iter().any(|t| !t.cos_coeff.is_finite() || !t.sin_coeff.is_finite()) {
                    return Err(KamError::config("potential coefficients must be finite"));
                }
            }
            Potential::Tabulated(t) if t.dim != dim => {
                return Err(KamError::config(format!(
                    "tabulated potential has dimension {}, problem has {dim}",
                    t.dim
                )));
            }
            Potential::Tabulated(_) => {}
        }
        Ok(())
    }
}

fn dot_k(k: &[i32], x: &[f64]) -> f64 {
    k.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi).sum()
}

/// `kappa |w|^alpha / alpha` on one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisKinetic {
    pub exponent: f64,
    pub weight: f64,
}

impl AxisKinetic {
    pub const QUADRATIC: AxisKinetic = AxisKinetic {
        exponent: 2.0,
        weight: 1.0,
    };

    pub fn eval(&self, w: f64) -> f64 {
        let a = w.abs();
        if self.exponent == 2.0 {
            0.5 * self.weight * a * a
        } else {
            self.weight * a.powf(self.exponent) / self.exponent
        }
    }

    /// `sup_{w >= 0} [s w - kappa w^alpha / alpha]` and its maximizer.
    pub fn half_line_conjugate(&self, s: f64) -> (f64, f64) {
        if s <= 0.0 {
            return (0.0, 0.0);
        }
        let w = if self.exponent == 2.0 {
            s / self.weight
        } else {
            (s / self.weight).powf(1.0 / (self.exponent - 1.0))
        };
        (s * w * (1.0 - 1.0 / self.exponent), w)
    }

    /// Same supremum restricted to `w in [0, cap]`.
    fn capped_conjugate(&self, s: f64, cap: f64) -> (f64, f64) {
        let (val, w) = self.half_line_conjugate(s);
        if w <= cap {
            (val, w)
        } else {
            (s * cap - self.eval(cap), cap)
        }
    }

    /// Conjugate exponent `beta` with `1/alpha + 1/beta = 1`.
    pub fn dual_exponent(&self) -> f64 {
        self.exponent / (self.exponent - 1.0)
    }
}

type LagrangianFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Black-box Lagrangian, convex in `v`, maximized numerically.
#[derive(Clone)]
pub struct GenericLagrangian {
    f: Arc<LagrangianFn>,
    velocity_box: Option<f64>,
}

impl GenericLagrangian {
    pub fn new(f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static, velocity_box: Option<f64>) -> Self {
        GenericLagrangian {
            f: Arc::new(f),
            velocity_box,
        }
    }

    pub fn velocity_box(&self) -> Option<f64> {
        self.velocity_box
    }
}

impl fmt::Debug for GenericLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericLagrangian")
            .field("velocity_box", &self.velocity_box)
            .finish_non_exhaustive()
    }
}

/// Row covector `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Covector(pub AxisVec<f64>);

impl Covector {
    pub fn new(p: &[f64]) -> Self {
        Covector(p.iter().copied().collect())
    }
}

/// A Lagrangian on the `d`-torus.
#[derive(Debug, Clone)]
pub struct LagrangianSpec {
    kinetic: Vec<AxisKinetic>,
    potential: Potential,
    generic: Option<GenericLagrangian>,
}

impl LagrangianSpec {
    /// `|v|^2/2 + P(x)`.
    pub fn mechanical(dim: usize, potential: Potential) -> Result<Self> {
        Self::power_law(vec![AxisKinetic::QUADRATIC; dim], potential)
    }

    pub fn power_law(kinetic: Vec<AxisKinetic>, potential: Potential) -> Result<Self> {
        let spec = LagrangianSpec {
            kinetic,
            potential,
            generic: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Black-box Lagrangian in dimension `dim`.
    pub fn generic(dim: usize, hook: GenericLagrangian) -> Result<Self> {
        if dim == 0 {
            return Err(KamError::config("dimension must be at least 1"));
        }
        Ok(LagrangianSpec {
            kinetic: vec![AxisKinetic::QUADRATIC; dim],
            potential: Potential::zero(),
            generic: Some(hook),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.kinetic.is_empty() {
            return Err(KamError::config("dimension must be at least 1"));
        }
        for (i, k) in self.kinetic.iter().enumerate() {
            if !(k.exponent > 1.0 && k.exponent.is_finite()) {
                return Err(KamError::config(format!(
                    "kinetic exponent on axis {i} must be > 1 (superlinear growth), got {}",
                    k.exponent
                )));
            }
            if !(k.weight > 0.0 && k.weight.is_finite()) {
                return Err(KamError::config(format!(
                    "kinetic weight on axis {i} must be > 0, got {}",
                    k.weight
                )));
            }
        }
        self.potential.check_dim(self.kinetic.len())
    }

    pub fn dim(&self) -> usize {
        self.kinetic.len()
    }

    pub fn kinetic(&self) -> &[AxisKinetic] {
        &self.kinetic
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn generic_hook(&self) -> Option<&GenericLagrangian> {
        self.generic.as_ref()
    }

    pub fn is_separable(&self) -> bool {
        self.generic.is_none()
    }

    pub fn kinetic_energy(&self, v: &[f64]) -> f64 {
        self.kinetic.iter().zip(v).map(|(k, &w)| k.eval(w)).sum()
    }

    /// `L(x, v)` at raw coordinates (periodic, so no canonicalization needed).
    pub fn eval_raw(&self, x: &[f64], v: &[f64]) -> f64 {
        match &self.generic {
            Some(g) => (g.f)(x, v),
            None => self.kinetic_energy(v) + self.potential.eval(x),
        }
    }

    /// Hamiltonian at a node whose potential value is already known.
    pub(crate) fn lattice_hamiltonian_with_potential(
        &self,
        x: &[f64],
        potential: f64,
        xi: &DiscreteGradient,
        cap: Option<f64>,
    ) -> Result<(f64, AxisVec<f64>)> {
        match &self.generic {
            None => Ok(self.separable_lattice_hamiltonian(potential, xi, cap)),
            Some(g) => {
                let declared = g.velocity_box.ok_or_else(|| {
                    KamError::config("generic Lagrangian needs a declared velocity box")
                })?;
                Ok(generic_lattice_hamiltonian(g, x, xi, cap.map_or(declared, |c| c.min(declared)), cap.is_none()))
            }
        }
    }

    fn separable_lattice_hamiltonian(&self, potential: f64, xi: &DiscreteGradient, cap: Option<f64>) -> (f64, AxisVec<f64>) {
        let mut total = -potential;
        let mut argmax: AxisVec<f64> = SmallVec::with_capacity(xi.pairs.len());
        for (k, &(plus, minus)) in self.kinetic.iter().zip(&xi.pairs) {
            let (vp, wp) = match cap {
                None => k.half_line_conjugate(plus),
                Some(c) => k.capped_conjugate(plus, c),
            };
            let (vm, wm) = match cap {
                None => k.half_line_conjugate(minus),
                Some(c) => k.capped_conjugate(minus, c),
            };
            // ties: smaller speed first, then the positive direction
            let (val, v) = if vp > vm || (vp == vm && wp <= wm) {
                (vp, wp)
            } else {
                (vm, -wm)
            };
            let (val, v) = if val > 0.0 || (val == 0.0 && v == 0.0) {
                (val, v)
            } else {
                (0.0, 0.0)
            };
            total += val;
            argmax.push(v);
        }
        (total, argmax)
    }
}

/// `L(x, v)`.
pub fn eval_l(spec: &LagrangianSpec, x: &TorusPoint, v: &[f64]) -> Result<f64> {
    check_arity(spec, x.dim(), v.len())?;
    Ok(spec.eval_raw(x.coords(), v))
}

/// Legendre transform `H(x,p) = max_v [p.v - L(x,v)]`.
pub fn eval_h_continuous(spec: &LagrangianSpec, x: &TorusPoint, p: &Covector) -> Result<f64> {
    check_arity(spec, x.dim(), p.0.len())?;
    match &spec.generic {
        None => Ok(spec
            .kinetic
            .iter()
            .zip(&p.0)
            .map(|(k, &pi)| {
                let beta = k.dual_exponent();
                k.weight.powf(-1.0 / (k.exponent - 1.0)) * pi.abs().powf(beta) / beta
            })
            .sum::<f64>()
            - spec.potential.eval(x.coords())),
        Some(g) => {
            let bound = g
                .velocity_box
                .ok_or_else(|| KamError::config("generic Lagrangian needs a declared velocity box"))?;
            Ok(numeric_legendre(g, x.coords(), &p.0, bound))
        }
    }
}

/// `H_N(x, xi) = sup_v [xi . v - L(x,v)]` and a maximizer.
///
/// Per axis the candidates are the positive and negative half-line
/// maximizers and zero; ties go to the smaller speed, then to the positive
/// direction.
pub fn lattice_hamiltonian(spec: &LagrangianSpec, x: &TorusPoint, xi: &DiscreteGradient) -> Result<(f64, AxisVec<f64>)> {
    check_arity(spec, x.dim(), xi.dim())?;
    let potential = if spec.is_separable() {
        spec.potential.eval(x.coords())
    } else {
        0.0
    };
    spec.lattice_hamiltonian_with_potential(x.coords(), potential, xi, None)
}

fn check_arity(spec: &LagrangianSpec, a: usize, b: usize) -> Result<()> {
    if a != spec.dim() || b != spec.dim() {
        return Err(KamError::argument(format!(
            "arity mismatch: Lagrangian dimension {}, got {a} and {b}",
            spec.dim()
        )));
    }
    Ok(())
}

/// Golden-section maximizer of a concave function on `[lo, hi]`.
pub(crate) fn golden_max(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let tol = 1e-13 * (1.0 + hi.abs().max(lo.abs()));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for end in [lo, hi] {
        let fe = f(end);
        if fe > best.1 {
            best = (end, fe);
        }
    }
    best
}

fn numeric_legendre(g: &GenericLagrangian, x: &[f64], p: &[f64], bound: f64) -> f64 {
    let dim = p.len();
    let mut v: AxisVec<f64> = SmallVec::from_elem(0.0, dim);
    let objective = |v: &[f64]| p.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - (g.f)(x, v);
    let mut value = objective(&v);
    for _ in 0..100 {
        let before = value;
        for axis in 0..dim {
            let mut trial = v.clone();
            let (w, val) = golden_max(
                |w| {
                    trial[axis] = w;
                    objective(&trial)
                },
                -bound,
                bound,
            );
            if val >= value {
                v[axis] = w;
                value = val;
            }
        }
        if value - before <= 1e-15 * (1.0 + value.abs()) {
            break;
        }
    }
    value
}

fn generic_lattice_hamiltonian(g: &GenericLagrangian, x: &[f64], xi: &DiscreteGradient, start_box: f64, may_enlarge: bool) -> (f64, AxisVec<f64>) {
    let dim = xi.dim();
    let mut bound = start_box;
    loop {
        let objective = |v: &[f64]| pair_dot_unchecked(xi, v) - (g.f)(x, v);
        let mut v: AxisVec<f64> = SmallVec::from_elem(0.0, dim);
        let mut value = objective(&v);
        for _ in 0..100 {
            let before = value;
            for axis in 0..dim {
                let mut trial = v.clone();
                let mut eval = |w: f64| {
                    trial[axis] = w;
                    objective(&trial)
                };
                // concave on each half-line, not necessarily across zero
                let plus = golden_max(&mut eval, 0.0, bound);
                let minus = golden_max(&mut eval, -bound, 0.0);
                let (w, val) = if plus.1 > minus.1 || (plus.1 == minus.1 && plus.0.abs() <= minus.0.abs()) {
                    plus
                } else {
                    minus
                };
                if val > value {
                    v[axis] = w;
                    value = val;
                }
            }
            if value - before <= 1e-15 * (1.0 + value.abs()) {
                break;
            }
        }
        let on_boundary = v.iter().any(|w| w.abs() >= bound * (1.0 - 1e-9));
        if may_enlarge && on_boundary && bound < start_box * 1024.0 {
            // superlinear growth keeps the maximizer finite: widen and retry
            bound *= 2.0;
            continue;
        }
        return (value, v);
    }
}

/// Diagnostic a-priori constants of the discounted and weak KAM problems.
///
/// Suprema over `x` are taken over a sampling grid, which under-approximates
/// them; they serve as diagnostics only.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    /// Grid points per axis used for suprema over the torus.
    pub resolution: usize,
    pub min_potential: f64,
    pub max_potential: f64,
    /// `sup_x |grad P(x)|`, i.e. `K(c)` for separable Lagrangians.
    pub gradient_sup: f64,
    #[serde(skip)]
    growth: Growth,
}

#[derive(Debug, Clone)]
enum Growth {
    /// `g(a) = min P - sum_i conj_i(a)`, or the exact diagonal form when every
    /// axis shares the same exponent `>= 2` and weight.
    Separable {
        kinetic: Vec<AxisKinetic>,
        min_potential: f64,
    },
    /// Tabulated `g` for black-box Lagrangians: `inf (L - a|v|)` over samples.
    Sampled {
        samples: Vec<(f64, f64)>,
    },
}

impl DiagnosticConstants {
    /// Default sampling resolution per axis.
    pub fn default_resolution(dim: usize) -> usize {
        match dim {
            1 => 1024,
            2 => 256,
            _ => 64,
        }
    }

    /// Superlinear growth function: `L(x,v) >= a|v| + g(a)`.
    pub fn g(&self, a: f64) -> f64 {
        match &self.growth {
            Growth::Separable {
                kinetic,
                min_potential,
            } => {
                let d = kinetic.len() as f64;
                let first = kinetic[0];
                let uniform = kinetic.iter().all(|k| *k == first);
                if kinetic.len() == 1 || (uniform && first.exponent >= 2.0) {
                    // power-mean inequality: the diagonal is the worst direction
                    min_potential - d * first.half_line_conjugate(a / d.sqrt()).0
                } else {
                    min_potential - kinetic.iter().map(|k| k.half_line_conjugate(a).0).sum::<f64>()
                }
            }
            Growth::Sampled { samples } => samples
                .iter()
                .map(|&(l, speed)| l - a * speed)
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// `K(c) = sup_{x, |v| <= c} |L_x(x,v)|`; independent of `c` for
    /// separable Lagrangians.
    pub fn k(&self, _c: f64) -> f64 {
        self.gradient_sup
    }
}

/// Evaluates `c0..c6`, `g` and `K` on a sampling grid with `resolution`
/// points per axis.
pub fn diagnostic_constants(spec: &LagrangianSpec, resolution: usize) -> Result<DiagnosticConstants> {
    if resolution < 64 {
        return Err(KamError::argument(format!(
            "sampling resolution must be at least 64, got {resolution}"
        )));
    }
    let dim = spec.dim();
    let points = sample_points(dim, resolution);
    let directions = unit_directions(dim);

    let (min_potential, max_potential, gradient_sup, growth, sup_unit, sup_rest);
    match &spec.generic {
        None => {
            let (mut lo, mut hi, mut grad) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
            if let Potential::Tabulated(t) = &spec.potential {
                // interpolation extremes sit on table nodes
                lo = t.values.iter().copied().fold(f64::INFINITY, f64::min);
                hi = t.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
            for x in &points {
                let p = spec.potential.eval(x);
                lo = lo.min(p);
                hi = hi.max(p);
                let gn = spec.potential.gradient(x).iter().map(|g| g * g).sum::<f64>().sqrt();
                grad = grad.max(gn);
            }
            min_potential = lo;
            max_potential = hi;
            gradient_sup = grad;
            let kin_unit = directions
                .iter()
                .map(|u| spec.kinetic_energy(u))
                .fold(f64::NEG_INFINITY, f64::max);
            sup_rest = hi;
            sup_unit = hi + kin_unit;
            growth = Growth::Separable {
                kinetic: spec.kinetic.clone(),
                min_potential: lo,
            };
        }
        Some(g) => {
            let bound = g
                .velocity_box
                .ok_or_else(|| KamError::config("generic Lagrangian needs a declared velocity box"))?;
            let (mut lo, mut hi, mut grad, mut unit) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
            let mut samples = Vec::new();
            let radii: Vec<f64> = (0..=16).map(|k| bound * k as f64 / 16.0).collect();
            let step = 1e-6;
            for x in points.iter().step_by((points.len() / 512).max(1)) {
                let at_rest = (g.f)(x, &vec![0.0; dim]);
                lo = lo.min(at_rest);
                hi = hi.max(at_rest);
                for u in &directions {
                    unit = unit.max((g.f)(x, u));
                    for &r in &radii {
                        let v: Vec<f64> = u.iter().map(|c| c * r).collect();
                        samples.push(((g.f)(x, &v), r));
                    }
                    let mut gn = 0.0;
                    for a in 0..dim {
                        let mut up = x.clone();
                        let mut down = x.clone();
                        up[a] += step;
                        down[a] -= step;
                        let d = ((g.f)(&up, u) - (g.f)(&down, u)) / (2.0 * step);
                        gn += d * d;
                    }
                    grad = grad.max(gn.sqrt());
                }
            }
            min_potential = lo;
            max_potential = hi;
            gradient_sup = grad;
            sup_rest = hi;
            sup_unit = unit;
            growth = Growth::Sampled { samples };
        }
    }

    let mut constants = DiagnosticConstants {
        c0: 0.0,
        c1: 0.0,
        c2: 0.0,
        c3: 0.0,
        c4: 0.0,
        c5: 0.0,
        c6: 0.0,
        resolution,
        min_potential,
        max_potential,
        gradient_sup,
        growth,
    };
    let d = dim as f64;
    let c0 = constants.g(0.0).abs().max(sup_rest);
    let c1 = c0 + sup_unit + 1.0;
    // the kinetic part is increasing along rays, so the ball sup sits on the sphere
    let c3 = c0 + sup_unit.max(sup_rest);
    constants.c0 = c0;
    constants.c1 = c1;
    constants.c2 = c0 - constants.g(2.0 * c1 + 2.0) / 2.0;
    constants.c3 = c3;
    constants.c4 = d.sqrt() * c3;
    constants.c5 = c0 - constants.g(d.sqrt() * c3 + 1.0);
    constants.c6 = -constants.g(c1 + 1.0) + c0;
    Ok(constants)
}

fn sample_points(dim: usize, resolution: usize) -> Vec<AxisVec<f64>> {
    let total = resolution.pow(dim as u32);
    (0..total)
        .map(|mut flat| {
            let mut x: AxisVec<f64> = SmallVec::from_elem(0.0, dim);
            for slot in x.iter_mut().rev() {
                *slot = (flat % resolution) as f64 / resolution as f64;
                flat /= resolution;
            }
            x
        })
        .collect()
}

/// Sample of unit vectors: exact axes and diagonals plus an angular grid in
/// two and three dimensions.
fn unit_directions(dim: usize) -> Vec<AxisVec<f64>> {
    let mut dirs: Vec<AxisVec<f64>> = Vec::new();
    for a in 0..dim {
        for s in [1.0, -1.0] {
            let mut u: AxisVec<f64> = SmallVec::from_elem(0.0, dim);
            u[a] = s;
            dirs.push(u);
        }
    }
    let diag = 1.0 / (dim as f64).sqrt();
    dirs.push(SmallVec::from_elem(diag, dim));
    match dim {
        2 => {
            for k in 0..1024 {
                let t = 2.0 * PI * k as f64 / 1024.0;
                dirs.push(SmallVec::from_slice(&[t.cos(), t.sin()]));
            }
        }
        3 => {
            for i in 0..64 {
                let theta = PI * (i as f64 + 0.5) / 64.0;
                for j in 0..128 {
                    let phi = 2.0 * PI * j as f64 / 128.0;
                    dirs.push(SmallVec::from_slice(&[
                        theta.sin() * phi.cos(),
                        theta.sin() * phi.sin(),
                        theta.cos(),
                    ]));
                }
            }
        }
        _ => {}
    }
    dirs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cos_potential() -> Potential {
        Potential::cosine(&[1], 1.0, 0.0)
    }

    fn quad(p: Potential) -> LagrangianSpec {
        LagrangianSpec::mechanical(1, p).unwrap()
    }

    /// Dense-grid maximizer of `xi.v - L` over `v in [-10, 10]`, step 1e-4.
    fn grid_oracle(spec: &LagrangianSpec, x: &[f64], xi: &DiscreteGradient) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0);
        let steps = 200_000;
        for k in 0..=steps {
            let v = -10.0 + 20.0 * k as f64 / steps as f64;
            let val = pair_dot_unchecked(xi, &[v]) - spec.eval_raw(x, &[v]);
            if val > best.0 {
                best = (val, v);
            }
        }
        best
    }

    #[test]
    fn eval_l_examples() {
        let x0 = TorusPoint::new(&[0.0]);
        assert_eq!(eval_l(&quad(Potential::zero()), &x0, &[0.0]).unwrap(), 0.0);
        assert!((eval_l(&quad(cos_potential()), &x0, &[0.0]).unwrap() - 1.0).abs() < 1e-15);
        let two = LagrangianSpec::mechanical(2, Potential::zero()).unwrap();
        let x = TorusPoint::new(&[0.2, 0.7]);
        assert!((eval_l(&two, &x, &[3.0, 4.0]).unwrap() - 12.5).abs() < 1e-12);
    }

    #[test]
    fn continuous_hamiltonian_examples() {
        let zero = quad(Potential::zero());
        assert_eq!(eval_h_continuous(&zero, &TorusPoint::new(&[0.3]), &Covector::new(&[0.0])).unwrap(), 0.0);
        let h = eval_h_continuous(&quad(cos_potential()), &TorusPoint::new(&[0.5]), &Covector::new(&[2.0])).unwrap();
        assert!((h - 3.0).abs() < 1e-12);
    }

    #[test]
    fn numeric_legendre_agrees_with_closed_form() {
        let closed = quad(cos_potential());
        let hook = GenericLagrangian::new(|x, v| 0.5 * v[0] * v[0] + (2.0 * PI * x[0]).cos(), Some(20.0));
        let numeric = LagrangianSpec::generic(1, hook).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = TorusPoint::new(&[rng.random::<f64>()]);
            let p = Covector::new(&[rng.random_range(-5.0..5.0)]);
            // independent grid-plus-refinement maximizer
            let objective = |v: f64| p.0[0] * v - closed.eval_raw(x.coords(), &[v]);
            let mut best = (f64::NEG_INFINITY, 0.0);
            for k in 0..=4000 {
                let v = -20.0 + 40.0 * k as f64 / 4000.0;
                if objective(v) > best.0 {
                    best = (objective(v), v);
                }
            }
            let (mut lo, mut hi) = (best.1 - 0.01, best.1 + 0.01);
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if objective(m1) < objective(m2) {
                    lo = m1;
                } else {
                    hi = m2;
                }
            }
            let oracle = objective(0.5 * (lo + hi));
            let a = eval_h_continuous(&closed, &x, &p).unwrap();
            let b = eval_h_continuous(&numeric, &x, &p).unwrap();
            assert!((a - oracle).abs() < 1e-8, "closed {a} oracle {oracle}");
            assert!((b - oracle).abs() < 1e-8, "numeric {b} oracle {oracle}");
        }
    }

    #[test]
    fn lattice_hamiltonian_examples() {
        let zero = quad(Potential::zero());
        let x = TorusPoint::new(&[0.25]);
        let (val, v) = lattice_hamiltonian(&zero, &x, &DiscreteGradient::new(&[(1.0, -2.0)])).unwrap();
        assert!((val - 0.5).abs() < 1e-15);
        assert_eq!(v.as_slice(), &[1.0]);
        let oracle = grid_oracle(&zero, x.coords(), &DiscreteGradient::new(&[(1.0, -2.0)]));
        assert!((oracle.0 - 0.5).abs() < 1e-7 && (oracle.1 - 1.0).abs() < 1e-3);

        let (val, v) = lattice_hamiltonian(&zero, &x, &DiscreteGradient::new(&[(2.0, 2.0)])).unwrap();
        assert!((val - 2.0).abs() < 1e-15);
        assert_eq!(v.as_slice(), &[2.0]);

        let cosl = quad(cos_potential());
        let (val, v) = lattice_hamiltonian(&cosl, &x, &DiscreteGradient::new(&[(-1.0, -3.0)])).unwrap();
        assert_eq!(v.as_slice(), &[0.0]);
        assert!((val + cosl.potential().eval(x.coords())).abs() < 1e-15);
    }

    #[test]
    fn generic_hook_without_box_is_a_config_error() {
        let hook = GenericLagrangian::new(|_, v| 0.5 * v[0] * v[0], None);
        let spec = LagrangianSpec::generic(1, hook).unwrap();
        let err = lattice_hamiltonian(&spec, &TorusPoint::new(&[0.0]), &DiscreteGradient::new(&[(1.0, 0.0)]));
        assert!(matches!(err, Err(KamError::Config(_))));
    }

    #[test]
    fn generic_lattice_hamiltonian_matches_closed_form() {
        let closed = LagrangianSpec::power_law(
            vec![AxisKinetic { exponent: 1.5, weight: 1.3 }, AxisKinetic::QUADRATIC],
            Potential::cosine(&[1, 1], 0.7, 0.2),
        )
        .unwrap();
        let inner = closed.clone();
        // small declared box: exercises the enlargement path
        let hook = GenericLagrangian::new(move |x, v| inner.eval_raw(x, v), Some(0.5));
        let generic = LagrangianSpec::generic(2, hook).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = TorusPoint::new(&[rng.random(), rng.random()]);
            let xi = DiscreteGradient::new(&[
                (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
                (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
            ]);
            let (a, va) = lattice_hamiltonian(&closed, &x, &xi).unwrap();
            let (b, vb) = lattice_hamiltonian(&generic, &x, &xi).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            for (p, q) in va.iter().zip(&vb) {
                assert!((p - q).abs() < 1e-4, "{va:?} vs {vb:?}");
            }
        }
    }

    #[test]
    fn closed_form_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for alpha in [2.0, 1.5] {
            let spec = LagrangianSpec::power_law(
                vec![AxisKinetic { exponent: alpha, weight: 1.0 }],
                Potential::cosine(&[1], 0.8, 0.3),
            )
            .unwrap();
            for _ in 0..100 {
                let x = [rng.random::<f64>()];
                let xi = DiscreteGradient::new(&[(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))]);
                let (val, v) = lattice_hamiltonian(&spec, &TorusPoint::new(&x), &xi).unwrap();
                let oracle = grid_oracle(&spec, &x, &xi);
                assert!((val - oracle.0).abs() < 1e-6, "alpha {alpha}: {val} vs {}", oracle.0);
                assert!(v[0].abs() <= 10.0);
            }
        }
    }

    #[test]
    fn fenchel_inequality_and_equality_at_argmax() {
        let spec = LagrangianSpec::power_law(
            vec![AxisKinetic { exponent: 1.7, weight: 0.8 }, AxisKinetic::QUADRATIC],
            Potential::cosine(&[1, 2], 1.0, 0.4),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let x = TorusPoint::new(&[rng.random(), rng.random()]);
            let xi = DiscreteGradient::new(&[
                (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
                (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
            ]);
            let v = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let (h, arg) = lattice_hamiltonian(&spec, &x, &xi).unwrap();
            let lhs = pair_dot_unchecked(&xi, &v) - eval_l(&spec, &x, &v).unwrap();
            assert!(lhs <= h + 1e-12);
            let at = pair_dot_unchecked(&xi, &arg) - eval_l(&spec, &x, &arg).unwrap();
            assert!((at - h).abs() < 1e-9);
        }
    }

    #[test]
    fn convex_in_velocity() {
        let spec = LagrangianSpec::power_law(
            vec![AxisKinetic { exponent: 1.3, weight: 2.0 }, AxisKinetic { exponent: 3.0, weight: 0.5 }],
            Potential::cosine(&[2, -1], 1.0, 0.0),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5_000 {
            let x = [rng.random(), rng.random()];
            let a = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let b = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let lm = spec.eval_raw(&x, &mid);
            let avg = 0.5 * (spec.eval_raw(&x, &a) + spec.eval_raw(&x, &b));
            assert!(lm <= avg + 1e-12 * (1.0 + avg.abs()));
        }
    }

    #[test]
    fn constants_for_cosine() {
        let spec = quad(cos_potential());
        let c = diagnostic_constants(&spec, 1024).unwrap();
        assert!((c.c0 - 1.0).abs() < 1e-12);
        assert!((c.g(0.0) + 1.0).abs() < 1e-12);
        assert!((c.k(1.0) - 2.0 * PI).abs() < 1e-4);
        // c1 = 1 + (1/2 + 1) + 1, c3 = 1 + 1/2 + 1
        assert!((c.c1 - 3.5).abs() < 1e-12);
        assert!((c.c3 - 2.5).abs() < 1e-12);
        assert!((c.c5 - (1.0 + 1.0 + 3.5f64.powi(2) / 2.0)).abs() < 1e-12);
        assert!(diagnostic_constants(&spec, 32).is_err());
    }

    #[test]
    fn growth_function_for_free_particle() {
        let spec = quad(Potential::zero());
        let c = diagnostic_constants(&spec, 128).unwrap();
        for a in [0.0, 1.0, 2.5, 7.0] {
            assert!((c.g(a) + a * a / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn superlinear_growth_holds_with_computed_g() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let specs = [
            quad(cos_potential()),
            LagrangianSpec::power_law(
                vec![AxisKinetic { exponent: 1.5, weight: 1.0 }, AxisKinetic { exponent: 2.5, weight: 0.7 }],
                Potential::cosine(&[1, 1], 0.5, 0.1),
            )
            .unwrap(),
            LagrangianSpec::power_law(vec![AxisKinetic { exponent: 3.0, weight: 1.0 }; 2], Potential::zero()).unwrap(),
        ];
        for spec in &specs {
            let d = spec.dim();
            let c = diagnostic_constants(spec, 128).unwrap();
            for a in [0.0, 1.0, 5.0] {
                for _ in 0..2000 {
                    let x: Vec<f64> = (0..d).map(|_| rng.random()).collect();
                    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-8.0..8.0)).collect();
                    let speed = v.iter().map(|w| w * w).sum::<f64>().sqrt();
                    // sampled min P may sit slightly above the true min
                    let slack = 1e-4;
                    assert!(spec.eval_raw(&x, &v) >= a * speed + c.g(a) - slack);
                }
            }
        }
    }

    #[test]
    fn tabulated_potential_is_periodic_and_interpolates() {
        let tab = TabulatedPotential::new(1, 4, vec![0.0, 1.0, 0.0, -1.0]).unwrap();
        let p = Potential::Tabulated(tab);
        assert!((p.eval(&[0.125]) - 0.5).abs() < 1e-15);
        assert!((p.eval(&[0.875]) + 0.5).abs() < 1e-15);
        assert!((p.eval(&[0.999_999_999]) - p.eval(&[0.0])).abs() < 1e-7);
        assert!((p.eval(&[1.25]) - 1.0).abs() < 1e-15);
        assert!((p.gradient(&[0.0])[0] - 4.0).abs() < 1e-12);
        assert!(TabulatedPotential::new(1, 4, vec![0.0; 3]).is_err());
    }

    #[test]
    fn invalid_kinetic_rejected() {
        let bad = LagrangianSpec::power_law(vec![AxisKinetic { exponent: 1.0, weight: 1.0 }], Potential::zero());
        assert!(matches!(bad, Err(KamError::Config(_))));
        let bad = LagrangianSpec::power_law(vec![AxisKinetic { exponent: 2.0, weight: 0.0 }], Potential::zero());
        assert!(bad.is_err());
        let bad = LagrangianSpec::mechanical(2, cos_potential());
        assert!(bad.is_err());
    }
}
