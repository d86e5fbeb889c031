//! Dense two-phase simplex for `min c.x  s.t.  A x = b, x >= 0`.
//!
//! Dantzig pricing on a perturbed right-hand side, switching to Bland's rule
//! after a run of degenerate pivots so the method cannot cycle. Meant for the small, wide programs of the Mather
//! oracle (tens of rows, tens of thousands of columns).

use crate::error::{KamError, Result};

const PIVOT_EPS: f64 = 1e-9;
const COST_EPS: f64 = 1e-11;
/// Relative size of the right-hand-side perturbation in phase two.
const PERTURBATION: f64 = 1e-9;
/// Largest negative basic value accepted, and clamped, after the perturbation
/// is removed.
const RESTORE_TOL: f64 = 1e-7;
/// Consecutive degenerate pivots before pricing falls back to Bland's rule.
const DEGENERATE_RUN: usize = 20;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
    /// Multipliers `y` of the equality rows, `c - A^T y >= 0` at optimum.
    pub duals: Vec<f64>,
    /// `max_j max(0, -(c_j - A_j . y))`.
    pub dual_residual: f64,
    /// `max_i |A_i x - b_i|`.
    pub primal_residual: f64,
    pub pivots: usize,
}

struct Tableau {
    rows: usize,
    width: usize,
    /// `rows` constraint rows then the cost row; last column is the rhs.
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let w = self.width;
        let p = self.at(r, col);
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.rows {
            if i == r {
                continue;
            }
            let f = self.at(i, col);
            if f == 0.0 {
                continue;
            }
            for (v, pr) in self.t[i * w..(i + 1) * w].iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
            self.t[i * w + col] = 0.0;
        }
        self.basis[r] = col;
    }

    /// Pivots on columns `< allowed` until optimal or the objective is at
    /// most `target`.
    fn optimize(&mut self, allowed: usize, budget: usize, pivots: &mut usize, target: f64) -> Result<()> {
        let cost = self.rows;
        let mut degenerate = 0;
        loop {
            if -self.rhs(cost) <= target {
                return Ok(());
            }
            let reduced = &self.t[cost * self.width..cost * self.width + allowed];
            let entering = if degenerate >= DEGENERATE_RUN {
                reduced.iter().position(|&r| r < -COST_EPS)
            } else {
                reduced
                    .iter()
                    .enumerate()
                    .filter(|(_, &r)| r < -COST_EPS)
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(j, _)| j)
            };
            let Some(col) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, col);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((k, r)) => ratio < r - 1e-14 || (ratio <= r + 1e-14 && self.basis[i] < self.basis[k]),
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, step)) = leave else {
                return Err(KamError::Lp("is unbounded"));
            };
            if step > 1e-14 {
                degenerate = 0;
            } else {
                degenerate += 1;
            }
            self.pivot(r, col);
            *pivots += 1;
            if *pivots > budget {
                return Err(KamError::Lp("exceeded its pivot budget"));
            }
        }
    }
}

/// `a` is row-major with `b.len()` rows of `c.len()` entries.
pub fn solve_lp(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let m = b.len();
    let n = c.len();
    if a.len() != m || a.iter().any(|row| row.len() != n) {
        return Err(KamError::argument("constraint matrix shape does not match c and b"));
    }
    if m == 0 {
        return Err(KamError::argument("linear program without constraints"));
    }
    // columns: x (n), artificials (m), rhs
    let width = n + m + 1;
    let mut t = vec![0.0; (m + 1) * width];
    let mut flipped = vec![false; m];
    for i in 0..m {
        let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
        flipped[i] = s < 0.0;
        for j in 0..n {
            t[i * width + j] = s * a[i][j];
        }
        t[i * width + n + i] = 1.0;
        t[i * width + width - 1] = s * b[i];
    }
    let tab = Tableau {
        rows: m,
        width,
        t,
        basis: (n..n + m).collect(),
    };
    let budget = 50 * (n + m) + 1000;
    let mut pivots = 0;
    let mut tab = phase_one(tab, n, b, budget, &mut pivots)?;

    // phase two
    let rows = tab.rows;
    for j in 0..width {
        let mut r = if j < n { c[j] } else { 0.0 };
        for i in 0..rows {
            let cb = c[tab.basis[i]];
            r -= cb * tab.at(i, j);
        }
        tab.t[rows * width + j] = r;
    }
    // distinct positive shifts of the basic values make every vertex
    // nondegenerate, so Dantzig pricing cannot stall on a degenerate face
    let signed: Vec<f64> = (0..m).map(|k| if flipped[k] { -b[k] } else { b[k] }).collect();
    let scale = 1.0 + signed.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for i in 0..rows {
        let shift = PERTURBATION * scale * (1.0 + (i as f64 * 0.618_033_988_749_895).fract());
        tab.t[i * width + width - 1] += shift;
    }
    tab.optimize(n, budget, &mut pivots, f64::NEG_INFINITY)?;
    // exact basic values B^{-1} b, with B^{-1} in the artificial columns
    for i in 0..rows {
        let exact: f64 = (0..m).map(|k| tab.at(i, n + k) * signed[k]).sum();
        if exact < -RESTORE_TOL * scale {
            return Err(KamError::Internal(format!(
                "simplex basis turned infeasible after removing the perturbation ({exact:e})"
            )));
        }
        tab.t[i * width + width - 1] = exact;
    }

    let mut x = vec![0.0; n];
    for i in 0..rows {
        x[tab.basis[i]] = tab.rhs(i).max(0.0);
    }
    // y^T = c_B^T E where E, the accumulated row operations, sits in the
    // artificial columns
    let mut duals = vec![0.0; m];
    for (k, dual) in duals.iter_mut().enumerate() {
        let col = n + k;
        let mut y = 0.0;
        for i in 0..rows {
            y += c[tab.basis[i]] * tab.at(i, col);
        }
        *dual = if flipped[k] { -y } else { y };
    }
    let value: f64 = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    let dual_residual = (0..n)
        .map(|j| {
            let reduced = c[j] - (0..m).map(|i| a[i][j] * duals[i]).sum::<f64>();
            (-reduced).max(0.0)
        })
        .fold(0.0, f64::max);
    let primal_residual = (0..m)
        .map(|i| (a[i].iter().zip(&x).map(|(aij, xj)| aij * xj).sum::<f64>() - b[i]).abs())
        .fold(0.0, f64::max);
    Ok(LpSolution {
        value,
        x,
        duals,
        dual_residual,
        primal_residual,
        pivots,
    })
}

/// Minimizes the sum of artificials from the all-artificial basis, then
/// drives the artificials out; rows where that is impossible are redundant
/// and dropped.
fn phase_one(mut tab: Tableau, n: usize, b: &[f64], budget: usize, pivots: &mut usize) -> Result<Tableau> {
    let m = tab.rows;
    let width = tab.width;
    for j in 0..width {
        if (n..n + m).contains(&j) {
            continue;
        }
        let s: f64 = (0..m).map(|i| tab.at(i, j)).sum();
        tab.t[m * width + j] = -s;
    }
    let scale = 1.0 + b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    // once the artificials are at roundoff level, further pivots only chase noise
    tab.optimize(n + m, budget, pivots, 1e-10 * scale)?;
    let infeasibility = -tab.at(m, width - 1);
    if infeasibility > 1e-9 * scale {
        return Err(KamError::Lp("is infeasible"));
    }
    let mut active = vec![true; m];
    for i in 0..m {
        if tab.basis[i] >= n {
            let largest = (0..n)
                .map(|j| (j, tab.at(i, j).abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .filter(|&(_, v)| v > PIVOT_EPS);
            match largest {
                Some((j, _)) => {
                    tab.pivot(i, j);
                    *pivots += 1;
                }
                None => active[i] = false,
            }
        }
    }
    if active.iter().any(|a| !a) {
        tab = drop_rows(&tab, &active);
    }
    Ok(tab)
}

fn drop_rows(tab: &Tableau, active: &[bool]) -> Tableau {
    let w = tab.width;
    let keep: Vec<usize> = (0..tab.rows).filter(|&i| active[i]).collect();
    let mut t = Vec::with_capacity((keep.len() + 1) * w);
    for &i in &keep {
        t.extend_from_slice(&tab.t[i * w..(i + 1) * w]);
    }
    t.extend_from_slice(&tab.t[tab.rows * w..(tab.rows + 1) * w]);
    Tableau {
        rows: keep.len(),
        width: w,
        t,
        basis: keep.iter().map(|&i| tab.basis[i]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_textbook_problem() {
        // min -x1 - 2 x2, x1 + x2 + s1 = 4, x1 + 3 x2 + s2 = 6
        let c = [-1.0, -2.0, 0.0, 0.0];
        let a = vec![vec![1.0, 1.0, 1.0, 0.0], vec![1.0, 3.0, 0.0, 1.0]];
        let sol = solve_lp(&c, &a, &[4.0, 6.0]).unwrap();
        assert!((sol.value + 5.0).abs() < 1e-12);
        assert!((sol.x[0] - 3.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
        // strong duality
        let dual_value: f64 = sol.duals.iter().zip([4.0, 6.0]).map(|(y, b)| y * b).sum();
        assert!((dual_value - sol.value).abs() < 1e-12);
        assert!(sol.dual_residual < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let a = vec![vec![1.0, 1.0]];
        assert!(matches!(solve_lp(&[1.0, 1.0], &a, &[-1.0]), Err(KamError::Lp(_))));
        let a = vec![vec![1.0, -1.0]];
        assert!(matches!(solve_lp(&[-1.0, 0.0], &a, &[0.0]), Err(KamError::Lp(_))));
    }

    #[test]
    fn redundant_rows_are_dropped() {
        let c = [1.0, 2.0, 3.0];
        let a = vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0], vec![1.0, 0.0, -1.0]];
        let sol = solve_lp(&c, &a, &[1.0, 2.0, 0.0]).unwrap();
        assert!((sol.value - 2.0).abs() < 1e-12);
        assert!(sol.primal_residual < 1e-12);
    }

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn degenerate_assignment_problems() {
        // every vertex of the assignment polytope is highly degenerate
        let k = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let cost: Vec<f64> = (0..k * k).map(|_| rng.random_range(0..5) as f64).collect();
            let mut a = vec![vec![0.0; k * k]; 2 * k];
            for i in 0..k {
                for j in 0..k {
                    a[i][i * k + j] = 1.0;
                    a[k + j][i * k + j] = 1.0;
                }
            }
            let sol = solve_lp(&cost, &a, &vec![1.0; 2 * k]).unwrap();
            let best = permutations(k)
                .iter()
                .map(|p| (0..k).map(|i| cost[i * k + p[i]]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert!((sol.value - best).abs() < 1e-9, "{} vs {best}", sol.value);
            assert!(sol.primal_residual < 1e-9 && sol.dual_residual < 1e-9);
        }
    }

    /// Vertex enumeration over all square bases as an oracle.
    fn brute_force(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<f64> {
        let m = b.len();
        let n = c.len();
        let mut best: Option<f64> = None;
        let mut idx: Vec<usize> = (0..m).collect();
        loop {
            let mat = nalgebra::DMatrix::from_fn(m, m, |i, k| a[i][idx[k]]);
            if let Some(sol) = mat.lu().solve(&nalgebra::DVector::from_column_slice(b)) {
                if sol.iter().all(|&v| v >= -1e-9) {
                    let v: f64 = (0..m).map(|k| c[idx[k]] * sol[k]).sum();
                    best = Some(best.map_or(v, |bv: f64| bv.min(v)));
                }
            }
            // next combination
            let mut i = m;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if idx[i] < n - m + i {
                    idx[i] += 1;
                    for k in i + 1..m {
                        idx[k] = idx[k - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..40 {
            let m = 3;
            let n = 7;
            let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
            let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let b: Vec<f64> = a.iter().map(|row| row.iter().zip(&x0).map(|(p, q)| p * q).sum()).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let oracle = brute_force(&c, &a, &b);
            match solve_lp(&c, &a, &b) {
                Ok(sol) => {
                    let o = oracle.expect("feasible");
                    assert!((sol.value - o).abs() < 1e-9, "{} vs {o}", sol.value);
                    assert!(sol.dual_residual < 1e-9);
                }
                Err(KamError::Lp(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
}
