//! Self-contained bounded-variable primal simplex for dense equality-form
//! linear programs:
//!
//! ```text
//!     minimize    c'x
//!     subject to  A x = b,   lower <= x <= upper
//! ```
//!
//! Small and deterministic by construction: Dantzig pricing with
//! lowest-index tie-breaks, switching to Bland's rule after 2*rows
//! consecutive degenerate pivots, and a fresh LU factorization of the
//! basis every iteration. Row duals and reduced costs are read from the
//! optimal basis. Suited to the dispatch problem sizes here (tens of
//! rows, hundreds of columns), not to large-scale LP.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimplexError {
    #[error("problem is infeasible (phase-1 residual {0:.3e})")]
    Infeasible(f64),
    #[error("problem is unbounded along column {0}")]
    Unbounded(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Equality-form LP with box bounds. Columns are dense.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    /// Objective coefficient per column.
    pub objective: Vec<f64>,
    /// Column-major constraint matrix: `columns[j][i]` is A[i][j].
    pub columns: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// One dual per row: the sensitivity of the optimal objective to that
    /// row's right-hand side, taken from the final basis.
    pub duals: Vec<f64>,
    /// c_j - y'A_j per column; zero on basic columns.
    pub reduced_costs: Vec<f64>,
}

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-9;
const RATIO_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
}

/// Dense LU factorization with partial pivoting; solves with the matrix
/// and its transpose.
struct DenseLu {
    m: usize,
    /// Combined L (unit diagonal, below) and U (on and above).
    lu: Vec<f64>,
    /// perm[i] = original row index placed at elimination position i.
    perm: Vec<usize>,
}

impl DenseLu {
    fn factor(a: &[f64], m: usize) -> Result<Self, SimplexError> {
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..m).collect();
        for k in 0..m {
            let mut piv = k;
            let mut best = lu[k * m + k].abs();
            for r in k + 1..m {
                let v = lu[r * m + k].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < PIVOT_TOL {
                return Err(SimplexError::Numerical(format!(
                    "singular basis at elimination step {k}"
                )));
            }
            if piv != k {
                for c in 0..m {
                    lu.swap(k * m + c, piv * m + c);
                }
                perm.swap(k, piv);
            }
            let diag = lu[k * m + k];
            for r in k + 1..m {
                let f = lu[r * m + k] / diag;
                lu[r * m + k] = f;
                for c in k + 1..m {
                    lu[r * m + c] -= f * lu[k * m + c];
                }
            }
        }
        Ok(Self { m, lu, perm })
    }

    /// Solve A x = b.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 1..m {
            for c in 0..r {
                x[r] = x[r] - self.lu[r * m + c] * x[c];
            }
        }
        for r in (0..m).rev() {
            for c in r + 1..m {
                x[r] = x[r] - self.lu[r * m + c] * x[c];
            }
            x[r] /= self.lu[r * m + r];
        }
        x
    }

    /// Solve A' y = c.
    fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let m = self.m;
        // U' z = c (forward), L' v = z (backward), y = P' v.
        let mut z = c.to_vec();
        for r in 0..m {
            for k in 0..r {
                z[r] = z[r] - self.lu[k * m + r] * z[k];
            }
            z[r] /= self.lu[r * m + r];
        }
        for r in (0..m).rev() {
            for k in r + 1..m {
                z[r] = z[r] - self.lu[k * m + r] * z[k];
            }
        }
        let mut y = vec![0.0; m];
        for (pos, &orig) in self.perm.iter().enumerate() {
            y[orig] = z[pos];
        }
        y
    }
}

struct Tableau<'a> {
    lp: &'a LinearProgram,
    m: usize,
    /// Structural column count; artificials live at indices n..n+m.
    n: usize,
    /// Artificial column sign per row (so artificial values start >= 0).
    art_sign: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    status: Vec<VarStatus>,
    x: Vec<f64>,
    basis: Vec<usize>,
    degenerate_streak: usize,
}

impl<'a> Tableau<'a> {
    fn column(&self, j: usize, out: &mut Vec<f64>) {
        out.clear();
        if j < self.n {
            out.extend_from_slice(&self.lp.columns[j]);
        } else {
            out.resize(self.m, 0.0);
            out[j - self.n] = self.art_sign[j - self.n];
        }
    }

    fn dot_column(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            self.lp.columns[j].iter().zip(y).map(|(a, b)| a * b).sum()
        } else {
            self.art_sign[j - self.n] * y[j - self.n]
        }
    }

    fn factor_basis(&self) -> Result<DenseLu, SimplexError> {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        let mut col = Vec::with_capacity(m);
        for (k, &j) in self.basis.iter().enumerate() {
            self.column(j, &mut col);
            for i in 0..m {
                b[i * m + k] = col[i];
            }
        }
        DenseLu::factor(&b, m)
    }

    /// Recompute basic values from the nonbasic point.
    fn refresh_basics(&mut self, lu: &DenseLu) {
        let mut rhs = self.lp.rhs.clone();
        for j in 0..self.n + self.m {
            if self.status[j] != VarStatus::Basic && self.x[j] != 0.0 {
                if j < self.n {
                    for (i, a) in self.lp.columns[j].iter().enumerate() {
                        rhs[i] -= a * self.x[j];
                    }
                } else {
                    rhs[j - self.n] -= self.art_sign[j - self.n] * self.x[j];
                }
            }
        }
        let xb = lu.solve(&rhs);
        for (k, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[k];
        }
    }

    /// One phase of the primal simplex under the given costs. Returns the
    /// final factorization for dual extraction.
    fn run(&mut self, costs: &[f64], max_iters: usize) -> Result<DenseLu, SimplexError> {
        let mut w = Vec::with_capacity(self.m);
        for _ in 0..max_iters {
            let lu = self.factor_basis()?;
            self.refresh_basics(&lu);

            let cb: Vec<f64> = self.basis.iter().map(|&j| costs[j]).collect();
            let y = lu.solve_transpose(&cb);

            let bland = self.degenerate_streak > 2 * self.m;
            let mut entering: Option<(usize, f64, f64)> = None; // (col, |d|, direction)
            for j in 0..self.n + self.m {
                if self.status[j] == VarStatus::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = costs[j] - self.dot_column(j, &y);
                let dir = match self.status[j] {
                    VarStatus::AtLower if d < -COST_TOL => 1.0,
                    VarStatus::AtUpper if d > COST_TOL => -1.0,
                    _ => continue,
                };
                if bland {
                    entering = Some((j, d.abs(), dir));
                    break;
                }
                if entering.map_or(true, |(_, best, _)| d.abs() > best) {
                    entering = Some((j, d.abs(), dir));
                }
            }

            let Some((q, _, dir)) = entering else {
                return Ok(lu); // optimal for the current costs
            };

            self.column(q, &mut w);
            let wq = lu.solve(&w);

            // Entering moves by t >= 0; basic i changes at rate -dir * wq[k].
            let mut t_best = self.upper[q] - self.lower[q];
            let mut blocker: Option<(usize, f64, VarStatus)> = None; // (basis pos, |pivot|, leaves-to)
            for (k, &j) in self.basis.iter().enumerate() {
                let rate = -dir * wq[k];
                let (room, leave_to) = if rate > PIVOT_TOL {
                    (self.upper[j] - self.x[j], VarStatus::AtUpper)
                } else if rate < -PIVOT_TOL {
                    (self.x[j] - self.lower[j], VarStatus::AtLower)
                } else {
                    continue;
                };
                let t = (room / rate.abs()).max(0.0);
                let better = match &blocker {
                    None => t < t_best - RATIO_TOL,
                    Some((bk, bp, _)) => {
                        if t < t_best - RATIO_TOL {
                            true
                        } else if t <= t_best + RATIO_TOL {
                            // Tie: prefer the stabler (larger) pivot; under
                            // Bland, the lowest variable index.
                            if bland {
                                j < self.basis[*bk]
                            } else {
                                wq[k].abs() > *bp
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    t_best = t.min(t_best);
                    blocker = Some((k, wq[k].abs(), leave_to));
                }
            }

            if t_best.is_infinite() {
                return Err(SimplexError::Unbounded(q));
            }
            if t_best <= RATIO_TOL {
                self.degenerate_streak += 1;
            } else {
                self.degenerate_streak = 0;
            }

            match blocker {
                None => {
                    // Bound flip: no basis change.
                    self.status[q] = match self.status[q] {
                        VarStatus::AtLower => VarStatus::AtUpper,
                        VarStatus::AtUpper => VarStatus::AtLower,
                        VarStatus::Basic => unreachable!(),
                    };
                    self.x[q] = match self.status[q] {
                        VarStatus::AtUpper => self.upper[q],
                        _ => self.lower[q],
                    };
                }
                Some((k, _, leave_to)) => {
                    let leaving = self.basis[k];
                    self.x[q] += dir * t_best;
                    self.x[leaving] = match leave_to {
                        VarStatus::AtUpper => self.upper[leaving],
                        _ => self.lower[leaving],
                    };
                    self.status[leaving] = leave_to;
                    self.status[q] = VarStatus::Basic;
                    self.basis[k] = q;
                }
            }
        }
        Err(SimplexError::Numerical("iteration limit exceeded".into()))
    }
}

/// Solve the LP, returning the optimal point with row duals and reduced
/// costs from the final basis.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution, SimplexError> {
    let n = lp.objective.len();
    let m = lp.rhs.len();
    assert_eq!(lp.columns.len(), n, "one column per objective entry");
    assert!(lp.columns.iter().all(|c| c.len() == m), "column length must match rhs");
    assert_eq!(lp.lower.len(), n);
    assert_eq!(lp.upper.len(), n);
    for j in 0..n {
        if lp.lower[j] > lp.upper[j] + 1e-12 {
            return Err(SimplexError::Numerical(format!(
                "column {j} has crossing bounds [{}, {}]",
                lp.lower[j], lp.upper[j]
            )));
        }
    }

    // Start every structural variable at a finite bound.
    let mut status = Vec::with_capacity(n + m);
    let mut x = Vec::with_capacity(n + m);
    for j in 0..n {
        if lp.lower[j].is_finite() {
            status.push(VarStatus::AtLower);
            x.push(lp.lower[j]);
        } else if lp.upper[j].is_finite() {
            status.push(VarStatus::AtUpper);
            x.push(lp.upper[j]);
        } else {
            return Err(SimplexError::Numerical(format!("column {j} is fully free")));
        }
    }

    // Artificial basis, signed so every artificial starts nonnegative.
    let mut residual = lp.rhs.clone();
    for (j, col) in lp.columns.iter().enumerate() {
        if x[j] != 0.0 {
            for (i, a) in col.iter().enumerate() {
                residual[i] -= a * x[j];
            }
        }
    }
    let art_sign: Vec<f64> = residual.iter().map(|r| if *r < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    let mut basis = Vec::with_capacity(m);
    for i in 0..m {
        lower.push(0.0);
        upper.push(f64::INFINITY);
        status.push(VarStatus::Basic);
        x.push(residual[i].abs());
        basis.push(n + i);
    }

    let mut tab = Tableau {
        lp,
        m,
        n,
        art_sign,
        lower,
        upper,
        status,
        x,
        basis,
        degenerate_streak: 0,
    };

    let max_iters = 2000 + 200 * (n + m);

    // Phase 1: minimize total artificial value.
    let mut phase1_costs = vec![0.0; n + m];
    for c in phase1_costs.iter_mut().skip(n) {
        *c = 1.0;
    }
    tab.run(&phase1_costs, max_iters)?;
    let art_total: f64 = tab.x[n..].iter().sum();
    if art_total > PHASE1_TOL {
        return Err(SimplexError::Infeasible(art_total));
    }

    // Fix artificials at zero; drive any still-basic ones out where a
    // structural pivot exists (redundant rows keep a fixed artificial).
    for j in n..n + m {
        tab.lower[j] = 0.0;
        tab.upper[j] = 0.0;
        if tab.status[j] != VarStatus::Basic {
            tab.x[j] = 0.0;
        }
    }
    drive_out_artificials(&mut tab)?;

    // Phase 2: original costs (artificials cost zero and are fixed).
    let mut phase2_costs = lp.objective.clone();
    phase2_costs.resize(n + m, 0.0);
    tab.degenerate_streak = 0;
    let lu = tab.run(&phase2_costs, max_iters)?;
    tab.refresh_basics(&lu);

    let cb: Vec<f64> = tab.basis.iter().map(|&j| phase2_costs[j]).collect();
    let duals = lu.solve_transpose(&cb);
    let reduced_costs: Vec<f64> = (0..n)
        .map(|j| {
            if tab.status[j] == VarStatus::Basic {
                0.0
            } else {
                lp.objective[j] - tab.dot_column(j, &duals)
            }
        })
        .collect();

    let x = tab.x[..n].to_vec();
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, objective, duals, reduced_costs })
}

/// Swap basic zero-valued artificials for structural columns via
/// degenerate pivots so phase-2 duals come from structural data.
fn drive_out_artificials(tab: &mut Tableau) -> Result<(), SimplexError> {
    for pos in 0..tab.m {
        if tab.basis[pos] < tab.n {
            continue;
        }
        let lu = tab.factor_basis()?;
        let mut col = Vec::with_capacity(tab.m);
        let mut replaced = false;
        for j in 0..tab.n {
            if tab.status[j] == VarStatus::Basic || tab.lower[j] == tab.upper[j] {
                continue;
            }
            tab.column(j, &mut col);
            let w = lu.solve(&col);
            if w[pos].abs() > 1e-7 {
                let art = tab.basis[pos];
                tab.basis[pos] = j;
                tab.status[j] = VarStatus::Basic;
                tab.status[art] = VarStatus::AtLower;
                tab.x[art] = 0.0;
                replaced = true;
                break;
            }
        }
        // No structural pivot: the row is redundant; the artificial stays
        // basic, pinned at zero by its [0, 0] bounds.
        let _ = replaced;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(
        objective: Vec<f64>,
        rows: Vec<Vec<f64>>,
        rhs: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> LinearProgram {
        let n = objective.len();
        let m = rhs.len();
        let mut columns = vec![vec![0.0; m]; n];
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                columns[j][i] = *v;
            }
        }
        LinearProgram { objective, columns, rhs, lower, upper }
    }

    #[test]
    fn two_variable_merit_order() {
        // min 10 a + 20 b  s.t.  a + b = 60,  0 <= a,b <= 50.
        let p = lp(
            vec![10.0, 20.0],
            vec![vec![1.0, 1.0]],
            vec![60.0],
            vec![0.0, 0.0],
            vec![50.0, 50.0],
        );
        let s = solve(&p).unwrap();
        assert!((s.x[0] - 50.0).abs() < 1e-9);
        assert!((s.x[1] - 10.0).abs() < 1e-9);
        assert!((s.objective - 700.0).abs() < 1e-9);
        // Marginal unit sets the dual.
        assert!((s.duals[0] - 20.0).abs() < 1e-9);
        // At-upper column has nonpositive reduced cost.
        assert!(s.reduced_costs[0] <= 1e-9);
    }

    #[test]
    fn upper_bound_flip_path() {
        // min -x  s.t.  x + y = 5,  x in [0, 3], y in [0, 5].
        let p = lp(
            vec![-1.0, 0.0],
            vec![vec![1.0, 1.0]],
            vec![5.0],
            vec![0.0, 0.0],
            vec![3.0, 5.0],
        );
        let s = solve(&p).unwrap();
        assert!((s.x[0] - 3.0).abs() < 1e-9);
        assert!((s.x[1] - 2.0).abs() < 1e-9);
        assert!((s.objective + 3.0).abs() < 1e-9);
    }

    #[test]
    fn negative_lower_bounds() {
        // Flow-like variable with symmetric bounds.
        // min 2u + 3v  s.t. u + v - f = 0, f in [-2, 2], u,v in [0, 10],
        //              u - f = -1   (so v = ... ) rhs chosen for feasibility.
        let p = lp(
            vec![2.0, 3.0, 0.0],
            vec![vec![1.0, 1.0, -1.0], vec![1.0, 0.0, -1.0]],
            vec![0.0, -1.0],
            vec![0.0, 0.0, -2.0],
            vec![10.0, 10.0, 2.0],
        );
        let s = solve(&p).unwrap();
        // u - f = -1 and u + v = f: cheapest is v = 0... enumerate: v = f - u,
        // f = u + 1 -> v = 1, cost 2u + 3 minimized at u = 0 -> f = 1, v = 1.
        assert!((s.x[0] - 0.0).abs() < 1e-9);
        assert!((s.x[1] - 1.0).abs() < 1e-9);
        assert!((s.x[2] - 1.0).abs() < 1e-9);
        assert!((s.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        // x + y = 10 with x,y <= 4.
        let p = lp(
            vec![1.0, 1.0],
            vec![vec![1.0, 1.0]],
            vec![10.0],
            vec![0.0, 0.0],
            vec![4.0, 4.0],
        );
        assert!(matches!(solve(&p), Err(SimplexError::Infeasible(_))));
    }

    #[test]
    fn zero_rhs_picks_cheapest_dual() {
        // Degenerate balance at zero demand: after driving artificials out,
        // the dual settles on the cheapest eligible column.
        let p = lp(
            vec![30.0, 10.0, 20.0],
            vec![vec![1.0, 1.0, 1.0]],
            vec![0.0],
            vec![0.0, 0.0, 0.0],
            vec![5.0, 5.0, 5.0],
        );
        let s = solve(&p).unwrap();
        assert!(s.x.iter().all(|v| v.abs() < 1e-9));
        assert!((s.duals[0] - 10.0).abs() < 1e-9, "dual {}", s.duals[0]);
    }

    #[test]
    fn fixed_columns_never_enter() {
        // Middle column is fixed at zero despite the best cost.
        let p = lp(
            vec![10.0, 1.0, 20.0],
            vec![vec![1.0, 1.0, 1.0]],
            vec![7.0],
            vec![0.0, 0.0, 0.0],
            vec![5.0, 0.0, 5.0],
        );
        let s = solve(&p).unwrap();
        assert!((s.x[0] - 5.0).abs() < 1e-9);
        assert_eq!(s.x[1], 0.0);
        assert!((s.x[2] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn equality_with_negative_rhs() {
        // min x + y s.t. -x - y = -3, bounds [0, 10].
        let p = lp(
            vec![1.0, 1.0],
            vec![vec![-1.0, -1.0]],
            vec![-3.0],
            vec![0.0, 0.0],
            vec![10.0, 10.0],
        );
        let s = solve(&p).unwrap();
        assert!((s.x[0] + s.x[1] - 3.0).abs() < 1e-9);
        assert!((s.objective - 3.0).abs() < 1e-9);
    }
}
