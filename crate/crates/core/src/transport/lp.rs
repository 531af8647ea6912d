//! Small dense linear programs behind the transport solvers.
//!
//! Linear objectives go to `minilp` (a primal/dual simplex, so optima are
//! vertices and exact up to rounding). The minimum-norm tie-break among
//! optimal points is a convex QP and goes to `clarabel`.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use minilp::{ComparisonOp, OptimizationDirection, Problem};

use super::GroundMetric;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cmp {
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
struct Row {
    terms: Vec<(usize, f64)>,
    cmp: Cmp,
    rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LinearProgram {
    bounds: Vec<(f64, f64)>,
    cost: Vec<f64>,
    rows: Vec<Row>,
}

impl LinearProgram {
    pub fn add_var(&mut self, cost: f64, bounds: (f64, f64)) -> usize {
        self.cost.push(cost);
        self.bounds.push(bounds);
        self.cost.len() - 1
    }

    pub fn add_row(&mut self, terms: impl IntoIterator<Item = (usize, f64)>, cmp: Cmp, rhs: f64) {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (v, c) in terms {
            *merged.entry(v).or_insert(0.0) += c;
        }
        let terms = merged.into_iter().filter(|(_, c)| *c != 0.0).collect();
        self.rows.push(Row { terms, cmp, rhs });
    }

    pub fn set_bounds(&mut self, var: usize, bounds: (f64, f64)) {
        self.bounds[var] = bounds;
    }

    /// Minimizes the linear cost. Returns the optimal value and point.
    pub fn solve(&self) -> Result<(f64, Vec<f64>)> {
        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = self
            .cost
            .iter()
            .zip(&self.bounds)
            .map(|(c, b)| problem.add_var(*c, *b))
            .collect();
        for row in &self.rows {
            let op = match row.cmp {
                Cmp::Eq => ComparisonOp::Eq,
                Cmp::Ge => ComparisonOp::Ge,
            };
            let expr: Vec<_> = row.terms.iter().map(|(v, c)| (vars[*v], *c)).collect();
            problem.add_constraint(expr.as_slice(), op, row.rhs);
        }
        let solution = problem
            .solve()
            .map_err(|e| Error::Solver(format!("linear program: {e}")))?;
        let x = vars.iter().map(|v| *solution.var_value(*v)).collect();
        Ok((solution.objective(), x))
    }

    /// Minimizes the squared norm of the variables in `norm_vars` over the
    /// points whose linear cost does not exceed `cost_cap`.
    pub fn solve_min_norm(&self, norm_vars: std::ops::Range<usize>, cost_cap: f64) -> Result<Vec<f64>> {
        let n = self.cost.len();
        let mut eq: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut le: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for row in &self.rows {
            match row.cmp {
                Cmp::Eq => eq.push((row.terms.clone(), row.rhs)),
                Cmp::Ge => le.push((
                    row.terms.iter().map(|(v, c)| (*v, -c)).collect(),
                    -row.rhs,
                )),
            }
        }
        for (v, (lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_finite() {
                le.push((vec![(v, -1.0)], -lo));
            }
            if hi.is_finite() {
                le.push((vec![(v, 1.0)], *hi));
            }
        }
        le.push((
            self.cost
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(v, c)| (v, *c))
                .collect(),
            cost_cap,
        ));

        let (mut ri, mut ci, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (r, (terms, rhs)) in eq.iter().chain(le.iter()).enumerate() {
            for (v, c) in terms {
                ri.push(r);
                ci.push(*v);
                vals.push(*c);
            }
            b.push(*rhs);
        }
        let a = CscMatrix::new_from_triplets(eq.len() + le.len(), n, ri, ci, vals);
        let diag: Vec<usize> = norm_vars.collect();
        let p = CscMatrix::new_from_triplets(n, n, diag.clone(), diag.clone(), vec![2.0; diag.len()]);
        let q = vec![0.0; n];
        let cones: Vec<SupportedConeT<f64>> = vec![ZeroConeT(eq.len()), NonnegativeConeT(le.len())];
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_abs(1e-12)
            .tol_gap_rel(1e-12)
            .tol_feas(1e-12)
            .max_iter(200)
            .build()
            .map_err(|e| Error::Solver(format!("qp settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::Solver(format!("qp setup: {e:?}")))?;
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(solver.solution.x.clone()),
            other => Err(Error::Solver(format!("quadratic program: {other:?}"))),
        }
    }
}

/// Transportation LP: cheapest flow moving `p` onto `q` under `g`.
pub(crate) fn transport_cost(p: &[f64], q: &[f64], g: &GroundMetric) -> Result<f64> {
    let n = p.len();
    let mut lp = LinearProgram::default();
    let flow: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| lp.add_var(g.distance(i, j), (0.0, f64::INFINITY)))
                .collect()
        })
        .collect();
    for i in 0..n {
        lp.add_row(flow[i].iter().map(|v| (*v, 1.0)), Cmp::Eq, p[i]);
    }
    // the last column balance is implied by total mass
    for j in 0..n - 1 {
        lp.add_row((0..n).map(|i| (flow[i][j], 1.0)), Cmp::Eq, q[j]);
    }
    let (value, _) = lp.solve()?;
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_lp() {
        // min x + 2y s.t. x + y >= 1, x <= 0.25
        let mut lp = LinearProgram::default();
        let x = lp.add_var(1.0, (0.0, f64::INFINITY));
        let y = lp.add_var(2.0, (0.0, f64::INFINITY));
        lp.add_row([(x, 1.0), (y, 1.0)], Cmp::Ge, 1.0);
        lp.add_row([(x, -1.0)], Cmp::Ge, -0.25);
        let (v, sol) = lp.solve().unwrap();
        assert!((v - 1.75).abs() < 1e-12);
        assert!((sol[x] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn min_norm_on_a_face() {
        // every point of the segment x + y = 1 costs 0; min norm is the middle
        let mut lp = LinearProgram::default();
        let x = lp.add_var(0.0, (0.0, 1.0));
        let y = lp.add_var(0.0, (0.0, 1.0));
        lp.add_row([(x, 1.0), (y, 1.0)], Cmp::Eq, 1.0);
        let sol = lp.solve_min_norm(0..2, 0.0).unwrap();
        assert!((sol[0] - 0.5).abs() < 1e-7);
        assert!((sol[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn infeasible_is_an_error() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(1.0, (0.0, 1.0));
        lp.add_row([(x, 1.0)], Cmp::Ge, 2.0);
        assert!(matches!(lp.solve(), Err(Error::Solver(_))));
    }
}
