//! Belief initialization by EEMD minimization.
//!
//! `eemd(beta, x)` is convex and piecewise linear in `x`, so its minimum over
//! the target simplex is a linear program. Among minimizers we return the one
//! of least Euclidean norm (the most spread-out optimum), which makes the
//! result unique and deterministic:
//!
//! 1. LP: minimize the objective, giving the optimal value `v*`.
//! 2. QP: minimize `|x|^2` subject to objective `<= v*`.
//! 3. LP polish: re-minimize the objective inside a 1e-6 box around the QP
//!    point, which removes the interior-point residual so the returned point
//!    is optimal to simplex precision.

use super::lp::{Cmp, LinearProgram};
use super::{apply_mapping, eemd, mapped_is_first, pad, GroundMetric, MappingPrior, SimplexDist};
use crate::error::{Error, Result};

const QP_CAP_SLACK: f64 = 1e-11;
const POLISH_BOX: f64 = 1e-6;
const ACCEPT_TOL: f64 = 1e-10;

/// One EMD term: compare `A x` (rows of `(target index, coefficient)`) with
/// the fixed vector `b`, weighted by the mapping probability.
struct Term {
    weight: f64,
    rows: Vec<Vec<(usize, f64)>>,
    fixed: Vec<f64>,
}

fn build_terms(beta: &SimplexDist, target_dim: usize, prior: &MappingPrior) -> Result<Vec<Term>> {
    let n = beta.dim().max(target_dim);
    if prior.size() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: prior.size(),
        });
    }
    let mut terms = Vec::with_capacity(prior.len());
    if mapped_is_first(beta.dim(), target_dim) {
        // beta is padded and mapped, the unknown is compared as is
        let padded = pad(beta, n)?;
        for (map, w) in prior.entries() {
            terms.push(Term {
                weight: *w,
                rows: (0..n).map(|j| vec![(j, 1.0)]).collect(),
                fixed: apply_mapping(&padded, map)?.into_weights(),
            });
        }
    } else {
        // the unknown is padded and mapped; only its first target_dim nodes
        // carry mass
        for (map, w) in prior.entries() {
            let mut rows = vec![Vec::new(); n];
            for (i, dst) in map.assignment().iter().enumerate().take(target_dim) {
                rows[*dst].push((i, 1.0));
            }
            terms.push(Term {
                weight: *w,
                rows,
                fixed: beta.weights().to_vec(),
            });
        }
    }
    Ok(terms)
}

fn build_program(terms: &[Term], target_dim: usize, g: &GroundMetric) -> LinearProgram {
    let mut lp = LinearProgram::default();
    let x: Vec<usize> = (0..target_dim).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    lp.add_row(x.iter().map(|v| (*v, 1.0)), Cmp::Eq, 1.0);
    for term in terms {
        let n = term.fixed.len();
        if g.is_unit() {
            // 0.5 * |A x - b|_1 through one slack per node
            for j in 0..n {
                let s = lp.add_var(0.5 * term.weight, (0.0, f64::INFINITY));
                let ax = term.rows[j].iter().map(|(i, c)| (x[*i], *c));
                lp.add_row(
                    std::iter::once((s, 1.0)).chain(ax.clone().map(|(v, c)| (v, -c))),
                    Cmp::Ge,
                    -term.fixed[j],
                );
                lp.add_row(std::iter::once((s, 1.0)).chain(ax), Cmp::Ge, term.fixed[j]);
            }
        } else {
            // full transportation plan from A x onto b
            let flow: Vec<Vec<usize>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| lp.add_var(term.weight * g.distance(i, j), (0.0, f64::INFINITY)))
                        .collect()
                })
                .collect();
            for i in 0..n {
                let out = flow[i].iter().map(|v| (*v, 1.0));
                let ax = term.rows[i].iter().map(|(k, c)| (x[*k], -c));
                lp.add_row(out.chain(ax), Cmp::Eq, 0.0);
            }
            for j in 0..n - 1 {
                lp.add_row((0..n).map(|i| (flow[i][j], 1.0)), Cmp::Eq, term.fixed[j]);
            }
        }
    }
    lp
}

fn to_simplex(x: &[f64]) -> Result<SimplexDist> {
    SimplexDist::from_mass(x.iter().map(|v| v.max(0.0)).collect())
}

/// Finds the distribution on `target_dim` nodes closest to `beta` in EEMD.
///
/// The prior must be sized to `max(beta.dim(), target_dim)`; ties among
/// minimizers resolve to the minimum-norm optimum.
pub fn minimize_eemd(
    beta: &SimplexDist,
    target_dim: usize,
    prior: &MappingPrior,
    g: &GroundMetric,
) -> Result<SimplexDist> {
    if target_dim == 0 {
        return Err(Error::InvalidParameter("target dimension must be positive".into()));
    }
    let n = beta.dim().max(target_dim);
    let g = g.resized(n)?;
    let terms = build_terms(beta, target_dim, prior)?;
    let mut lp = build_program(&terms, target_dim, &g);

    let (optimum, vertex) = lp.solve()?;
    let vertex = to_simplex(&vertex[..target_dim])?;
    if target_dim == 1 {
        return Ok(vertex);
    }
    let objective = |x: &SimplexDist| eemd(beta, x, prior, &g);
    let vertex_value = objective(&vertex)?;

    let cap = optimum + QP_CAP_SLACK * optimum.abs().max(1.0);
    let spread = match lp.solve_min_norm(0..target_dim, cap) {
        Ok(qp) => {
            for (i, v) in qp.iter().take(target_dim).enumerate() {
                lp.set_bounds(i, ((v - POLISH_BOX).max(0.0), (v + POLISH_BOX).min(1.0)));
            }
            lp.solve().ok().and_then(|(_, x)| to_simplex(&x[..target_dim]).ok())
        }
        Err(_) => None,
    };
    if let Some(candidate) = spread {
        if objective(&candidate)? <= vertex_value + ACCEPT_TOL {
            return Ok(candidate);
        }
    }
    Ok(vertex)
}
