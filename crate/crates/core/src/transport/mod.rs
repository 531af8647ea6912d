//! Earth mover's distance between distributions on simplices, including
//! simplices of different sizes.
//!
//! Two distributions of different dimension are compared by padding the
//! smaller one with zero-mass nodes and averaging the EMD over a prior on
//! mappings (mass push-forwards) from the padded nodes onto the larger
//! simplex. The prior is kept sparse: only mappings with non-zero probability
//! are stored.

mod lp;
mod minimize;

pub use minimize::minimize_eemd;

use crate::error::{Error, Result};

/// Tolerance on the unit-mass invariant.
pub const MASS_TOL: f64 = 1e-12;

/// A normalized distribution over `dim` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexDist {
    weights: Vec<f64>,
}

impl SimplexDist {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::NotNormalized("empty distribution".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NotNormalized(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::NotNormalized(format!("weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    /// Scales a non-negative mass vector to unit sum.
    pub fn from_mass(mut mass: Vec<f64>) -> Result<Self> {
        let total: f64 = mass.iter().sum();
        if mass.iter().any(|w| !w.is_finite() || *w < 0.0) || !(total > 0.0) {
            return Err(Error::NotNormalized("mass must be non-negative with positive total".into()));
        }
        mass.iter_mut().for_each(|w| *w /= total);
        Ok(Self { weights: mass })
    }

    pub fn uniform(dim: usize) -> Self {
        Self {
            weights: vec![1.0 / dim as f64; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }
}

impl From<&crate::hmm::Belief> for SimplexDist {
    fn from(b: &crate::hmm::Belief) -> Self {
        Self {
            weights: b.weights().to_vec(),
        }
    }
}

/// A function from nodes to nodes; mass on node `i` moves to `assignment[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mapping {
    assignment: Vec<usize>,
}

impl Mapping {
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        let n = assignment.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty mapping".into()));
        }
        if let Some(bad) = assignment.iter().find(|a| **a >= n) {
            return Err(Error::InvalidParameter(format!(
                "mapping target {bad} outside [0, {n})"
            )));
        }
        Ok(Self { assignment })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            assignment: (0..n).collect(),
        }
    }

    /// Embeds the first `small` nodes at the top end of `large` nodes; the
    /// padded nodes fill the vacated bottom positions.
    pub fn right_align(small: usize, large: usize) -> Result<Self> {
        if small == 0 || small > large {
            return Err(Error::InvalidParameter(format!(
                "cannot right-align {small} nodes into {large}"
            )));
        }
        let shift = large - small;
        let assignment = (0..large)
            .map(|i| if i < small { i + shift } else { i - small })
            .collect();
        Ok(Self { assignment })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Extends the mapping to `n` nodes, sending every extra node to itself.
    pub fn extended(&self, n: usize) -> Result<Self> {
        if n < self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: n,
            });
        }
        let mut assignment = self.assignment.clone();
        assignment.extend(self.len()..n);
        Ok(Self { assignment })
    }

    /// `other` applied after `self`.
    pub fn then(&self, other: &Mapping) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(Self {
            assignment: self.assignment.iter().map(|a| other.assignment[*a]).collect(),
        })
    }
}

/// Sparse probability distribution over mappings of a fixed size.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingPrior {
    entries: Vec<(Mapping, f64)>,
}

impl MappingPrior {
    /// Zero-probability entries are dropped. Mappings must be distinct and
    /// equally sized, probabilities must sum to one.
    pub fn new(entries: Vec<(Mapping, f64)>) -> Result<Self> {
        if entries.iter().any(|(_, p)| !p.is_finite() || *p < 0.0) {
            return Err(Error::NotNormalized("negative mapping probability".into()));
        }
        let total: f64 = entries.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::NotNormalized(format!(
                "mapping probabilities sum to {total}"
            )));
        }
        let entries: Vec<_> = entries.into_iter().filter(|(_, p)| *p > 0.0).collect();
        let size = entries[0].0.len();
        if entries.iter().any(|(m, _)| m.len() != size) {
            return Err(Error::InvalidParameter("mappings differ in size".into()));
        }
        let mut sorted: Vec<&Mapping> = entries.iter().map(|(m, _)| m).collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("duplicate mapping in prior".into()));
        }
        Ok(Self { entries })
    }

    /// Like [`MappingPrior::new`] but sums the probability of repeated
    /// mappings and rescales to unit mass.
    pub fn merged(entries: Vec<(Mapping, f64)>) -> Result<Self> {
        let mut acc: std::collections::BTreeMap<Mapping, f64> = Default::default();
        for (m, p) in entries {
            *acc.entry(m).or_insert(0.0) += p;
        }
        let total: f64 = acc.values().sum();
        if !(total > 0.0) {
            return Err(Error::NotNormalized("prior has no mass".into()));
        }
        Self::new(acc.into_iter().map(|(m, p)| (m, p / total)).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: vec![(Mapping::identity(n), 1.0)],
        }
    }

    /// Equal odds of left-aligned (plain padding) and right-aligned
    /// embedding of a `small`-node simplex into a `large`-node one.
    pub fn left_right(small: usize, large: usize) -> Result<Self> {
        if small == large {
            return Ok(Self::identity(large));
        }
        Self::new(vec![
            (Mapping::identity(large), 0.5),
            (Mapping::right_align(small, large)?, 0.5),
        ])
    }

    pub fn size(&self) -> usize {
        self.entries[0].0.len()
    }

    pub fn entries(&self) -> &[(Mapping, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Pairwise node distances.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundMetric {
    /// Every pair of distinct nodes is one unit apart.
    Unit(usize),
    /// Explicit row-major distance matrix.
    Matrix { dim: usize, distances: Vec<f64> },
}

impl GroundMetric {
    pub fn unit(dim: usize) -> Self {
        Self::Unit(dim)
    }

    /// Validates zero diagonal, positive off-diagonal, symmetry and the
    /// triangle inequality (with a 1e-12 slack).
    pub fn from_matrix(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidParameter("distance matrix must be square".into()));
        }
        let d = |i: usize, j: usize| rows[i][j];
        for i in 0..dim {
            if d(i, i) != 0.0 {
                return Err(Error::InvalidParameter("non-zero diagonal".into()));
            }
            for j in 0..dim {
                if !d(i, j).is_finite() || (i != j && d(i, j) <= 0.0) {
                    return Err(Error::InvalidParameter(format!("bad distance at ({i}, {j})")));
                }
                if d(i, j) != d(j, i) {
                    return Err(Error::InvalidParameter("asymmetric distance matrix".into()));
                }
                for k in 0..dim {
                    if d(i, k) > d(i, j) + d(j, k) + 1e-12 {
                        return Err(Error::InvalidParameter(format!(
                            "triangle inequality violated at ({i}, {j}, {k})"
                        )));
                    }
                }
            }
        }
        Ok(Self::Matrix {
            dim,
            distances: rows.into_iter().flatten().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Unit(dim) => *dim,
            Self::Matrix { dim, .. } => *dim,
        }
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        match self {
            Self::Unit(_) => {
                if i == j {
                    0.0
                } else {
                    1.0
                }
            }
            Self::Matrix { dim, distances } => distances[i * dim + j],
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, Self::Unit(_))
    }

    /// The same metric on `dim` nodes (unit metrics only; explicit matrices
    /// are tied to their size).
    fn resized(&self, dim: usize) -> Result<Self> {
        match self {
            Self::Unit(_) => Ok(Self::Unit(dim)),
            Self::Matrix { dim: d, .. } if *d == dim => Ok(self.clone()),
            Self::Matrix { dim: d, .. } => Err(Error::DimensionMismatch {
                expected: dim,
                actual: *d,
            }),
        }
    }
}

/// Appends zero-mass nodes up to `dim`.
pub fn pad(p: &SimplexDist, dim: usize) -> Result<SimplexDist> {
    if dim < p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            actual: dim,
        });
    }
    let mut weights = p.weights.clone();
    weights.resize(dim, 0.0);
    Ok(SimplexDist { weights })
}

/// Pushes the mass of `p` forward through `map`.
pub fn apply_mapping(p: &SimplexDist, map: &Mapping) -> Result<SimplexDist> {
    if map.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            actual: map.len(),
        });
    }
    let mut weights = vec![0.0; p.dim()];
    for (w, target) in p.weights.iter().zip(map.assignment()) {
        weights[*target] += w;
    }
    Ok(SimplexDist { weights })
}

fn check_same_dim(p: &SimplexDist, q: &SimplexDist, g: &GroundMetric) -> Result<()> {
    for d in [q.dim(), g.dim()] {
        if d != p.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                actual: d,
            });
        }
    }
    Ok(())
}

/// Minimum transport cost between two equal-size distributions. Unit metrics
/// take the closed form `0.5 * |p - q|_1`.
pub fn emd(p: &SimplexDist, q: &SimplexDist, g: &GroundMetric) -> Result<f64> {
    check_same_dim(p, q, g)?;
    if g.is_unit() {
        Ok(half_l1(p.weights(), q.weights()))
    } else {
        lp::transport_cost(p.weights(), q.weights(), g)
    }
}

/// EMD through the transportation LP regardless of the metric.
pub fn emd_by_solver(p: &SimplexDist, q: &SimplexDist, g: &GroundMetric) -> Result<f64> {
    check_same_dim(p, q, g)?;
    lp::transport_cost(p.weights(), q.weights(), g)
}

pub(crate) fn half_l1(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Which argument of [`eemd`] gets padded and mapped: the smaller one, or the
/// second one when both have the same size.
pub(crate) fn mapped_is_first(p_dim: usize, q_dim: usize) -> bool {
    p_dim < q_dim
}

/// Expected EMD over the mapping prior.
///
/// The smaller distribution (the second one on equal sizes) is padded to the
/// larger size, pushed through each mapping and compared against the larger.
pub fn eemd(
    p: &SimplexDist,
    q: &SimplexDist,
    prior: &MappingPrior,
    g: &GroundMetric,
) -> Result<f64> {
    let (fixed, mapped) = if mapped_is_first(p.dim(), q.dim()) {
        (q, p)
    } else {
        (p, q)
    };
    let n = fixed.dim();
    if prior.size() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: prior.size(),
        });
    }
    let g = g.resized(n)?;
    let padded = pad(mapped, n)?;
    let mut total = 0.0;
    for (map, prob) in prior.entries() {
        total += prob * emd(fixed, &apply_mapping(&padded, map)?, &g)?;
    }
    Ok(total)
}

/// Belief initialization heuristics that ignore the mapping prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineStrategy {
    Uniform,
    LeftAlign,
    RightAlign,
}

impl BaselineStrategy {
    pub const ALL: [BaselineStrategy; 3] = [Self::Uniform, Self::LeftAlign, Self::RightAlign];
}

/// Uniform restart, or copying `beta` into the target aligned at the low
/// (left-align) or high (right-align) end. When the target is smaller, the
/// nodes that do not fit are dropped and the rest renormalized; if nothing
/// survives the result falls back to uniform.
pub fn baseline_init(
    strategy: BaselineStrategy,
    beta: &SimplexDist,
    target_dim: usize,
) -> Result<SimplexDist> {
    if target_dim == 0 {
        return Err(Error::InvalidParameter("target dimension must be positive".into()));
    }
    let n = beta.dim();
    let mass = match strategy {
        BaselineStrategy::Uniform => return Ok(SimplexDist::uniform(target_dim)),
        BaselineStrategy::LeftAlign => (0..target_dim)
            .map(|j| if j < n { beta.weights[j] } else { 0.0 })
            .collect::<Vec<_>>(),
        BaselineStrategy::RightAlign => (0..target_dim)
            .map(|j| {
                // align the top node of beta with the top node of the target
                let src = j as isize + n as isize - target_dim as isize;
                if (0..n as isize).contains(&src) {
                    beta.weights[src as usize]
                } else {
                    0.0
                }
            })
            .collect(),
    };
    if mass.iter().sum::<f64>() > 0.0 {
        SimplexDist::from_mass(mass)
    } else {
        Ok(SimplexDist::uniform(target_dim))
    }
}
