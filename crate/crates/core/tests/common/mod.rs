//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use topoloc::transport::{GroundMetric, Mapping, MappingPrior, SimplexDist};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random point of the simplex, sometimes with exact zeros.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random::<f64>() + 1e-3
            }
        })
        .collect();
    if w.iter().all(|v| *v == 0.0) {
        w[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

pub fn random_dist<R: Rng>(rng: &mut R, n: usize) -> SimplexDist {
    SimplexDist::from_mass(random_simplex(rng, n)).unwrap()
}

/// Random metric: shortest-path closure of random positive edge weights.
pub fn random_metric<R: Rng>(rng: &mut R, n: usize) -> GroundMetric {
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let w = rng.random_range(0.1..2.0);
            d[i][j] = w;
            d[j][i] = w;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    GroundMetric::from_matrix(d).unwrap()
}

pub fn random_mapping<R: Rng>(rng: &mut R, n: usize) -> Mapping {
    Mapping::new((0..n).map(|_| rng.random_range(0..n)).collect()).unwrap()
}

pub fn random_permutation<R: Rng>(rng: &mut R, n: usize) -> Mapping {
    let mut a: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        a.swap(i, rng.random_range(0..=i));
    }
    Mapping::new(a).unwrap()
}

/// Prior over up to `max_maps` distinct mappings produced by `make`.
pub fn random_prior<R: Rng>(
    rng: &mut R,
    max_maps: usize,
    mut make: impl FnMut(&mut R) -> Mapping,
) -> MappingPrior {
    let count = rng.random_range(1..=max_maps);
    let mut maps: Vec<Mapping> = Vec::new();
    for _ in 0..count * 4 {
        if maps.len() == count {
            break;
        }
        let m = make(rng);
        if !maps.contains(&m) {
            maps.push(m);
        }
    }
    let w = random_simplex(rng, maps.len());
    let entries: Vec<(Mapping, f64)> = maps
        .into_iter()
        .zip(w)
        .filter(|(_, p)| *p > 0.0)
        .collect();
    let total: f64 = entries.iter().map(|(_, p)| p).sum();
    MappingPrior::new(entries.into_iter().map(|(m, p)| (m, p / total)).collect()).unwrap()
}

/// Filtering posterior by enumerating every state path.
pub fn brute_force_posterior(
    transition: &[Vec<f64>],
    initial: &[f64],
    likelihoods: &[Vec<f64>],
) -> Vec<f64> {
    let n = initial.len();
    let steps = likelihoods.len();
    let mut out = vec![0.0; n];
    let paths = n.pow(steps as u32 + 1);
    for code in 0..paths {
        let mut path = Vec::with_capacity(steps + 1);
        let mut c = code;
        for _ in 0..=steps {
            path.push(c % n);
            c /= n;
        }
        let mut p = initial[path[0]];
        for t in 0..steps {
            p *= transition[path[t]][path[t + 1]] * likelihoods[t][path[t + 1]];
        }
        out[path[steps]] += p;
    }
    let total: f64 = out.iter().sum();
    out.iter().map(|v| v / total).collect()
}

/// Half-L1 EMD written out directly.
pub fn unit_emd(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn push_forward(x: &[f64], map: &Mapping) -> Vec<f64> {
    let mut out = vec![0.0; map.len()];
    for (i, v) in x.iter().enumerate() {
        out[map.assignment()[i]] += v;
    }
    out
}

fn padded(x: &[f64], n: usize) -> Vec<f64> {
    let mut v = x.to_vec();
    v.resize(n, 0.0);
    v
}

/// Unit-metric EEMD straight from the definition.
pub fn reference_eemd(p: &[f64], q: &[f64], prior: &MappingPrior) -> f64 {
    let (fixed, mapped) = if p.len() < q.len() { (q, p) } else { (p, q) };
    let n = fixed.len();
    prior
        .entries()
        .iter()
        .map(|(m, w)| w * unit_emd(fixed, &push_forward(&padded(mapped, n), m)))
        .sum()
}

/// Exact minimum of the unit-metric EEMD over the grid of target
/// distributions whose weights are multiples of `1 / steps`.
///
/// When the target is the larger side, every term compares the unknown
/// directly with a fixed vector, so the objective is a sum of per-node
/// convex functions. When the target is mapped, the prior must consist of
/// bijections, which again makes every term separable per node. Either way
/// a knapsack-style DP over nodes and remaining mass finds the optimum.
pub fn grid_min_eemd(beta: &[f64], target: usize, prior: &MappingPrior, steps: usize) -> f64 {
    let n = beta.len().max(target);
    // cost[i][k]: contribution of giving node i of the target k grid units
    let mut cost = vec![vec![0.0; steps + 1]; target];
    let mut constant = 0.0;
    for (m, w) in prior.entries() {
        if target > beta.len() {
            let b = push_forward(&padded(beta, n), m);
            for (i, row) in cost.iter_mut().enumerate() {
                for (k, c) in row.iter_mut().enumerate() {
                    *c += w * 0.5 * (k as f64 / steps as f64 - b[i]).abs();
                }
            }
        } else {
            let a = m.assignment();
            for (i, row) in cost.iter_mut().enumerate() {
                for (k, c) in row.iter_mut().enumerate() {
                    *c += w * 0.5 * (k as f64 / steps as f64 - beta[a[i]]).abs();
                }
            }
            // padded nodes carry no mass; their images are matched against nothing
            for i in target..n {
                constant += w * 0.5 * beta[a[i]];
            }
        }
    }
    let mut best = vec![f64::INFINITY; steps + 1];
    best[0] = 0.0;
    for row in &cost {
        let mut next = vec![f64::INFINITY; steps + 1];
        for used in 0..=steps {
            if best[used].is_infinite() {
                continue;
            }
            for k in 0..=steps - used {
                let v = best[used] + row[k];
                if v < next[used + k] {
                    next[used + k] = v;
                }
            }
        }
        best = next;
    }
    best[steps] + constant
}

/// Every grid point of the simplex with `n` nodes at resolution `1 / steps`.
pub fn simplex_grid(n: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.iter().map(|k| *k as f64 / steps as f64).collect());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(n, left - k, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, steps, steps, &mut Vec::new(), &mut out);
    out
}

/// One random run of the block-diagonal analog against independent per-model
/// filters. Returns the largest per-block deviation after renormalization.
pub fn analog_trial(seed: u64) -> f64 {
    use topoloc::hmm::{forward_update, Belief, TransitionParams};
    use topoloc::vsm::{build_analog, AnalogConfig, ModelBank};

    let mut r = rng(seed);
    let mut lanes: Vec<usize> = (1..=6).filter(|_| r.random_bool(0.5)).collect();
    if lanes.is_empty() {
        lanes.push(r.random_range(1..=6));
    }
    let switch = r.random_range(0.0..0.5);
    let stay = r.random_range(0.0..=1.0 - 2.0 * switch);
    let params = TransitionParams::new(stay, switch).unwrap();
    let bank = ModelBank::new(lanes.iter().copied(), params).unwrap();
    let analog = build_analog(&bank, AnalogConfig { t_m: 0.0 }).unwrap();

    let mut beliefs: Vec<Belief> = bank
        .models()
        .iter()
        .map(|m| Belief::new(random_simplex(&mut r, m.state_count())).unwrap())
        .collect();
    let block_mass = random_simplex(&mut r, beliefs.len())
        .into_iter()
        .map(|w| w + 1e-3)
        .collect::<Vec<_>>();
    let mut joint: Vec<f64> = beliefs
        .iter()
        .zip(&block_mass)
        .flat_map(|(b, w)| b.weights().iter().map(move |v| v * w).collect::<Vec<_>>())
        .collect();
    let total: f64 = joint.iter().sum();
    joint.iter_mut().for_each(|v| *v /= total);

    let steps = r.random_range(1..=8);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let liks: Vec<Vec<f64>> = bank
            .models()
            .iter()
            .map(|m| (0..m.state_count()).map(|_| r.random_range(0.01..1.0)).collect())
            .collect();
        for ((m, b), l) in bank.models().iter().zip(beliefs.iter_mut()).zip(&liks) {
            *b = forward_update(m, b, l).unwrap();
        }
        let flat: Vec<f64> = liks.concat();
        joint = analog.forward_update(&joint, &flat).unwrap();
        for ((_, start, n), b) in analog.blocks.iter().zip(&beliefs) {
            let block = &joint[*start..start + n];
            let mass: f64 = block.iter().sum();
            for (a, e) in block.iter().zip(b.weights()) {
                worst = worst.max((a / mass - e).abs());
            }
        }
    }
    worst
}
