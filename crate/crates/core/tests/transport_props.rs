mod common;

use proptest::prelude::*;
use rand::RngExt;
use topoloc::transport::{
    apply_mapping, baseline_init, eemd, emd, emd_by_solver, minimize_eemd, pad, BaselineStrategy, GroundMetric,
    Mapping, MappingPrior, SimplexDist,
};

use common::{grid_min_eemd, random_dist, random_mapping, random_metric, random_permutation, random_prior, rng};

/// Prior on `large` nodes that keeps the first `small` nodes in place and
/// only shuffles the padded ones among themselves.
fn padding_prior<R: rand::Rng>(r: &mut R, small: usize, large: usize) -> MappingPrior {
    if small == large {
        return MappingPrior::identity(large);
    }
    random_prior(r, 3, |r| {
        let tail = random_permutation(r, large - small);
        let mut a: Vec<usize> = (0..small).collect();
        a.extend(tail.assignment().iter().map(|t| t + small));
        Mapping::new(a).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn emd_is_a_metric(seed in any::<u64>(), dim in 2usize..=8, unit in any::<bool>()) {
        let mut r = rng(seed);
        let g = if unit { GroundMetric::unit(dim) } else { random_metric(&mut r, dim) };
        let p = random_dist(&mut r, dim);
        let q = random_dist(&mut r, dim);
        let s = random_dist(&mut r, dim);
        let pq = emd(&p, &q, &g).unwrap();
        let qp = emd(&q, &p, &g).unwrap();
        let pr = emd(&p, &s, &g).unwrap();
        let qr = emd(&q, &s, &g).unwrap();
        prop_assert!(pq >= 0.0);
        prop_assert!(emd(&p, &p, &g).unwrap().abs() < 1e-9);
        prop_assert!((pq - qp).abs() < 1e-9);
        prop_assert!(pr <= pq + qr + 1e-9);
        if p != q {
            prop_assert!(pq > 0.0);
        }
    }

    #[test]
    fn unit_fast_path_matches_solver(seed in any::<u64>(), dim in 2usize..=8) {
        let mut r = rng(seed);
        let p = random_dist(&mut r, dim);
        let q = random_dist(&mut r, dim);
        let g = GroundMetric::unit(dim);
        let fast = emd(&p, &q, &g).unwrap();
        let slow = emd_by_solver(&p, &q, &g).unwrap();
        prop_assert!((fast - slow).abs() < 1e-9);
        prop_assert!((fast - common::unit_emd(p.weights(), q.weights())).abs() < 1e-15);
    }

    #[test]
    fn mapping_conserves_mass(seed in any::<u64>(), dim in 1usize..=10) {
        let mut r = rng(seed);
        let p = random_dist(&mut r, dim);
        let m = random_mapping(&mut r, dim);
        let out = apply_mapping(&p, &m).unwrap();
        let before: f64 = p.weights().iter().sum();
        let after: f64 = out.weights().iter().sum();
        prop_assert!((before - after).abs() < 1e-15);
    }

    #[test]
    fn eemd_matches_reference(seed in any::<u64>(), a in 1usize..=7, b in 1usize..=7) {
        let mut r = rng(seed);
        let p = random_dist(&mut r, a);
        let q = random_dist(&mut r, b);
        let n = a.max(b);
        let prior = random_prior(&mut r, 4, |r| random_mapping(r, n));
        let v = eemd(&p, &q, &prior, &GroundMetric::unit(n)).unwrap();
        let expected = common::reference_eemd(p.weights(), q.weights(), &prior);
        prop_assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn eemd_symmetric_across_sizes(seed in any::<u64>(), a in 1usize..=7, b in 1usize..=7) {
        prop_assume!(a != b);
        let mut r = rng(seed);
        let p = random_dist(&mut r, a);
        let q = random_dist(&mut r, b);
        let n = a.max(b);
        let prior = random_prior(&mut r, 4, |r| random_mapping(r, n));
        let g = GroundMetric::unit(n);
        prop_assert_eq!(eemd(&p, &q, &prior, &g).unwrap(), eemd(&q, &p, &prior, &g).unwrap());
    }

    #[test]
    fn eemd_zero_exactly_when_every_image_matches(seed in any::<u64>(), small in 1usize..=5, extra in 0usize..=3) {
        let mut r = rng(seed);
        let large = small + extra;
        let q = random_dist(&mut r, small);
        let g = GroundMetric::unit(large);
        // mappings that agree on the nodes carrying mass all send q to the same p
        let head = random_mapping(&mut r, large);
        let agree = random_prior(&mut r, 3, |r| {
            let mut a = head.assignment()[..small].to_vec();
            a.extend((small..large).map(|_| r.random_range(0..large)));
            Mapping::new(a).unwrap()
        });
        let p = apply_mapping(&pad(&q, large).unwrap(), &head).unwrap();
        prop_assert!(eemd(&p, &q, &agree, &g).unwrap().abs() < 1e-12);

        // a prior with mass on a mapping whose image differs gives a positive value
        let other = random_mapping(&mut r, large);
        let image = apply_mapping(&pad(&q, large).unwrap(), &other).unwrap();
        let mixed = MappingPrior::merged(vec![(head.clone(), 0.5), (other, 0.5)]).unwrap();
        let v = eemd(&p, &q, &mixed, &g).unwrap();
        if image == p {
            prop_assert!(v.abs() < 1e-12);
        } else {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn eemd_triangle_with_padding_priors(seed in any::<u64>(), a in 1usize..=6, b in 1usize..=6, c in 1usize..=6) {
        let mut r = rng(seed);
        let dims = [a, b, c];
        let d: Vec<SimplexDist> = dims.iter().map(|n| random_dist(&mut r, *n)).collect();
        let mut dist = |i: usize, j: usize| {
            let n = dims[i].max(dims[j]);
            let small = dims[i].min(dims[j]);
            let prior = padding_prior(&mut r, small, n);
            eemd(&d[i], &d[j], &prior, &GroundMetric::unit(n)).unwrap()
        };
        let (ab, bc, ac) = (dist(0, 1), dist(1, 2), dist(0, 2));
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!(ab <= ac + bc + 1e-12);
        prop_assert!(bc <= ab + ac + 1e-12);
    }

    #[test]
    fn padding_invariance(seed in any::<u64>(), m in 1usize..=5, extra in 0usize..=3, more in 1usize..=4) {
        let mut r = rng(seed);
        let n = m + extra;
        let k = n + more;
        let p = random_dist(&mut r, n);
        let q = random_dist(&mut r, m);
        let base = random_prior(&mut r, 4, |r| random_mapping(r, n));
        // extend every mapping, sending the new nodes only among themselves
        let lifted: Vec<(Mapping, f64)> = base
            .entries()
            .iter()
            .map(|(map, w)| {
                let tail = random_permutation(&mut r, k - n);
                let mut a = map.assignment().to_vec();
                a.extend(tail.assignment().iter().map(|t| t + n));
                (Mapping::new(a).unwrap(), *w)
            })
            .collect();
        let lifted = MappingPrior::new(lifted).unwrap();
        let lhs = eemd(&p, &pad(&q, n).unwrap(), &base, &GroundMetric::unit(n)).unwrap();
        let rhs = eemd(&pad(&p, k).unwrap(), &pad(&q, k).unwrap(), &lifted, &GroundMetric::unit(k)).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn minimizer_beats_grid_and_baselines(seed in any::<u64>(), beta_dim in 1usize..=7, target in 2usize..=7) {
        let mut r = rng(seed);
        let beta = random_dist(&mut r, beta_dim);
        let n = beta_dim.max(target);
        // the grid oracle needs bijections when the target is the mapped side
        let prior = if target > beta_dim {
            random_prior(&mut r, 4, |r| random_mapping(r, n))
        } else {
            random_prior(&mut r, 4, |r| random_permutation(r, n))
        };
        let g = GroundMetric::unit(n);
        let best = minimize_eemd(&beta, target, &prior, &g).unwrap();
        prop_assert_eq!(best.dim(), target);
        let value = eemd(&beta, &best, &prior, &g).unwrap();
        let grid = grid_min_eemd(beta.weights(), target, &prior, 50);
        prop_assert!(value <= grid + 1e-6, "lp {value} grid {grid}");
        for s in BaselineStrategy::ALL {
            let init = baseline_init(s, &beta, target).unwrap();
            prop_assert!(value <= eemd(&beta, &init, &prior, &g).unwrap() + 1e-9);
        }
    }

    #[test]
    fn minimizer_on_small_targets_with_any_mappings(seed in any::<u64>(), beta_dim in 2usize..=6, target in 1usize..=3) {
        prop_assume!(target <= beta_dim);
        let mut r = rng(seed);
        let beta = random_dist(&mut r, beta_dim);
        let prior = random_prior(&mut r, 4, |r| random_mapping(r, beta_dim));
        let g = GroundMetric::unit(beta_dim);
        let best = minimize_eemd(&beta, target, &prior, &g).unwrap();
        let value = eemd(&beta, &best, &prior, &g).unwrap();
        let brute = common::simplex_grid(target, 50)
            .into_iter()
            .map(|x| common::reference_eemd(beta.weights(), &x, &prior))
            .fold(f64::INFINITY, f64::min);
        prop_assert!(value <= brute + 1e-6, "lp {value} grid {brute}");
    }

    #[test]
    fn general_metric_minimizer_is_no_worse_than_baselines(seed in any::<u64>(), dim in 2usize..=5) {
        let mut r = rng(seed);
        let beta = random_dist(&mut r, dim);
        let prior = random_prior(&mut r, 3, |r| random_mapping(r, dim));
        let g = random_metric(&mut r, dim);
        let best = minimize_eemd(&beta, dim, &prior, &g).unwrap();
        let value = eemd(&beta, &best, &prior, &g).unwrap();
        for s in BaselineStrategy::ALL {
            let init = baseline_init(s, &beta, dim).unwrap();
            prop_assert!(value <= eemd(&beta, &init, &prior, &g).unwrap() + 1e-9);
        }
        // the original belief is also a candidate
        prop_assert!(value <= eemd(&beta, &beta, &prior, &g).unwrap() + 1e-9);
    }
}

#[test]
fn grid_oracle_agrees_with_brute_force() {
    let mut r = rng(11);
    for case in 0..30 {
        let beta_dim = 2 + case % 3;
        let target = 1 + (case / 3) % 4;
        let n = beta_dim.max(target);
        let beta = random_dist(&mut r, beta_dim);
        let prior = if target > beta_dim {
            random_prior(&mut r, 3, |r| random_mapping(r, n))
        } else {
            random_prior(&mut r, 3, |r| random_permutation(r, n))
        };
        let dp = grid_min_eemd(beta.weights(), target, &prior, 20);
        let brute = common::simplex_grid(target, 20)
            .into_iter()
            .map(|x| common::reference_eemd(beta.weights(), &x, &prior))
            .fold(f64::INFINITY, f64::min);
        assert!((dp - brute).abs() < 1e-12, "case {case}: dp {dp} brute {brute}");
    }
}

#[test]
fn two_lane_to_three_lane_example() {
    let p = SimplexDist::new(vec![1.0, 0.0, 0.0]).unwrap();
    let q = SimplexDist::new(vec![1.0, 0.0]).unwrap();
    let prior = MappingPrior::left_right(2, 3).unwrap();
    let v = eemd(&p, &q, &prior, &GroundMetric::unit(3)).unwrap();
    assert!((v - 0.5).abs() < 1e-12);
    let explicit = GroundMetric::from_matrix(vec![
        vec![0.0, 1.0, 1.0],
        vec![1.0, 0.0, 1.0],
        vec![1.0, 1.0, 0.0],
    ])
    .unwrap();
    assert!((eemd(&p, &q, &prior, &explicit).unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn two_to_three_node_minimizer_matches_dense_grid() {
    let beta = SimplexDist::new(vec![1.0, 0.0]).unwrap();
    let prior = MappingPrior::left_right(2, 3).unwrap();
    let g = GroundMetric::unit(3);
    let best = minimize_eemd(&beta, 3, &prior, &g).unwrap();
    let value = eemd(&beta, &best, &prior, &g).unwrap();
    let grid = common::simplex_grid(3, 100)
        .into_iter()
        .map(|x| common::reference_eemd(beta.weights(), &x, &prior))
        .fold(f64::INFINITY, f64::min);
    assert!((value - grid).abs() < 1e-3);
}

#[test]
fn symmetric_prior_keeps_uniform_minimizer() {
    let beta = SimplexDist::uniform(3);
    let perms: Vec<Vec<usize>> = vec![
        vec![0, 1, 2],
        vec![0, 2, 1],
        vec![1, 0, 2],
        vec![1, 2, 0],
        vec![2, 0, 1],
        vec![2, 1, 0],
    ];
    let prior = MappingPrior::new(
        perms
            .into_iter()
            .map(|a| (Mapping::new(a).unwrap(), 1.0 / 6.0))
            .collect(),
    )
    .unwrap();
    let g = GroundMetric::unit(3);
    let best = minimize_eemd(&beta, 3, &prior, &g).unwrap();
    for w in best.weights() {
        assert!((w - 1.0 / 3.0).abs() < 1e-6);
    }
    let grid = common::simplex_grid(3, 100)
        .into_iter()
        .map(|x| common::reference_eemd(beta.weights(), &x, &prior))
        .fold(f64::INFINITY, f64::min);
    assert!(eemd(&beta, &best, &prior, &g).unwrap() <= grid + 1e-9);
}
