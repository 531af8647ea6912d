mod common;

use proptest::prelude::*;
use topoloc::hmm::{build_transition, forward_update, normalized_entropy, predict, Belief, TransitionParams};

fn params() -> impl Strategy<Value = TransitionParams> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b)| {
        // any point with stay + 2 * switch <= 1
        let switch = 0.5 * a * (1.0 - 1e-9);
        let stay = b * (1.0 - 2.0 * switch);
        TransitionParams::new(stay, switch).unwrap()
    })
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, n).prop_filter_map("zero mass", |w| {
        let total: f64 = w.iter().sum();
        (total > 1e-6).then(|| w.iter().map(|v| v / total).collect())
    })
}

fn chain() -> impl Strategy<Value = (usize, TransitionParams, Vec<f64>, Vec<Vec<f64>>)> {
    (1usize..=3, params(), 1usize..=5).prop_flat_map(|(lanes, p, steps)| {
        let n = 2 * lanes - 1;
        (
            Just(lanes),
            Just(p),
            simplex(n),
            prop::collection::vec(prop::collection::vec(0.01..1.0f64, n), steps),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn forward_matches_path_enumeration((lanes, p, init, liks) in chain()) {
        let hmm = build_transition(lanes, p).unwrap();
        let mut belief = Belief::new(init.clone()).unwrap();
        for l in &liks {
            belief = forward_update(&hmm, &belief, l).unwrap();
        }
        let expected = common::brute_force_posterior(&hmm.matrix(), &init, &liks);
        for (a, b) in belief.weights().iter().zip(&expected) {
            prop_assert!((a - b).abs() < 1e-10, "{:?} vs {:?}", belief.weights(), expected);
        }
    }

    #[test]
    fn forward_keeps_a_distribution(
        (lanes, p, init, liks) in chain(),
        zero_mask in prop::collection::vec(any::<bool>(), 5),
    ) {
        let hmm = build_transition(lanes, p).unwrap();
        let mut belief = Belief::new(init).unwrap();
        for l in &liks {
            // knock out some states, keeping at least one with support
            let masked: Vec<f64> = l
                .iter()
                .zip(&zero_mask)
                .map(|(v, z)| if *z { 0.0 } else { *v })
                .collect();
            let next = forward_update(&hmm, &belief, &masked);
            belief = match next {
                Ok(b) => b,
                Err(_) => forward_update(&hmm, &belief, l).unwrap(),
            };
            let total: f64 = belief.weights().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(belief.weights().iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn one_step_never_skips_a_state(lanes in 1usize..=6, p in params(), seed in any::<u64>()) {
        let hmm = build_transition(lanes, p).unwrap();
        let n = hmm.state_count();
        let i = (seed % n as u64) as usize;
        let next = forward_update(&hmm, &Belief::point(n, i), &vec![1.0; n]).unwrap();
        for (j, w) in next.weights().iter().enumerate() {
            if i.abs_diff(j) > 1 {
                prop_assert_eq!(*w, 0.0);
            }
        }
    }

    #[test]
    fn transition_is_reflection_symmetric(lanes in 1usize..=8, p in params()) {
        let m = build_transition(lanes, p).unwrap().matrix();
        let n = m.len();
        for i in 0..n {
            let row_sum: f64 = m[i].iter().sum();
            prop_assert!((row_sum - 1.0).abs() < 1e-12);
            for j in 0..n {
                prop_assert_eq!(m[i][j], m[n - 1 - i][n - 1 - j]);
            }
        }
    }

    #[test]
    fn all_zero_frame_is_pure_prediction((lanes, p, init, _liks) in chain()) {
        let hmm = build_transition(lanes, p).unwrap();
        let belief = Belief::new(init).unwrap();
        let n = belief.len();
        let out = forward_update(&hmm, &belief, &vec![0.0; n]).unwrap();
        let pred = predict(&hmm, &belief).unwrap();
        for (a, b) in out.weights().iter().zip(&pred) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_bounds_and_permutation_invariance(w in (2usize..=9).prop_flat_map(simplex), rot in 0usize..9) {
        let b = Belief::new(w.clone()).unwrap();
        let h = normalized_entropy(&b);
        prop_assert!(!h.degenerate);
        prop_assert!((0.0..=1.0).contains(&h.value));
        let mut r = w.clone();
        r.rotate_left(rot % w.len());
        r.reverse();
        let hr = normalized_entropy(&Belief::new(r).unwrap());
        prop_assert!((h.value - hr.value).abs() < 1e-12);
        let uniform = normalized_entropy(&Belief::uniform(w.len())).value;
        prop_assert!(h.value <= uniform + 1e-12);
    }
}

#[test]
fn entropy_extremes_are_exact() {
    for n in 2..=21 {
        let u = normalized_entropy(&Belief::uniform(n)).value;
        assert!((u - 1.0).abs() < 1e-12);
        for i in 0..n {
            assert_eq!(normalized_entropy(&Belief::point(n, i)).value, 0.0);
        }
        // a little mass off the point or off uniform moves strictly inside
        let mut near_point = vec![0.0; n];
        near_point[0] = 0.999;
        near_point[n - 1] += 0.001;
        assert!(normalized_entropy(&Belief::new(near_point).unwrap()).value > 0.0);
        let mut near_uniform = vec![1.0 / n as f64; n];
        near_uniform[0] += 1e-3;
        near_uniform[1] -= 1e-3;
        assert!(normalized_entropy(&Belief::new(near_uniform).unwrap()).value < 1.0);
    }
}

#[test]
fn single_state_entropy_is_flagged() {
    let h = normalized_entropy(&Belief::uniform(1));
    assert!(h.degenerate);
    assert_eq!(h.value, 0.0);
}

#[test]
fn three_steps_on_three_states() {
    let hmm = build_transition(2, TransitionParams::default()).unwrap();
    let init = vec![0.2, 0.5, 0.3];
    let liks = vec![vec![0.9, 0.1, 0.4], vec![0.2, 0.8, 0.5], vec![0.6, 0.3, 0.7]];
    let mut b = Belief::new(init.clone()).unwrap();
    for l in &liks {
        b = forward_update(&hmm, &b, l).unwrap();
    }
    let expected = common::brute_force_posterior(&hmm.matrix(), &init, &liks);
    for (a, e) in b.weights().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12);
    }
}
