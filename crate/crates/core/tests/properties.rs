//! Randomized properties of the quantifiers, bounds and Bell/steering analogs.

use incompat_core::bell::{
    avg_chsh_coefficients, behavior_from_state, chsh_values, correlator, nonlocality_distance, random_two_qubit_state,
    resource_sandwich, resource_subset_bound, seesaw_maximize, steer_from_state, steering_distance,
    AVG_CHSH_QUANTUM_BOUND,
};
use incompat_core::incompat::is_jointly_measurable;
use incompat_core::linalg::bloch_operator;
use incompat_core::random::{haar_unitary, random_assemblage, random_bloch, random_povm, random_simplex, random_state};
use incompat_core::structures::{check_ordered_gain, decompose, split_sandwich, subset_bound_with};
use incompat_core::{incompatibility, Hermitian, IncompatOptions, Povm, SimulationMap, WeightedAssemblage};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, rng_seed: RngSeed::Fixed(0x5eed), failure_persistence: None, ..ProptestConfig::default() }
}

fn value(m: &WeightedAssemblage) -> f64 {
    incompatibility(m).unwrap().value
}

/// Random assemblage with random visibility, so that both jointly measurable
/// and incompatible inputs occur.
fn noisy_random(d: usize, m: usize, seed: u64) -> WeightedAssemblage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta = rng.random_range(0.2..=1.0);
    random_assemblage(d, m, d, rng.random_bool(0.5), &mut rng).depolarize(eta).unwrap()
}

fn random_separable(rng: &mut ChaCha8Rng) -> Hermitian {
    let ps = random_simplex(3, rng);
    ps.iter().fold(Hermitian::zeros(4), |acc, &p| {
        let product = random_state(2, 1, rng).kron(&random_state(2, 2, rng));
        &acc + &product.scale(p)
    })
}

proptest! {
    #![proptest_config(config(100))]

    #[test]
    fn faithfulness(seed in any::<u64>(), qutrit in any::<bool>()) {
        let m = noisy_random(if qutrit { 3 } else { 2 }, 2, seed);
        let v = value(&m);
        // Values between the two thresholds are too close to the boundary to
        // classify.
        prop_assume!(!(1e-8..1e-6).contains(&v));
        prop_assert_eq!(v < 1e-8, is_jointly_measurable(&m).unwrap().jointly_measurable, "value {}", v);
    }
}

proptest! {
    #![proptest_config(config(50))]

    #[test]
    fn splitting_invariance(seed in any::<u64>()) {
        let m = noisy_random(2, 2, seed);
        prop_assert!((value(&m) - value(&m.split(&[2, 2]).unwrap())).abs() <= 1e-6);
    }

    #[test]
    fn simulation_monotonicity(seed in any::<u64>(), outputs in 1usize..=3, outcomes in 2usize..=3) {
        let m = noisy_random(2, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let map = SimulationMap::random(&m, outputs, outcomes, &mut rng);
        prop_assert!(value(&m.simulate(&map).unwrap()) <= value(&m) + 1e-7);
    }

    #[test]
    fn unital_conjugation(seed in any::<u64>(), mix in 0.0..=1.0f64) {
        let m = noisy_random(2, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let v = value(&m);
        prop_assert!((value(&m.conjugate_by(&haar_unitary(2, &mut rng))) - v).abs() <= 1e-7);
        let mixed: Vec<Povm> = m
            .measurements()
            .iter()
            .map(|p| {
                let effects = p
                    .effects()
                    .iter()
                    .map(|e| &e.scale(1.0 - mix) + &Hermitian::identity(2).scale(mix * e.trace() / 2.0))
                    .collect();
                Povm::new(effects).unwrap()
            })
            .collect();
        prop_assert!(value(&WeightedAssemblage::new(mixed, m.weights().to_vec()).unwrap()) <= v + 1e-7);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn sandwich_bounds(seed in any::<u64>()) {
        let m = noisy_random(2, 3, seed);
        let s = split_sandwich(&m, &IncompatOptions::default()).unwrap();
        prop_assert!(s.lower_slack >= -1e-7 && s.upper_slack >= -1e-7, "{:?}", (s.lower_slack, s.upper_slack));
        prop_assert!(s.g_value.unwrap() >= s.n_value - 1e-7);
    }

    #[test]
    fn subset_bound_lower(seed in any::<u64>(), qutrit in any::<bool>()) {
        let m = noisy_random(if qutrit { 3 } else { 2 }, 3, seed);
        let b = subset_bound_with(&m, &[0, 1], &IncompatOptions::default()).unwrap();
        prop_assert!(b.lower_slack >= -1e-7 && b.upper_slack >= -1e-7);
    }

    #[test]
    fn ordered_gain_on_random_trios(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = check_ordered_gain(&random_assemblage(2, 3, 2, true, &mut rng)).unwrap();
        prop_assert!(r.gain.hypothesis_holds);
        prop_assert!(r.gain.gain_slack >= -1e-7);
        prop_assert!(r.gain.parent_slack.unwrap() >= -1e-7);
    }

    #[test]
    fn decomposition_terms(seed in any::<u64>()) {
        let r = decompose(&noisy_random(2, 3, seed)).unwrap();
        for t in [r.genuine, r.pairwise, r.hollow] {
            prop_assert!(t >= -1e-9);
        }
        prop_assert!(r.slack >= -1e-7, "{}", r.slack);
    }
}

/// Four qubit measurements: the split sandwich over the three-element subsets.
#[test]
fn four_setting_splitting_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let u = haar_unitary(2, &mut rng);
    let m = incompat_core::build_mub(2, 3).unwrap().assemblage();
    let fourth = random_povm(2, 2, &mut rng);
    let m = m.push(fourth).unwrap().conjugate_by(&u).depolarize(0.9).unwrap();
    let s = split_sandwich(&m, &IncompatOptions::default()).unwrap();
    assert!(s.lower_slack >= -1e-7 && s.upper_slack >= -1e-7, "{s:?}");
    assert!(s.g_value.is_none_or(|g| g >= s.n_value - 1e-7));
}

proptest! {
    #![proptest_config(config(20))]

    #[test]
    fn separable_states_are_free(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_separable(&mut rng);
        let alice = random_assemblage(2, 3, 2, false, &mut rng);
        let bob = random_assemblage(2, 2, 2, true, &mut rng);
        prop_assert!(steering_distance(&steer_from_state(&rho, &alice).unwrap()).unwrap().value <= 1e-7);
        prop_assert!(nonlocality_distance(&behavior_from_state(&rho, &alice, &bob).unwrap()).unwrap().value <= 1e-7);
    }

    #[test]
    fn steering_below_incompatibility(seed in any::<u64>(), eta in 0.5..=1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_two_qubit_state(&mut rng);
        let alice = incompat_core::build_mub(2, 3).unwrap().noisy(eta).unwrap();
        let s = steering_distance(&steer_from_state(&rho, &alice).unwrap()).unwrap().value;
        prop_assert!(s <= value(&alice) + 1e-6);
    }

    #[test]
    fn steering_and_nonlocality_bounds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_two_qubit_state(&mut rng);
        let alice = random_assemblage(2, 3, 2, true, &mut rng).depolarize(rng.random_range(0.5..=1.0)).unwrap();
        let bob = random_assemblage(2, 2, 2, true, &mut rng);
        let opts = IncompatOptions::default();
        let sa = steer_from_state(&rho, &alice).unwrap();
        let q = behavior_from_state(&rho, &alice, &bob).unwrap();
        let s = resource_sandwich(&sa, &opts).unwrap();
        let n = resource_sandwich(&q, &opts).unwrap();
        let sb = resource_subset_bound(&sa, &[0, 1], &opts).unwrap();
        let nb = resource_subset_bound(&q, &[0, 1], &opts).unwrap();
        for slack in [s.lower_slack, s.upper_slack, n.lower_slack, n.upper_slack, sb.lower_slack, sb.upper_slack, nb.lower_slack, nb.upper_slack] {
            prop_assert!(slack >= -1e-6, "{}", slack);
        }
    }

    #[test]
    fn chsh_rewrite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_two_qubit_state(&mut rng);
        let a: [Hermitian; 3] = std::array::from_fn(|_| bloch_operator(0.0, random_bloch(&mut rng)));
        let b: [Hermitian; 2] = std::array::from_fn(|_| bloch_operator(0.0, random_bloch(&mut rng)));
        let v = chsh_values(&rho, &a, &b).unwrap();
        let e = |x: usize, y: usize| correlator(&rho, &a[x], &b[y]);
        let rewritten = (2.0 * (e(0, 0) + e(0, 1) + e(2, 0) - e(2, 1)) + 2.0 * e(1, 0)) / 3.0;
        prop_assert!((v.average - rewritten).abs() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(config(5))]

    #[test]
    fn seesaw_never_exceeds_quantum_bound(seed in any::<u64>()) {
        let r = seesaw_maximize(&avg_chsh_coefficients(), seed, 3).unwrap();
        for v in r.restart_values {
            prop_assert!(v <= AVG_CHSH_QUANTUM_BOUND + 1e-6);
        }
    }
}
