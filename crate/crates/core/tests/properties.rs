//! Randomised invariants across modules.

use cmdp::adversary::{LossPattern, TransitionAdversary};
use cmdp::harness::{
    run_experiment, Environment, ExperimentConfig, LearnerKind, LearnerSpec, LossSpec, MdpSpec,
    TransitionSpec,
};
use cmdp::mdp::{compute_occupancy, extract_policy, value_functions, LayeredMdp, Policy, TransitionFn};
use cmdp::reduction::{corral_weights, theta_j};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape() -> impl Strategy<Value = (Vec<usize>, usize)> {
    (prop::collection::vec(1usize..4, 1..4), 1usize..4).prop_map(|(mid, a)| {
        let mut layers = vec![1];
        layers.extend(mid);
        layers.push(1);
        (layers, a)
    })
}

fn random_policy(mdp: &LayeredMdp, rng: &mut ChaCha8Rng, sparse: bool) -> Policy {
    let mut probs = Vec::new();
    for _ in mdp.decision_states() {
        let mut w: Vec<f64> = (0..mdp.num_actions()).map(|_| rng.gen::<f64>()).collect();
        if sparse && mdp.num_actions() > 1 {
            w[rng.gen_range(0..mdp.num_actions())] = 0.0;
        }
        if w.iter().sum::<f64>() == 0.0 {
            w[0] = 1.0;
        }
        let z: f64 = w.iter().sum();
        probs.extend(w.iter().map(|x| x / z));
    }
    Policy::new(mdp, probs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn occupancy_satisfies_flow((layers, a) in shape(), seed in any::<u64>()) {
        let mdp = LayeredMdp::new(layers, a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = TransitionFn::random(&mdp, 0.7, &mut rng);
        let pi = random_policy(&mdp, &mut rng, true);
        let q = compute_occupancy(&mdp, &p, &pi).unwrap();
        prop_assert!(q.flow_residual(&mdp, false) <= 1e-10);
        for k in 0..mdp.num_layers() {
            let mass: f64 = mdp.layer(k).map(|s| q.state(s)).sum();
            prop_assert!((mass - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn policy_survives_the_round_trip((layers, a) in shape(), seed in any::<u64>()) {
        let mdp = LayeredMdp::new(layers, a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = TransitionFn::random(&mdp, 0.7, &mut rng);
        let pi = random_policy(&mdp, &mut rng, true);
        let q = compute_occupancy(&mdp, &p, &pi).unwrap();
        let back = extract_policy(&mdp, q.pairs()).unwrap();
        for s in mdp.decision_states() {
            if q.state(s) > 0.0 {
                for x in 0..a {
                    prop_assert!((back.prob(s, x) - pi.prob(s, x)).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn value_equals_occupancy_inner_product((layers, a) in shape(), seed in any::<u64>()) {
        let mdp = LayeredMdp::new(layers, a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let pi = random_policy(&mdp, &mut rng, false);
        let r: Vec<f64> = (0..mdp.num_pairs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (v, _) = value_functions(&mdp, &p, &pi, &r).unwrap();
        let q = compute_occupancy(&mdp, &p, &pi).unwrap();
        prop_assert!((v[mdp.initial()] - q.dot(&r)).abs() <= 1e-9);
    }

    #[test]
    fn corral_weights_lie_on_the_floored_simplex(
        losses in prop::collection::vec(0.0f64..500.0, 1..12),
        eta in 1e-4f64..1.0,
        horizon in 16usize..100_000,
    ) {
        let floor = 1.0 / horizon as f64;
        let w = corral_weights(&losses, eta, floor).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|&x| x >= floor - 1e-12));
    }

    #[test]
    fn thetas_decrease_to_their_floor(c in 0.0f64..1e4, layers in 1usize..6, horizon in 2usize..1_000_000) {
        let floor = 16.0 * layers as f64 * (horizon as f64).ln();
        let mut prev = f64::INFINITY;
        for j in 0..20 {
            let t = theta_j(j, c, layers, horizon);
            prop_assert!(t >= floor);
            if c > 0.0 {
                prop_assert!(t < prev);
            }
            prev = t;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Traces are prefix sums of increments in `[−L, L]`, whatever the learner.
    #[test]
    fn traces_are_consistent(
        kind in prop::sample::select(vec![LearnerKind::Alg1, LearnerKind::Alg4, LearnerKind::Reduction, LearnerKind::Uniform]),
        adversary in prop::sample::select(vec![TransitionAdversary::None, TransitionAdversary::Burst, TransitionAdversary::Spread, TransitionAdversary::Targeted]),
        env_seed in 0u64..1000,
        seed in any::<u64>(),
    ) {
        let cfg = ExperimentConfig {
            schema: 1,
            mdp: MdpSpec { layer_sizes: vec![1, 2, 2, 1], num_actions: 2, concentration: 1.0 },
            horizon: 40,
            transitions: TransitionSpec { kind: adversary, budget: 6.0 },
            losses: LossSpec::Adversarial { pattern: LossPattern::Alternating { period: 3 } },
            learner: LearnerSpec::new(kind),
            seeds: vec![seed],
            env_seed,
            out: None,
            enumeration_cap: 1_000_000,
            sweep: None,
        };
        let env = Environment::build(&cfg).unwrap();
        let out = run_experiment(&cfg, &env, seed, false).unwrap();
        let mut cum = 0.0;
        for row in &out.trace.rows {
            cum += row.inc_regret;
            prop_assert!(row.inc_regret.abs() <= 3.0 + 1e-9);
            prop_assert_eq!(row.cum_regret, cum);
        }
        prop_assert!(out.trace.rows.last().unwrap().cum_cp <= 6.0 + 1e-9);
    }
}
