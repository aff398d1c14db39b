use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zsclab::envs::{build_env, EnvName};
use zsclab::eval::{expected_return, sample_episode};
use zsclab::otherplay::op_value;
use zsclab::symmetry::{enumerate_automorphisms, normal_form, pushforward, relabel, sample_labeling};
use zsclab::{Env, Policy};

const SMALL: [EnvName; 4] = [EnvName::TwoStage, EnvName::Asymmetric, EnvName::MatchingPennies, EnvName::Lever4];

fn setup(env: usize, seed: u64) -> (Env, Policy, ChaCha8Rng) {
    let d = build_env::<f64>(SMALL[env]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = Policy::random(&d, &mut rng);
    (d, pi, rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn return_is_invariant_under_relabeling(env in 0..SMALL.len(), seed in any::<u64>()) {
        let (d, pi, mut rng) = setup(env, seed);
        let f = sample_labeling(&d, &mut rng);
        let e = relabel(&d, &f).unwrap();
        let moved = pushforward(&f, &pi).unwrap();
        let a = expected_return(&d, &pi).unwrap();
        let b = expected_return(&e, &moved).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn op_value_is_invariant_under_relabeling(env in 0..SMALL.len(), seed in any::<u64>()) {
        let (d, pi, mut rng) = setup(env, seed);
        let f = sample_labeling(&d, &mut rng);
        let e = relabel(&d, &f).unwrap();
        let a = op_value(&d, &pi, &enumerate_automorphisms(&d).unwrap()).unwrap();
        let b = op_value(&e, &pushforward(&f, &pi).unwrap(), &enumerate_automorphisms(&e).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn pushforward_respects_composition(env in 0..SMALL.len(), seed in any::<u64>()) {
        let (d, pi, mut rng) = setup(env, seed);
        let f = sample_labeling(&d, &mut rng);
        let e = relabel(&d, &f).unwrap();
        let g = sample_labeling(&e, &mut rng);
        let two_steps = pushforward(&g, &pushforward(&f, &pi).unwrap()).unwrap();
        let composed = pushforward(&g.after(&f), &pi).unwrap();
        prop_assert_eq!(two_steps.max_abs_diff(&composed), 0.0);
        let back = pushforward(&f.inverse(), &pushforward(&f, &pi).unwrap()).unwrap();
        prop_assert_eq!(back.max_abs_diff(&pi), 0.0);
    }

    #[test]
    fn normal_form_erases_labels_up_to_agent_order(env in 0..SMALL.len(), seed in any::<u64>()) {
        let (d, pi, mut rng) = setup(env, seed);
        let tau = sample_episode(&d, &pi, &mut rng);
        let f = sample_labeling(&d, &mut rng);
        let relabeled = normal_form(&f.map_history(&tau));
        prop_assert_eq!(relabeled, normal_form(&tau).permute_agents(&f.agents));
    }
}
