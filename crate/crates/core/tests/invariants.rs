use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sit_core::dper::discounted_returns;
use sit_core::envkit::{generate_dataset, DatasetComposition, EnvSpec, MixtureComponent, PolicyLevel};

fn level() -> impl Strategy<Value = PolicyLevel> {
    prop_oneof![Just(PolicyLevel::Random), Just(PolicyLevel::Medium), Just(PolicyLevel::Expert)]
}

/// Integer percentages that add up to 100, each paired with a level list.
fn composition(n_agents: usize) -> impl Strategy<Value = DatasetComposition> {
    prop::collection::vec((1u32..10, prop::collection::vec(level(), n_agents)), 1..4).prop_map(|parts| {
        let total: u32 = parts.iter().map(|p| p.0).sum();
        let mut pcts: Vec<u32> = parts.iter().map(|p| p.0 * 100 / total).collect();
        pcts[0] += 100 - pcts.iter().sum::<u32>();
        let components = parts
            .into_iter()
            .zip(pcts)
            .map(|((_, levels), pct)| MixtureComponent {
                fraction: pct as f64 / 100.0,
                levels,
            })
            .collect();
        DatasetComposition::new(components, 0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn composition_text_round_trips(comp in composition(3)) {
        let back: DatasetComposition = comp.to_string().parse().unwrap();
        prop_assert_eq!(back.components.len(), comp.components.len());
        for (a, b) in back.components.iter().zip(&comp.components) {
            prop_assert_eq!(&a.levels, &b.levels);
            prop_assert!((a.fraction - b.fraction).abs() <= 1e-12);
        }
    }

    #[test]
    fn generated_episodes_follow_the_composition(comp in composition(2), episodes in 1usize..30, seed in 0u64..1000) {
        let spec = EnvSpec::spread_grid(2, 3).unwrap();
        let comp = comp.with_episodes(episodes);
        let data = generate_dataset(&spec, &comp, seed).unwrap();
        prop_assert_eq!(data.num_episodes(), episodes);
        let mut seen = vec![0usize; comp.components.len()];
        for k in 0..episodes {
            let c = data.metadata.episode_components[k];
            seen[c] += 1;
            for i in 0..2 {
                prop_assert_eq!(data.agent_level(k, i), Some(comp.components[c].levels[i]));
            }
        }
        prop_assert_eq!(seen, comp.episode_counts());
    }

    #[test]
    fn team_reward_is_the_sum_of_oracle_rewards(seed in 0u64..10_000, n in 2usize..5, g in 3usize..7) {
        let spec = EnvSpec::spread_grid(n, g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut state, _) = spec.reset(seed);
        while !state.done {
            let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.n_actions)).collect();
            let phi = spec.oracle_rewards(&state, &actions).unwrap();
            let tr = spec.step(&state, &actions).unwrap();
            prop_assert!((phi.iter().sum::<f64>() - tr.r_tot).abs() <= 1e-12);
            state = tr.state;
        }
    }

    #[test]
    fn discounted_returns_satisfy_the_bellman_recursion(
        r in prop::collection::vec(-5.0f64..5.0, 1..60),
        gamma in 0.0f64..=1.0,
    ) {
        let g = discounted_returns(&r, gamma);
        let last = r.len() - 1;
        prop_assert_eq!(g[last], r[last]);
        for t in 0..last {
            prop_assert!((g[t] - (r[t] + gamma * g[t + 1])).abs() <= 1e-9);
        }
    }
}
