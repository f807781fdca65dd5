use proptest::prelude::*;
use reward_lens::gridworld::{
    expert_episode, generate_dataset, generate_dataset_with, goal_distance, read_dataset, reset, write_dataset,
    EnvKind, EnvSpec, GRID, STRIP_ROW,
};
use reward_lens::Exec;

fn cells_changed(t: &reward_lens::Transition) -> usize {
    t.s.as_slice().iter().zip(t.s_prime.as_slice()).filter(|(a, b)| a != b).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn episodes_reward_once_and_change_few_cells(seed in any::<u64>(), kind in prop::sample::select(EnvKind::ALL.to_vec())) {
        let spec = EnvSpec::new(kind);
        let ep = expert_episode(spec, seed).unwrap();
        let rewards = ep.iter().filter(|t| t.reward == 1.0).count();
        prop_assert!(rewards <= 1);
        if matches!(kind, EnvKind::CoinFlip | EnvKind::TwoGoals | EnvKind::ScoreGoal) && ep.len() < spec.episode_cap as usize {
            prop_assert_eq!(rewards, 1);
        }
        for t in &ep {
            prop_assert!(cells_changed(t) <= 3, "{} cells changed", cells_changed(t));
        }
    }

    #[test]
    fn coinflip_expert_follows_shortest_path(seed in any::<u64>()) {
        let spec = EnvSpec::new(EnvKind::CoinFlip);
        let start = reset(spec, seed);
        let ep = expert_episode(spec, seed).unwrap();
        prop_assert_eq!(Some(ep.len() as u32), goal_distance(&start));
    }

    #[test]
    fn score_variants_share_playfields(seed in any::<u64>()) {
        let with = expert_episode(EnvSpec::new(EnvKind::ScoreGoal), seed).unwrap();
        let without = expert_episode(EnvSpec::new(EnvKind::ScoreGoalNoStrip), seed).unwrap();
        prop_assert_eq!(with.len(), without.len());
        for (a, b) in with.iter().zip(&without) {
            prop_assert_eq!(a.action, b.action);
            prop_assert_eq!(a.reward, b.reward);
            for (grid_a, grid_b) in [(&a.s, &b.s), (&a.s_prime, &b.s_prime)] {
                for r in 0..STRIP_ROW {
                    for c in 0..GRID {
                        prop_assert_eq!(grid_a.get(r, c), grid_b.get(r, c));
                    }
                }
                for c in 0..GRID {
                    prop_assert_eq!(grid_b.get(STRIP_ROW, c), 0.0);
                }
            }
        }
    }
}

#[test]
fn datasets_are_reproducible_across_exec_modes() {
    let spec = EnvSpec::new(EnvKind::GoalDestroyer);
    let a = generate_dataset_with(spec, 300, 42, Exec::Sequential).unwrap();
    let b = generate_dataset_with(spec, 300, 42, Exec::Parallel).unwrap();
    let c = generate_dataset(spec, 300, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let episodes: Vec<u64> = a.iter().map(|t| t.meta.as_ref().unwrap().episode).collect();
    assert!(episodes.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn episode_seeds_are_offsets_of_the_base() {
    let spec = EnvSpec::new(EnvKind::CoinFlip);
    let data = generate_dataset(spec, 5, 100).unwrap();
    let fourth: Vec<_> = data.iter().filter(|t| t.meta.as_ref().unwrap().episode == 3).cloned().collect();
    let direct = expert_episode(spec, 103).unwrap();
    assert_eq!(fourth.len(), direct.len());
    for (a, b) in fourth.iter().zip(&direct) {
        assert_eq!((&a.s, &a.s_prime, a.action), (&b.s, &b.s_prime, b.action));
    }
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    let data = generate_dataset(EnvSpec::new(EnvKind::ScoreGoal), 20, 7).unwrap();
    write_dataset(&path, &data).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), data);
}

#[test]
fn malformed_dataset_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let data = generate_dataset(EnvSpec::new(EnvKind::CoinFlip), 1, 0).unwrap();
    let mut text = serde_json::to_string(&data[0]).unwrap();
    text.push_str("\n{\"s\": [1, 2]}\n");
    std::fs::write(&path, text).unwrap();
    let err = read_dataset(&path).unwrap_err().to_string();
    assert!(err.contains("bad.jsonl:2"), "{err}");
}

#[test]
fn missing_dataset_names_the_path() {
    let err = read_dataset(std::path::Path::new("/nonexistent/missing.jsonl")).unwrap_err();
    assert!(err.to_string().contains("missing.jsonl"));
    assert!(!err.is_usage());
}
