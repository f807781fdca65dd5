use proptest::prelude::*;
use reward_lens::counterfactual::{
    reward_timeseries, run_scenario, timeseries_csv, CellEdit, Scenario, ScenarioBase,
};
use reward_lens::gridworld::{generate_dataset, EnvKind, EnvSpec, Grid, Transition, INPUT_DIM, STRIP_ROW};
use reward_lens::interpret::{
    gradient_saliency, occlusion_map, occlusion_map_with, row_mass_fraction, Heatmap, OcclusionConfig,
    OcclusionMetric,
};
use reward_lens::learning::{
    evaluate_model, make_quirk_oracle, make_score_oracle, train_reward_model, TrainConfig,
};
use reward_lens::tensor::init_net;
use reward_lens::{Exec, RewardNet};

fn sample_transitions() -> Vec<Transition> {
    let mut data = generate_dataset(EnvSpec::new(EnvKind::CoinFlip), 4, 9).unwrap();
    data.extend(generate_dataset(EnvSpec::new(EnvKind::ScoreGoal), 2, 9).unwrap());
    data
}

fn scaled(m: &Heatmap, c: f64) -> Heatmap {
    m.map(|row| row.map(|v| v * c))
}

#[test]
fn quirk_oracle_fits_coinflip_exactly() {
    let data = generate_dataset(EnvSpec::new(EnvKind::CoinFlip), 200, 5).unwrap();
    let (mse, acc) = evaluate_model(&make_quirk_oracle(), &data, Exec::default()).unwrap();
    assert_eq!(mse, 0.0);
    assert_eq!(acc, 1.0);
}

#[test]
fn training_is_deterministic_across_exec_modes() {
    let data = generate_dataset(EnvSpec::new(EnvKind::CoinFlip), 60, 3).unwrap();
    let base = TrainConfig {
        hidden: vec![16],
        epochs: 2,
        ..TrainConfig::default()
    };
    let run = |exec| train_reward_model(&data, &TrainConfig { exec, ..base.clone() }).unwrap();
    let (a, ra) = run(Exec::Sequential);
    let (b, rb) = run(Exec::Parallel);
    let (c, _) = run(Exec::Parallel);
    assert_eq!(a.to_checkpoint_json(), b.to_checkpoint_json());
    assert_eq!(b.to_checkpoint_json(), c.to_checkpoint_json());
    assert_eq!(ra, rb);
    let (d, _) = train_reward_model(&data, &TrainConfig { seed: 2, ..base }).unwrap();
    assert_ne!(a.to_checkpoint_json(), d.to_checkpoint_json());
}

#[test]
fn balance_statistics_are_consistent() {
    let data = generate_dataset(EnvSpec::new(EnvKind::TwoGoals), 80, 0).unwrap();
    let (_, report) = train_reward_model(
        &data,
        &TrainConfig {
            hidden: vec![8],
            epochs: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let b = &report.balance;
    assert_eq!(b.positives + b.negatives, data.len());
    assert_eq!(b.train_transitions + b.validation_transitions, data.len());
    assert!(b.train_positives_oversampled as f64 >= 0.25 * b.train_oversampled as f64);
    assert!(b.train_oversampled >= b.train_transitions);
    // Only positives are duplicated, so negatives never exceed the dataset's.
    assert!(b.train_oversampled - b.train_positives_oversampled <= b.negatives);
}

#[test]
fn saliency_ignores_final_bias_shift() {
    let mut net = init_net(&[INPUT_DIM, 24, 1], 4).unwrap();
    let cfg = OcclusionConfig::default();
    let before: Vec<_> = sample_transitions()
        .iter()
        .map(|t| (gradient_saliency(&net, t).unwrap(), occlusion_map(&net, t, &cfg).unwrap()))
        .collect();
    net.shift_output(3.25);
    for (t, (g0, o0)) in sample_transitions().iter().zip(before) {
        let g1 = gradient_saliency(&net, t).unwrap();
        assert_eq!(g1, g0);
        let o1 = occlusion_map(&net, t, &cfg).unwrap();
        for (a, b) in o0.map_s.iter().chain(&o0.map_sprime).flatten().zip(o1.map_s.iter().chain(&o1.map_sprime).flatten()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn saliency_scales_with_the_output_layer() {
    let net = init_net(&[INPUT_DIM, 24, 1], 8).unwrap();
    let cfg = OcclusionConfig::default();
    for c in [0.25, 2.0, 8.0] {
        let mut big = net.clone();
        big.scale_output(c);
        for t in sample_transitions() {
            let (g0, g1) = (gradient_saliency(&net, &t).unwrap(), gradient_saliency(&big, &t).unwrap());
            assert_eq!(g1.map_s, scaled(&g0.map_s, c));
            assert_eq!(g1.map_sprime, scaled(&g0.map_sprime, c));
            assert_eq!(g1.mass_ratio, g0.mass_ratio);
            let (o0, o1) = (occlusion_map(&net, &t, &cfg).unwrap(), occlusion_map(&big, &t, &cfg).unwrap());
            assert_eq!(o1.map_s, scaled(&o0.map_s, c));
            assert_eq!(o1.map_sprime, scaled(&o0.map_sprime, c));
            assert_eq!(o1.mass_ratio, o0.mass_ratio);
        }
    }
}

#[test]
fn occlusion_is_independent_of_exec() {
    let net = make_score_oracle();
    let cfg = OcclusionConfig {
        metric: OcclusionMetric::Squared,
        ..OcclusionConfig::default()
    };
    for t in sample_transitions() {
        assert_eq!(
            occlusion_map_with(&net, &t, &cfg, Exec::Sequential).unwrap(),
            occlusion_map_with(&net, &t, &cfg, Exec::Parallel).unwrap()
        );
    }
}

#[test]
fn narrower_masks_leak_less() {
    let net = make_score_oracle();
    let t = generate_dataset(EnvSpec::new(EnvKind::ScoreGoal), 1, 2)
        .unwrap()
        .into_iter()
        .find(|t| t.reward == 1.0)
        .unwrap();
    let mut last = 0.0;
    for sigma_mask in [3.0, 2.0, 1.5, 1.0, 0.7, 0.5, 0.3] {
        let cfg = OcclusionConfig {
            sigma_mask,
            ..OcclusionConfig::default()
        };
        let p = occlusion_map(&net, &t, &cfg).unwrap();
        let f = row_mass_fraction(&p.map_sprime, STRIP_ROW).unwrap();
        assert!(f > last, "sigma {sigma_mask}: strip fraction {f} after {last}");
        last = f;
    }
    assert!(last > 0.99);
}

#[test]
fn quirk_oracle_has_no_saliency_on_s() {
    let net = make_quirk_oracle();
    for t in generate_dataset(EnvSpec::new(EnvKind::TwoGoals), 10, 1).unwrap() {
        let g = gradient_saliency(&net, &t).unwrap();
        assert!(g.map_s.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(g.mass_ratio, 1.0);
    }
}

fn edit_strategy() -> impl Strategy<Value = Vec<CellEdit>> {
    prop::collection::vec(
        (0usize..11, 0usize..11, prop::sample::select(vec![0.0, 0.5, 0.75, 1.0])).prop_map(|(row, col, value)| CellEdit {
            row,
            col,
            value,
        }),
        0..6,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenario_deltas_are_antisymmetric(seed in 0u64..500, step in 0usize..3, edits_s in edit_strategy(), edits_sp in edit_strategy()) {
        let net = make_quirk_oracle();
        let base = ScenarioBase::Rollout { env: EnvKind::TwoGoals, seed, step };
        prop_assume!(base.resolve().is_ok());
        let forward = Scenario { name: None, base, edits_s, edits_sp, expectation: None };
        let (cs, csp) = forward.counterfactual_grids().unwrap();
        let (s, sp) = forward.base.resolve().unwrap();
        let reverse = Scenario {
            name: None,
            base: ScenarioBase::Grids { s: cs, sp: csp },
            edits_s: diff_edits(&s),
            edits_sp: diff_edits(&sp),
            expectation: None,
        };
        let a = run_scenario(&net, &forward).unwrap();
        let b = run_scenario(&net, &reverse).unwrap();
        prop_assert_eq!(a.delta, -b.delta);
    }

    #[test]
    fn empty_edits_give_zero_delta(seed in 0u64..500) {
        let sc = Scenario {
            name: None,
            base: ScenarioBase::Rollout { env: EnvKind::CoinFlip, seed, step: 0 },
            edits_s: vec![],
            edits_sp: vec![],
            expectation: None,
        };
        prop_assert_eq!(run_scenario(&make_score_oracle(), &sc).unwrap().delta, 0.0);
    }
}

/// Edits that overwrite every cell with `target`'s values.
fn diff_edits(target: &Grid) -> Vec<CellEdit> {
    (0..11)
        .flat_map(|row| (0..11).map(move |col| CellEdit { row, col, value: target.get(row, col) }))
        .collect()
}

fn check_series(net: &RewardNet, kind: EnvKind, seed: u64) -> Vec<(f64, f64)> {
    let spec = EnvSpec::new(kind);
    let points = reward_timeseries(net, spec, seed).unwrap();
    let episode = reward_lens::gridworld::expert_episode(spec, seed).unwrap();
    assert_eq!(points.len(), episode.len());
    for (p, t) in points.iter().zip(&episode) {
        assert_eq!(p.predicted.to_bits(), net.forward(&t.encode()).unwrap().to_bits());
        assert_eq!(p.true_reward, t.reward);
    }
    points.iter().map(|p| (p.predicted, p.true_reward)).collect()
}

#[test]
fn oracle_time_series() {
    for seed in 0..10 {
        for (pred, truth) in check_series(&make_quirk_oracle(), EnvKind::CoinFlip, seed) {
            assert_eq!(pred, truth);
        }
        for (pred, truth) in check_series(&make_score_oracle(), EnvKind::ScoreGoal, seed) {
            assert_eq!(pred, truth);
        }
        let nostrip = check_series(&make_score_oracle(), EnvKind::ScoreGoalNoStrip, seed);
        assert!(nostrip.iter().all(|&(pred, _)| pred == 0.0));
        assert!(nostrip.iter().any(|&(_, truth)| truth == 1.0));
    }
}

#[test]
fn time_series_csv_has_one_row_per_step() {
    let points = reward_timeseries(&make_score_oracle(), EnvSpec::new(EnvKind::ScoreGoal), 4).unwrap();
    let csv = timeseries_csv(&points);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,predicted,true"));
    assert_eq!(lines.count(), points.len());
}
