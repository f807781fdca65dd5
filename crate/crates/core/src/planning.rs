//! Exact tabular planning over enumerated gridworld states, policy rollouts
//! scored on the true reward, and reward-transfer experiments.
//!
//! The step counter is not part of a planning state, so values are those of
//! the infinite-horizon discounted problem; terminal (goal-reached) states
//! absorb with value 0. Rollouts still stop at the episode cap.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridworld::{
    encode, generate_dataset_with, reset, step, true_reward, Action, EnvKind, EnvSpec, EnvState, Pos, BOTTOM_RIGHT,
    GRID, TOP_LEFT,
};
use crate::tensor::RewardNet;

pub const DEFAULT_GAMMA: f64 = 0.95;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Textual key of a planning state, e.g. `a3,4|g0,0|d-|x0|s0|t0`.
pub fn state_key(st: &EnvState) -> String {
    let mut k = format!("a{},{}|g", st.agent.row, st.agent.col);
    for (i, g) in st.goals.iter().enumerate() {
        if i > 0 {
            k.push(';');
        }
        let _ = write!(k, "{},{}", g.row, g.col);
    }
    match st.destroyer {
        Some(d) => {
            let _ = write!(k, "|d{},{}", d.row, d.col);
        }
        None => k.push_str("|d-"),
    }
    let _ = write!(
        k,
        "|x{}|s{}|t{}",
        u8::from(st.destroyer_triggered),
        st.strip,
        u8::from(st.done)
    );
    k
}

/// Reachable states of a variant and their deterministic successors.
#[derive(Debug, Clone)]
pub struct StateSpace {
    spec: EnvSpec,
    states: Vec<EnvState>,
    index: HashMap<EnvState, usize>,
    next: Vec<[usize; 4]>,
    /// Number of leading entries of `states` that are possible reset states.
    n_initial: usize,
}

fn all_cells(rows: usize) -> impl Iterator<Item = Pos> {
    (0..rows).flat_map(|r| (0..GRID).map(move |c| Pos::new(r, c)))
}

/// Every state `reset` can produce for `spec`.
fn initial_states(spec: EnvSpec) -> Vec<EnvState> {
    let rows = spec.kind.playfield_rows();
    let layouts: Vec<(Vec<Pos>, Option<Pos>)> = match spec.kind {
        EnvKind::CoinFlip => vec![(vec![TOP_LEFT], None), (vec![BOTTOM_RIGHT], None)],
        EnvKind::TwoGoals => vec![(vec![TOP_LEFT, BOTTOM_RIGHT], None)],
        EnvKind::GoalDestroyer => vec![(vec![TOP_LEFT], Some(BOTTOM_RIGHT))],
        EnvKind::ScoreGoal | EnvKind::ScoreGoalNoStrip => all_cells(rows).map(|g| (vec![g], None)).collect(),
    };
    let mut out = Vec::new();
    for (goals, destroyer) in layouts {
        for agent in all_cells(rows) {
            if goals.contains(&agent) || destroyer == Some(agent) {
                continue;
            }
            out.push(EnvState::from_parts(spec, agent, goals.clone(), destroyer).expect("valid layout"));
        }
    }
    out
}

impl StateSpace {
    pub fn enumerate(spec: EnvSpec) -> Self {
        let mut states = initial_states(spec);
        let n_initial = states.len();
        let mut index: HashMap<EnvState, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let mut next = Vec::new();
        let mut cursor = 0;
        while cursor < states.len() {
            let mut row = [cursor; 4];
            if !states[cursor].done {
                for (k, a) in Action::ALL.into_iter().enumerate() {
                    let succ = states[cursor].successor(a);
                    let id = *index.entry(succ.clone()).or_insert_with(|| {
                        states.push(succ);
                        states.len() - 1
                    });
                    row[k] = id;
                }
            }
            next.push(row);
            cursor += 1;
        }
        Self {
            spec,
            states,
            index,
            next,
            n_initial,
        }
    }

    pub fn spec(&self) -> EnvSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[EnvState] {
        &self.states
    }

    pub fn initial_states(&self) -> &[EnvState] {
        &self.states[..self.n_initial]
    }

    pub fn is_terminal(&self, i: usize) -> bool {
        self.states[i].done
    }

    pub fn successor(&self, i: usize, a: Action) -> usize {
        self.next[i][a as usize]
    }

    /// Index of a (step-count agnostic) state.
    pub fn index_of(&self, st: &EnvState) -> Option<usize> {
        let key = EnvState {
            steps: 0,
            done: st.done && st.goals.contains(&st.agent),
            ..st.clone()
        };
        self.index.get(&key).copied()
    }
}

/// What the planner optimizes.
#[derive(Debug, Clone)]
pub enum RewardSource<'a> {
    True,
    Model { net: &'a RewardNet, id: String },
    Scaled { inner: Box<RewardSource<'a>>, factor: f64 },
}

impl<'a> RewardSource<'a> {
    pub fn model(net: &'a RewardNet, id: impl Into<String>) -> Self {
        RewardSource::Model { net, id: id.into() }
    }

    pub fn scaled(self, factor: f64) -> Self {
        RewardSource::Scaled {
            inner: Box::new(self),
            factor,
        }
    }

    pub fn tag(&self) -> String {
        match self {
            RewardSource::True => "true".to_string(),
            RewardSource::Model { id, .. } => format!("model:{id}"),
            RewardSource::Scaled { inner, factor } => format!("{factor}*{}", inner.tag()),
        }
    }

    pub fn reward(&self, s: &EnvState, s_prime: &EnvState) -> Result<f64> {
        match self {
            RewardSource::True => Ok(true_reward(s, s_prime)),
            RewardSource::Model { net, .. } => net.forward(&encode(&s.render(), &s_prime.render())),
            RewardSource::Scaled { inner, factor } => Ok(factor * inner.reward(s, s_prime)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub gamma: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            tol: DEFAULT_TOLERANCE,
            max_sweeps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TabularPolicy {
    pub env: EnvKind,
    pub gamma: f64,
    pub reward_source: String,
    /// Non-terminal state keys with their greedy action and value.
    pub actions: BTreeMap<String, Action>,
    pub values: BTreeMap<String, f64>,
    /// Sweeps run before the value change dropped below tolerance.
    pub sweeps: usize,
    /// Largest `|T V - V|` over states after convergence.
    pub bellman_residual: f64,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    env: EnvKind,
    gamma: f64,
    actions: BTreeMap<String, Action>,
    values: BTreeMap<String, f64>,
    reward_source: String,
}

impl TabularPolicy {
    pub fn action_for(&self, st: &EnvState) -> Result<Action> {
        let key = state_key(&EnvState { steps: 0, ..st.clone() });
        self.actions
            .get(&key)
            .copied()
            .ok_or_else(|| Error::usage(format!("policy has no action for state {key}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PolicyFile {
            env: self.env,
            gamma: self.gamma,
            actions: self.actions.clone(),
            values: self.values.clone(),
            reward_source: self.reward_source.clone(),
        })
        .expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: PolicyFile = serde_json::from_str(text).map_err(|e| Error::format("policy", e.to_string()))?;
        Ok(Self {
            env: f.env,
            gamma: f.gamma,
            reward_source: f.reward_source,
            actions: f.actions,
            values: f.values,
            sweeps: 0,
            bellman_residual: f64::NAN,
        })
    }
}

/// Index of the best entry; near-ties (relative 1e-9) go to the earliest.
fn greedy(q: &[f64; 4]) -> usize {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-9 * scale;
    q.iter().position(|&v| v >= best - eps).expect("four actions")
}

pub fn value_iteration(space: &StateSpace, source: &RewardSource<'_>, cfg: &PlanConfig) -> Result<TabularPolicy> {
    value_iteration_with(space, source, cfg, Exec::default())
}

pub fn value_iteration_with(
    space: &StateSpace,
    source: &RewardSource<'_>,
    cfg: &PlanConfig,
    exec: Exec,
) -> Result<TabularPolicy> {
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        return Err(Error::usage("discount must lie in (0, 1)"));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::usage("tolerance must be positive"));
    }
    let n = space.len();
    // One reward per (state, action), computed once.
    let rewards: Vec<Result<[f64; 4]>> = exec.map_range(n, |i| {
        let mut r = [0.0; 4];
        if !space.is_terminal(i) {
            for (k, a) in Action::ALL.into_iter().enumerate() {
                r[k] = source.reward(&space.states[i], &space.states[space.successor(i, a)])?;
            }
        }
        Ok(r)
    });
    let rewards: Vec<[f64; 4]> = rewards.into_iter().collect::<Result<_>>()?;

    let q_values = |values: &[f64], i: usize| -> [f64; 4] {
        let mut q = rewards[i];
        for (k, qk) in q.iter_mut().enumerate() {
            let j = space.next[i][k];
            if !space.is_terminal(j) {
                *qk += cfg.gamma * values[j];
            }
        }
        q
    };

    let mut values = vec![0.0; n];
    let mut sweeps = 0;
    loop {
        let mut change = 0.0f64;
        let updated: Vec<f64> = (0..n)
            .map(|i| {
                if space.is_terminal(i) {
                    0.0
                } else {
                    q_values(&values, i).into_iter().fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        for (v, u) in values.iter().zip(&updated) {
            change = change.max((v - u).abs());
        }
        values = updated;
        sweeps += 1;
        if change < cfg.tol {
            break;
        }
        if sweeps >= cfg.max_sweeps {
            return Err(Error::usage(format!("value iteration did not converge in {sweeps} sweeps")));
        }
    }

    let mut actions = BTreeMap::new();
    let mut value_map = BTreeMap::new();
    let mut residual = 0.0f64;
    for i in (0..n).filter(|&i| !space.is_terminal(i)) {
        let q = q_values(&values, i);
        let best = greedy(&q);
        residual = residual.max((q.into_iter().fold(f64::NEG_INFINITY, f64::max) - values[i]).abs());
        let key = state_key(&space.states[i]);
        actions.insert(key.clone(), Action::ALL[best]);
        value_map.insert(key, values[i]);
    }
    Ok(TabularPolicy {
        env: space.spec.kind,
        gamma: cfg.gamma,
        reward_source: source.tag(),
        actions,
        values: value_map,
        sweeps,
        bellman_residual: residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub mean: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    pub episodes: u64,
}

impl ReturnStats {
    fn from_returns(returns: &[f64]) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = if returns.len() > 1 {
            returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n).sqrt(),
            episodes: returns.len() as u64,
        }
    }
}

fn rollout_returns<F>(spec: EnvSpec, episodes: u64, seed: u64, exec: Exec, choose: F) -> Result<ReturnStats>
where
    F: Fn(&EnvState, &mut ChaCha8Rng) -> Result<Action> + Send + Sync,
{
    if episodes == 0 {
        return Err(Error::usage("episodes must be at least 1"));
    }
    let returns = exec.map_range(episodes as usize, |i| -> Result<f64> {
        let episode_seed = EnvSpec::episode_seed(seed, i as u64);
        let mut state = reset(spec, episode_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut total = 0.0;
        while !state.done {
            let (t, next) = step(&state, choose(&state, &mut rng)?)?;
            total += t.reward;
            state = next;
        }
        Ok(total)
    });
    let returns: Vec<f64> = returns.into_iter().collect::<Result<_>>()?;
    Ok(ReturnStats::from_returns(&returns))
}

/// Mean true return of the greedy policy over `episodes` resets.
pub fn evaluate_policy(policy: &TabularPolicy, spec: EnvSpec, episodes: u64, seed: u64) -> Result<ReturnStats> {
    evaluate_policy_with(policy, spec, episodes, seed, Exec::default())
}

pub fn evaluate_policy_with(
    policy: &TabularPolicy,
    spec: EnvSpec,
    episodes: u64,
    seed: u64,
    exec: Exec,
) -> Result<ReturnStats> {
    if policy.env != spec.kind {
        return Err(Error::usage(format!(
            "policy was planned for {} but evaluation asks for {}",
            policy.env, spec.kind
        )));
    }
    rollout_returns(spec, episodes, seed, exec, |st, _| policy.action_for(st))
}

/// Baseline: uniformly random actions, same resets as `evaluate_policy`.
pub fn evaluate_random_policy(spec: EnvSpec, episodes: u64, seed: u64) -> Result<ReturnStats> {
    rollout_returns(spec, episodes, seed, Exec::default(), |_, rng| {
        Ok(Action::ALL[rng.gen_range(0..4)])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputStats {
    pub env: EnvKind,
    pub goal_transitions: usize,
    pub other_transitions: usize,
    /// Mean model output on transitions that reach a goal.
    pub mean_goal_output: f64,
    pub mean_other_output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReturns {
    pub model_policy: ReturnStats,
    pub true_policy: ReturnStats,
    pub random_policy: ReturnStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub model: String,
    pub train: OutputStats,
    pub eval: OutputStats,
    pub goal_output_shift: f64,
    pub other_output_shift: f64,
    /// Returns on the evaluation variant, scored with the true reward.
    pub returns: TransferReturns,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    /// Expert episodes used for output statistics in each variant.
    pub stat_episodes: u64,
    /// Rollouts per policy for return estimates.
    pub eval_episodes: u64,
    pub seed: u64,
    pub plan: PlanConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            stat_episodes: 200,
            eval_episodes: 1000,
            seed: 0,
            plan: PlanConfig::default(),
        }
    }
}

pub fn output_stats(net: &RewardNet, spec: EnvSpec, episodes: u64, seed: u64) -> Result<OutputStats> {
    let data = generate_dataset_with(spec, episodes, seed, Exec::default())?;
    let outputs = Exec::default().map_slice(&data, |t| net.forward(&t.encode()));
    let (mut goal, mut other) = ((0usize, 0.0), (0usize, 0.0));
    for (t, y) in data.iter().zip(outputs) {
        let y = y?;
        let bucket = if t.reward > 0.5 { &mut goal } else { &mut other };
        bucket.0 += 1;
        bucket.1 += y;
    }
    let mean = |(n, s): (usize, f64)| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(OutputStats {
        env: spec.kind,
        goal_transitions: goal.0,
        other_transitions: other.0,
        mean_goal_output: mean(goal),
        mean_other_output: mean(other),
    })
}

/// Compares a model's outputs on its training variant with those on a shifted
/// variant, and the true returns of policies planned under it there.
pub fn transfer_experiment(
    net: &RewardNet,
    model_id: &str,
    train_spec: EnvSpec,
    eval_spec: EnvSpec,
    cfg: &TransferConfig,
) -> Result<TransferReport> {
    let train = output_stats(net, train_spec, cfg.stat_episodes, cfg.seed)?;
    let eval = output_stats(net, eval_spec, cfg.stat_episodes, cfg.seed)?;
    let space = StateSpace::enumerate(eval_spec);
    let model_policy = value_iteration(&space, &RewardSource::model(net, model_id), &cfg.plan)?;
    let true_policy = value_iteration(&space, &RewardSource::True, &cfg.plan)?;
    let returns = TransferReturns {
        model_policy: evaluate_policy(&model_policy, eval_spec, cfg.eval_episodes, cfg.seed)?,
        true_policy: evaluate_policy(&true_policy, eval_spec, cfg.eval_episodes, cfg.seed)?,
        random_policy: evaluate_random_policy(eval_spec, cfg.eval_episodes, cfg.seed)?,
    };
    Ok(TransferReport {
        model: model_id.to_string(),
        goal_output_shift: eval.mean_goal_output - train.mean_goal_output,
        other_output_shift: eval.mean_other_output - train.mean_other_output,
        train,
        eval,
        returns,
        note: "policies are planned exactly, so returns carry only evaluation-episode sampling error".to_string(),
    })
}
