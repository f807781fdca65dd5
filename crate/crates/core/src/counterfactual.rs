//! Hand-crafted counterfactual probes and per-episode reward traces.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{encode, expert_action, expert_transition, reset, step, EnvKind, EnvSpec, Grid, GRID};
use crate::tensor::RewardNet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEdit {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Returns a copy of `grid` with `edits` applied in order.
pub fn apply_edits(grid: &Grid, edits: &[CellEdit]) -> Result<Grid> {
    let mut out = grid.clone();
    for (i, e) in edits.iter().enumerate() {
        if e.row >= GRID || e.col >= GRID {
            return Err(Error::usage(format!("edit {i}: cell ({}, {}) is off the grid", e.row, e.col)));
        }
        if !(0.0..=1.0).contains(&e.value) {
            return Err(Error::usage(format!("edit {i}: value {} outside [0, 1]", e.value)));
        }
        out.set(e.row, e.col, e.value);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioBase {
    Grids {
        s: Grid,
        sp: Grid,
    },
    /// Transition number `step` of the expert episode reset with `seed`.
    Rollout {
        env: EnvKind,
        seed: u64,
        step: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = "<=", alias = "≤")]
    LessEq,
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = ">=", alias = "≥")]
    GreaterEq,
    #[serde(rename = "≈", alias = "~", alias = "approx")]
    Approx,
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Less => "<",
            Comparator::LessEq => "<=",
            Comparator::Greater => ">",
            Comparator::GreaterEq => ">=",
            Comparator::Approx => "≈",
        })
    }
}

pub const DEFAULT_APPROX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    #[serde(rename = "cmp")]
    pub comparator: Comparator,
    pub value: f64,
    #[serde(default, rename = "tol", skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl Expectation {
    pub fn holds(&self, reward: f64) -> bool {
        match self.comparator {
            Comparator::Less => reward < self.value,
            Comparator::LessEq => reward <= self.value,
            Comparator::Greater => reward > self.value,
            Comparator::GreaterEq => reward >= self.value,
            Comparator::Approx => (reward - self.value).abs() <= self.tolerance.unwrap_or(DEFAULT_APPROX_TOLERANCE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub base: ScenarioBase,
    #[serde(default)]
    pub edits_s: Vec<CellEdit>,
    #[serde(default)]
    pub edits_sp: Vec<CellEdit>,
    #[serde(default, rename = "expect", skip_serializing_if = "Option::is_none")]
    pub expectation: Option<Expectation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub base_reward: f64,
    pub counterfactual_reward: f64,
    /// `counterfactual_reward - base_reward`.
    pub delta: f64,
    pub verdict: Verdict,
}

impl ScenarioBase {
    pub fn resolve(&self) -> Result<(Grid, Grid)> {
        match self {
            ScenarioBase::Grids { s, sp } => Ok((s.clone(), sp.clone())),
            ScenarioBase::Rollout { env, seed, step } => {
                let t = expert_transition(EnvSpec::new(*env), *seed, *step)?;
                Ok((t.s, t.s_prime))
            }
        }
    }
}

impl Scenario {
    /// The edited `(s, s')` pair.
    pub fn counterfactual_grids(&self) -> Result<(Grid, Grid)> {
        let (s, sp) = self.base.resolve()?;
        Ok((apply_edits(&s, &self.edits_s)?, apply_edits(&sp, &self.edits_sp)?))
    }
}

pub fn run_scenario(net: &RewardNet, scenario: &Scenario) -> Result<ScenarioReport> {
    let (s, sp) = scenario.base.resolve()?;
    let cs = apply_edits(&s, &scenario.edits_s)?;
    let csp = apply_edits(&sp, &scenario.edits_sp)?;
    let base_reward = net.forward(&encode(&s, &sp))?;
    let counterfactual_reward = net.forward(&encode(&cs, &csp))?;
    let verdict = match &scenario.expectation {
        Some(e) if e.holds(counterfactual_reward) => Verdict::Pass,
        Some(_) => Verdict::Fail,
        None => Verdict::None,
    };
    Ok(ScenarioReport {
        name: scenario.name.clone(),
        base_reward,
        counterfactual_reward,
        delta: counterfactual_reward - base_reward,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub step: usize,
    pub predicted: f64,
    #[serde(rename = "true")]
    pub true_reward: f64,
}

/// Predicted and true reward along one expert episode.
pub fn reward_timeseries(net: &RewardNet, spec: EnvSpec, episode_seed: u64) -> Result<Vec<TimePoint>> {
    let mut state = reset(spec, episode_seed);
    let mut out = Vec::new();
    while !state.done {
        let (t, next) = step(&state, expert_action(&state)?)?;
        out.push(TimePoint {
            step: out.len(),
            predicted: net.forward(&t.encode())?,
            true_reward: t.reward,
        });
        state = next;
    }
    Ok(out)
}

pub fn timeseries_csv(points: &[TimePoint]) -> String {
    let mut out = String::from("step,predicted,true\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.step, p.predicted, p.true_reward));
    }
    out
}
