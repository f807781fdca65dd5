//! Deterministic 11×11 gridworlds.
//!
//! Observations are greyscale grids using the intensity code
//! `0.0` empty, `0.5` goal, `0.75` goal destroyer, `1.0` agent (or a lit
//! score cell in row 10). The agent is drawn last, so it hides whatever it
//! stands on.
//!
//! Variants:
//! - `coinflip`: a single goal in the top-left or bottom-right corner.
//! - `twogoals`: goals in both corners.
//! - `goaldestroyer`: a goal in the top-left corner and a destroyer in the
//!   bottom-right one. Touching the destroyer removes every goal for good;
//!   the episode keeps running until the step cap.
//! - `scoregoal`: one goal anywhere in rows 0–9, and row 10 is a score strip
//!   that lights left-to-right as goals are reached.
//! - `scoregoal_nostrip`: identical dynamics, but row 10 always renders dark.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::exec::Exec;

pub const GRID: usize = 11;
pub const CELLS: usize = GRID * GRID;
/// Length of the `concat(s, s')` network input.
pub const INPUT_DIM: usize = 2 * CELLS;
/// Row occupied by the score strip in the score variants.
pub const STRIP_ROW: usize = GRID - 1;

pub const EMPTY: f64 = 0.0;
pub const GOAL: f64 = 0.5;
pub const DESTROYER: f64 = 0.75;
pub const AGENT: f64 = 1.0;
pub const LIT: f64 = 1.0;

pub const DEFAULT_EPISODE_CAP: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn index(self) -> usize {
        self.row * GRID + self.col
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    /// Fixed order used for every tie-break in the crate.
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown action {s:?}")))
    }
}

/// An 11×11 observation, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    cells: [f64; CELLS],
}

impl Default for Grid {
    fn default() -> Self {
        Self::empty()
    }
}

impl Grid {
    pub fn empty() -> Self {
        Self { cells: [EMPTY; CELLS] }
    }

    /// Builds a grid from 121 row-major values, each finite and in `[0, 1]`.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != CELLS {
            return Err(Error::shape("grid", CELLS, values.len()));
        }
        let mut cells = [0.0; CELLS];
        cells.copy_from_slice(values);
        let grid = Self { cells };
        grid.check_range()?;
        Ok(grid)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != GRID {
            return Err(Error::shape("grid rows", GRID, rows.len()));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != GRID) {
            return Err(Error::format(format!("grid row {i}"), format!("{} columns, expected {GRID}", r.len())));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_flat(&flat)
    }

    fn check_range(&self) -> Result<()> {
        if let Some(i) = self.cells.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::format(
                format!("grid cell ({}, {})", i / GRID, i % GRID),
                format!("value {} outside [0, 1]", self.cells[i]),
            ));
        }
        Ok(())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * GRID + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.cells[row * GRID + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.cells
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.cells.chunks(GRID).map(<[f64]>::to_vec).collect()
    }

    /// Number of cells showing a goal.
    pub fn count_value(&self, value: f64) -> usize {
        self.cells.iter().filter(|&&v| v == value).count()
    }
}

impl Serialize for Grid {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.cells.as_slice().serialize(serializer)
    }
}

/// Accepts either 121 flat values or 11 rows of 11.
impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Flat(Vec<f64>),
            Nested(Vec<Vec<f64>>),
        }
        let grid = match Repr::deserialize(deserializer)? {
            Repr::Flat(v) => Grid::from_flat(&v),
            Repr::Nested(rows) => Grid::from_rows(&rows),
        };
        grid.map_err(serde::de::Error::custom)
    }
}

/// Network input `concat(flatten(s), flatten(s'))`.
pub fn encode(s: &Grid, s_prime: &Grid) -> Vec<f64> {
    let mut x = Vec::with_capacity(INPUT_DIM);
    x.extend_from_slice(s.as_slice());
    x.extend_from_slice(s_prime.as_slice());
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "coinflip")]
    CoinFlip,
    #[serde(rename = "twogoals")]
    TwoGoals,
    #[serde(rename = "goaldestroyer")]
    GoalDestroyer,
    #[serde(rename = "scoregoal")]
    ScoreGoal,
    #[serde(rename = "scoregoal_nostrip")]
    ScoreGoalNoStrip,
}

impl EnvKind {
    pub const ALL: [EnvKind; 5] = [
        EnvKind::CoinFlip,
        EnvKind::TwoGoals,
        EnvKind::GoalDestroyer,
        EnvKind::ScoreGoal,
        EnvKind::ScoreGoalNoStrip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CoinFlip => "coinflip",
            EnvKind::TwoGoals => "twogoals",
            EnvKind::GoalDestroyer => "goaldestroyer",
            EnvKind::ScoreGoal => "scoregoal",
            EnvKind::ScoreGoalNoStrip => "scoregoal_nostrip",
        }
    }

    /// Whether row 10 is reserved for the score strip.
    pub fn has_strip_row(self) -> bool {
        matches!(self, EnvKind::ScoreGoal | EnvKind::ScoreGoalNoStrip)
    }

    /// Rows the agent and goals can occupy.
    pub fn playfield_rows(self) -> usize {
        if self.has_strip_row() {
            GRID - 1
        } else {
            GRID
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown environment {s:?}")))
    }
}

/// An environment variant plus its step cap. Episode `i` of a dataset seeded
/// with `seed` is reset with `seed + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub episode_cap: u32,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        Self {
            kind,
            episode_cap: DEFAULT_EPISODE_CAP,
        }
    }

    pub fn with_cap(kind: EnvKind, episode_cap: u32) -> Result<Self> {
        if episode_cap == 0 {
            return Err(Error::usage("episode cap must be at least 1"));
        }
        Ok(Self { kind, episode_cap })
    }

    pub fn episode_seed(base: u64, episode: u64) -> u64 {
        base.wrapping_add(episode)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub spec: EnvSpec,
    pub agent: Pos,
    /// Sorted goal positions; empty once a destroyer has fired.
    pub goals: Vec<Pos>,
    pub destroyer: Option<Pos>,
    pub destroyer_triggered: bool,
    /// Lit score cells, bit `k` for column `k` of row 10.
    pub strip: u16,
    pub steps: u32,
    pub done: bool,
}

impl EnvState {
    /// Builds a state from explicit positions, checking they fit the variant.
    pub fn from_parts(spec: EnvSpec, agent: Pos, mut goals: Vec<Pos>, destroyer: Option<Pos>) -> Result<Self> {
        let rows = spec.kind.playfield_rows();
        let in_field = |p: Pos| p.row < rows && p.col < GRID;
        if !in_field(agent) || !goals.iter().copied().all(in_field) || !destroyer.is_none_or(in_field) {
            return Err(Error::usage("position outside the playfield"));
        }
        goals.sort();
        goals.dedup();
        if destroyer.is_some_and(|d| goals.contains(&d)) {
            return Err(Error::usage("destroyer overlaps a goal"));
        }
        Ok(Self {
            spec,
            agent,
            goals,
            destroyer,
            destroyer_triggered: false,
            strip: 0,
            steps: 0,
            done: false,
        })
    }

    pub fn render(&self) -> Grid {
        let mut g = Grid::empty();
        if self.spec.kind == EnvKind::ScoreGoal {
            for col in 0..GRID {
                if self.strip & (1 << col) != 0 {
                    g.set(STRIP_ROW, col, LIT);
                }
            }
        }
        for goal in &self.goals {
            g.set(goal.row, goal.col, GOAL);
        }
        if let Some(d) = self.destroyer {
            g.set(d.row, d.col, DESTROYER);
        }
        g.set(self.agent.row, self.agent.col, AGENT);
        g
    }

    fn moved(&self, action: Action) -> Pos {
        let (dr, dc) = action.delta();
        let row = self.agent.row as isize + dr;
        let col = self.agent.col as isize + dc;
        let rows = self.spec.kind.playfield_rows() as isize;
        if row < 0 || col < 0 || row >= rows || col >= GRID as isize {
            self.agent
        } else {
            Pos::new(row as usize, col as usize)
        }
    }

    /// Successor ignoring the step cap; used by planning, where time is not
    /// part of the state.
    pub(crate) fn successor(&self, action: Action) -> EnvState {
        let mut next = self.clone();
        next.agent = self.moved(action);
        if true_reward(self, &next) > 0.0 {
            next.done = true;
            if self.spec.kind.has_strip_row() {
                let free = (0..GRID).find(|&c| next.strip & (1 << c) == 0);
                if let Some(c) = free {
                    next.strip |= 1 << c;
                }
            }
        }
        if !next.destroyer_triggered && next.destroyer == Some(next.agent) {
            next.destroyer_triggered = true;
            next.goals.clear();
        }
        next
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMeta {
    pub env: String,
    pub episode: u64,
    pub t: u32,
}

fn default_action() -> Action {
    Action::Up
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Grid,
    #[serde(rename = "a", default = "default_action")]
    pub action: Action,
    #[serde(rename = "sp")]
    pub s_prime: Grid,
    #[serde(rename = "r", default)]
    pub reward: f64,
    #[serde(default)]
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<TransitionMeta>,
}

impl Transition {
    pub fn from_grids(s: Grid, s_prime: Grid) -> Self {
        Self {
            s,
            action: Action::Up,
            s_prime,
            reward: 0.0,
            done: false,
            meta: None,
        }
    }

    pub fn encode(&self) -> Vec<f64> {
        encode(&self.s, &self.s_prime)
    }
}

fn random_free_cell(rng: &mut ChaCha8Rng, kind: EnvKind, taken: &[Pos]) -> Pos {
    let free: Vec<Pos> = (0..kind.playfield_rows())
        .flat_map(|r| (0..GRID).map(move |c| Pos::new(r, c)))
        .filter(|p| !taken.contains(p))
        .collect();
    *free.choose(rng).expect("playfield has free cells")
}

pub const TOP_LEFT: Pos = Pos::new(0, 0);
pub const BOTTOM_RIGHT: Pos = Pos::new(GRID - 1, GRID - 1);

pub fn reset(spec: EnvSpec, episode_seed: u64) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let (goals, destroyer) = match spec.kind {
        EnvKind::CoinFlip => {
            let goal = if rng.gen_bool(0.5) { TOP_LEFT } else { BOTTOM_RIGHT };
            (vec![goal], None)
        }
        EnvKind::TwoGoals => (vec![TOP_LEFT, BOTTOM_RIGHT], None),
        EnvKind::GoalDestroyer => (vec![TOP_LEFT], Some(BOTTOM_RIGHT)),
        EnvKind::ScoreGoal | EnvKind::ScoreGoalNoStrip => {
            (vec![random_free_cell(&mut rng, spec.kind, &[])], None)
        }
    };
    let mut taken = goals.clone();
    taken.extend(destroyer);
    let agent = random_free_cell(&mut rng, spec.kind, &taken);
    EnvState::from_parts(spec, agent, goals, destroyer).expect("reset builds a valid state")
}

/// 1.0 iff the agent in `s_prime` stands on a goal that existed in `s`.
pub fn true_reward(s: &EnvState, s_prime: &EnvState) -> f64 {
    if s.goals.contains(&s_prime.agent) {
        1.0
    } else {
        0.0
    }
}

pub fn step(state: &EnvState, action: Action) -> Result<(Transition, EnvState)> {
    if state.done {
        return Err(Error::usage("cannot step a finished episode"));
    }
    let mut next = state.successor(action);
    next.steps += 1;
    if next.steps >= state.spec.episode_cap {
        next.done = true;
    }
    let transition = Transition {
        s: state.render(),
        action,
        s_prime: next.render(),
        reward: true_reward(state, &next),
        done: next.done,
        meta: None,
    };
    Ok((transition, next))
}

/// Shortest-path distances to the nearest goal over the playfield.
fn goal_distances(state: &EnvState) -> Vec<Option<u32>> {
    let rows = state.spec.kind.playfield_rows();
    let mut dist = vec![None; CELLS];
    let mut queue = VecDeque::new();
    for g in &state.goals {
        dist[g.index()] = Some(0);
        queue.push_back(*g);
    }
    while let Some(p) = queue.pop_front() {
        let d = dist[p.index()].unwrap();
        for a in Action::ALL {
            let probe = EnvState {
                agent: p,
                ..state.clone()
            };
            let q = probe.moved(a);
            if q.row < rows && dist[q.index()].is_none() {
                dist[q.index()] = Some(d + 1);
                queue.push_back(q);
            }
        }
    }
    dist
}

/// Shortest-path distance from the agent to the nearest goal.
pub fn goal_distance(state: &EnvState) -> Option<u32> {
    goal_distances(state)[state.agent.index()]
}

/// First move of a shortest path to the nearest goal, preferring up, down,
/// left, right in that order among equally short paths. The destroyer is
/// treated as empty floor.
pub fn expert_action(state: &EnvState) -> Result<Action> {
    if state.goals.is_empty() {
        return Err(Error::usage("expert policy needs at least one goal"));
    }
    let dist = goal_distances(state);
    let here = dist[state.agent.index()].expect("goal reachable on an open grid");
    Action::ALL
        .into_iter()
        .find(|&a| {
            let q = state.moved(a);
            q != state.agent && dist[q.index()] == Some(here.saturating_sub(1))
        })
        .ok_or_else(|| Error::usage("agent already stands on a goal"))
}

/// Rolls one expert episode from `reset(spec, episode_seed)`.
pub fn expert_episode(spec: EnvSpec, episode_seed: u64) -> Result<Vec<Transition>> {
    let mut state = reset(spec, episode_seed);
    let mut out = Vec::new();
    while !state.done {
        let (t, next) = step(&state, expert_action(&state)?)?;
        out.push(t);
        state = next;
    }
    Ok(out)
}

/// Transition number `index` of the expert episode reset with `episode_seed`.
pub fn expert_transition(spec: EnvSpec, episode_seed: u64, index: usize) -> Result<Transition> {
    let ep = expert_episode(spec, episode_seed)?;
    let len = ep.len();
    ep.into_iter().nth(index).ok_or_else(|| {
        Error::usage(format!(
            "episode {} seed {episode_seed} ends after {len} steps; step {index} does not exist",
            spec.kind
        ))
    })
}

pub fn generate_dataset(spec: EnvSpec, episodes: u64, seed: u64) -> Result<Vec<Transition>> {
    generate_dataset_with(spec, episodes, seed, Exec::default())
}

pub fn generate_dataset_with(spec: EnvSpec, episodes: u64, seed: u64, exec: Exec) -> Result<Vec<Transition>> {
    if episodes == 0 {
        return Err(Error::usage("episodes must be at least 1"));
    }
    let per_episode = exec.map_range(episodes as usize, |i| {
        let mut ep = expert_episode(spec, EnvSpec::episode_seed(seed, i as u64))?;
        for (t, tr) in ep.iter_mut().enumerate() {
            tr.meta = Some(TransitionMeta {
                env: spec.kind.name().to_string(),
                episode: i as u64,
                t: t as u32,
            });
        }
        Ok(ep)
    });
    let mut out = Vec::new();
    for ep in per_episode {
        out.extend(ep?);
    }
    Ok(out)
}

/// Writes one JSON object per line.
pub fn write_dataset(path: &Path, data: &[Transition]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in data {
        let line = serde_json::to_string(t).expect("transition serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Transition>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(kind: EnvKind, agent: Pos, goals: Vec<Pos>, destroyer: Option<Pos>) -> EnvState {
        EnvState::from_parts(EnvSpec::new(kind), agent, goals, destroyer).unwrap()
    }

    #[test]
    fn coinflip_uses_both_corners() {
        let spec = EnvSpec::new(EnvKind::CoinFlip);
        let goals: std::collections::BTreeSet<Vec<Pos>> = (0..32).map(|s| reset(spec, s).goals).collect();
        assert_eq!(goals.len(), 2);
        assert!(goals.contains(&vec![TOP_LEFT]));
        assert!(goals.contains(&vec![BOTTOM_RIGHT]));
    }

    #[test]
    fn twogoals_has_both_corners_every_time() {
        let spec = EnvSpec::new(EnvKind::TwoGoals);
        for seed in 0..20 {
            let st = reset(spec, seed);
            assert_eq!(st.goals, vec![TOP_LEFT, BOTTOM_RIGHT]);
            assert!(!st.goals.contains(&st.agent));
        }
    }

    #[test]
    fn reset_is_deterministic() {
        for kind in EnvKind::ALL {
            let spec = EnvSpec::new(kind);
            assert_eq!(reset(spec, 99), reset(spec, 99));
        }
    }

    #[test]
    fn reaching_goal_pays_and_hides_it() {
        let st = state(EnvKind::CoinFlip, Pos::new(0, 1), vec![TOP_LEFT], None);
        let (t, next) = step(&st, Action::Left).unwrap();
        assert_eq!(t.reward, 1.0);
        assert!(t.done && next.done);
        assert_eq!(t.s_prime.get(0, 0), AGENT);
        assert_eq!(t.s_prime.count_value(GOAL), 0);
        assert!(step(&next, Action::Up).unwrap_err().is_usage());
    }

    #[test]
    fn plain_move() {
        let st = state(EnvKind::CoinFlip, Pos::new(5, 5), vec![TOP_LEFT], None);
        let (t, next) = step(&st, Action::Up).unwrap();
        assert_eq!(t.reward, 0.0);
        assert_eq!(next.agent, Pos::new(4, 5));
        assert!(!t.done);
    }

    #[test]
    fn off_grid_move_is_noop() {
        let st = state(EnvKind::CoinFlip, Pos::new(0, 5), vec![BOTTOM_RIGHT], None);
        let (t, next) = step(&st, Action::Up).unwrap();
        assert_eq!(next.agent, st.agent);
        assert_eq!(t.s, t.s_prime);
        // Row 9 is the bottom of the score playfield.
        let st = state(EnvKind::ScoreGoal, Pos::new(9, 3), vec![Pos::new(0, 0)], None);
        assert_eq!(step(&st, Action::Down).unwrap().1.agent, Pos::new(9, 3));
    }

    #[test]
    fn destroyer_removes_goals_without_ending() {
        let st = state(EnvKind::GoalDestroyer, Pos::new(10, 9), vec![TOP_LEFT], Some(BOTTOM_RIGHT));
        let (t, next) = step(&st, Action::Right).unwrap();
        assert_eq!(t.reward, 0.0);
        assert!(next.goals.is_empty());
        assert!(next.destroyer_triggered && !t.done);
        // Walking to the old goal cell now pays nothing.
        let mut moved = next.clone();
        moved.agent = Pos::new(0, 1);
        let (t, _) = step(&moved, Action::Left).unwrap();
        assert_eq!(t.reward, 0.0);
        assert_eq!(t.s.count_value(GOAL), 0);
    }

    #[test]
    fn step_cap_ends_episode() {
        let spec = EnvSpec::with_cap(EnvKind::CoinFlip, 2).unwrap();
        let st = EnvState::from_parts(spec, Pos::new(5, 5), vec![TOP_LEFT], None).unwrap();
        let (_, a) = step(&st, Action::Right).unwrap();
        let (t, b) = step(&a, Action::Right).unwrap();
        assert!(t.done && b.done);
        assert!(EnvSpec::with_cap(EnvKind::CoinFlip, 0).is_err());
    }

    #[test]
    fn score_strip_lights_on_reward() {
        let st = state(EnvKind::ScoreGoal, Pos::new(3, 4), vec![Pos::new(3, 5)], None);
        let (t, _) = step(&st, Action::Right).unwrap();
        assert_eq!(t.reward, 1.0);
        assert_eq!(t.s.get(STRIP_ROW, 0), 0.0);
        assert_eq!(t.s_prime.get(STRIP_ROW, 0), LIT);
        let st = state(EnvKind::ScoreGoalNoStrip, Pos::new(3, 4), vec![Pos::new(3, 5)], None);
        let (t, _) = step(&st, Action::Right).unwrap();
        assert_eq!(t.reward, 1.0);
        assert_eq!(t.s_prime.get(STRIP_ROW, 0), 0.0);
    }

    #[test]
    fn expert_examples() {
        let st = state(EnvKind::CoinFlip, Pos::new(5, 5), vec![TOP_LEFT], None);
        assert_eq!(expert_action(&st).unwrap(), Action::Up);
        let st = state(EnvKind::CoinFlip, Pos::new(0, 1), vec![TOP_LEFT], None);
        assert_eq!(expert_action(&st).unwrap(), Action::Left);
        let st = state(EnvKind::TwoGoals, Pos::new(1, 1), vec![TOP_LEFT, BOTTOM_RIGHT], None);
        assert_eq!(goal_distance(&st), Some(2));
        assert_eq!(expert_action(&st).unwrap(), Action::Up);
        let mut none = st.clone();
        none.goals.clear();
        assert!(expert_action(&none).unwrap_err().is_usage());
    }

    #[test]
    fn single_episode_has_one_reward() {
        let data = generate_dataset(EnvSpec::new(EnvKind::CoinFlip), 1, 5).unwrap();
        assert_eq!(data.iter().filter(|t| t.reward == 1.0).count(), 1);
        assert_eq!(data.last().unwrap().reward, 1.0);
        assert!(generate_dataset(EnvSpec::new(EnvKind::CoinFlip), 0, 5).is_err());
    }

    #[test]
    fn grid_parses_flat_and_nested() {
        let flat = serde_json::to_string(&vec![0.0; CELLS]).unwrap();
        assert_eq!(serde_json::from_str::<Grid>(&flat).unwrap(), Grid::empty());
        let nested = serde_json::to_string(&vec![vec![0.5; GRID]; GRID]).unwrap();
        assert_eq!(serde_json::from_str::<Grid>(&nested).unwrap().count_value(GOAL), CELLS);
        let short = serde_json::to_string(&vec![vec![0.0; GRID]; GRID - 1]).unwrap();
        assert!(serde_json::from_str::<Grid>(&short).is_err());
        let out_of_range = serde_json::to_string(&vec![1.5; CELLS]).unwrap();
        assert!(serde_json::from_str::<Grid>(&out_of_range).is_err());
    }

    #[test]
    fn names_round_trip() {
        for kind in EnvKind::ALL {
            assert_eq!(kind.name().parse::<EnvKind>().unwrap(), kind);
        }
        for a in Action::ALL {
            assert_eq!(a.name().parse::<Action>().unwrap(), a);
        }
        assert!("nowhere".parse::<EnvKind>().is_err());
    }
}
