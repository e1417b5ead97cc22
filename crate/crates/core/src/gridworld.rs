//! Apples-and-fires grid world with an egocentric 5x5x2 view.
//!
//! Observation layout: `obs[plane * 25 + row * 5 + col]`, plane 0 = apples,
//! plane 1 = fires, row 0 at the top of the window, agent at `(2, 2)`.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::nn::{GRID_ACTIONS, GRID_CELLS, GRID_OBS_LEN, GRID_WINDOW};
use crate::rng::rng_from_seed;

pub const STEP_REWARD: f64 = 1.0;
pub const APPLE_REWARD: f64 = 6.0;
pub const FIRE_REWARD: f64 = -8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("infeasible grid configuration: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub width: usize,
    pub n_apples: usize,
    pub n_fires: usize,
    pub window: usize,
    pub min_steps: usize,
    pub max_steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 12,
            n_apples: 30,
            n_fires: 30,
            window: GRID_WINDOW,
            min_steps: 10,
            max_steps: 100,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.width == 0 {
            return Err(GridError::Infeasible("width must be positive".into()));
        }
        // The agent needs an empty starting cell.
        if self.n_apples + self.n_fires >= self.width * self.width {
            return Err(GridError::Infeasible(format!(
                "{} apples + {} fires leave no free cell on a {}x{} grid",
                self.n_apples, self.n_fires, self.width, self.width
            )));
        }
        if self.window != GRID_WINDOW {
            return Err(GridError::Infeasible(format!(
                "only a {GRID_WINDOW}x{GRID_WINDOW} window is supported"
            )));
        }
        if self.min_steps == 0 || self.min_steps > self.max_steps {
            return Err(GridError::Infeasible(format!(
                "episode length range [{}, {}] is empty",
                self.min_steps, self.max_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    NoOp = 4,
}

impl GridAction {
    pub const ALL: [GridAction; GRID_ACTIONS] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
        GridAction::NoOp,
    ];
    pub const MOVES: [GridAction; 4] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Row/column displacement.
    pub fn delta(self) -> (isize, isize) {
        match self {
            GridAction::Up => (-1, 0),
            GridAction::Down => (1, 0),
            GridAction::Left => (0, -1),
            GridAction::Right => (0, 1),
            GridAction::NoOp => (0, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GridAction::Up => "up",
            GridAction::Down => "down",
            GridAction::Left => "left",
            GridAction::Right => "right",
            GridAction::NoOp => "noop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub width: usize,
    pub apples: Vec<bool>,
    pub fires: Vec<bool>,
    pub agent: (usize, usize),
    /// Set when the agent stands on an apple it has encountered but not yet
    /// consumed; the apple disappears on the next step.
    pub pending_consume: bool,
    pub steps_remaining: usize,
}

impl GridState {
    pub fn empty(width: usize, agent: (usize, usize), steps: usize) -> Self {
        Self {
            width,
            apples: vec![false; width * width],
            fires: vec![false; width * width],
            agent,
            pending_consume: false,
            steps_remaining: steps,
        }
    }

    #[inline]
    pub fn idx(&self, r: usize, c: usize) -> usize {
        r * self.width + c
    }

    pub fn apple_count(&self) -> usize {
        self.apples.iter().filter(|&&a| a).count()
    }

    pub fn fire_count(&self) -> usize {
        self.fires.iter().filter(|&&f| f).count()
    }

    /// Destination of `action` from the current position; walls block.
    pub fn destination(&self, action: GridAction) -> (usize, usize) {
        let (dr, dc) = action.delta();
        let r = self.agent.0 as isize + dr;
        let c = self.agent.1 as isize + dc;
        if r < 0 || c < 0 || r >= self.width as isize || c >= self.width as isize {
            self.agent
        } else {
            (r as usize, c as usize)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridStep {
    pub reward: f64,
    pub done: bool,
    pub apple_encountered: bool,
    pub fire_encountered: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridWorld {
    pub config: GridConfig,
}

impl GridWorld {
    pub fn new(config: GridConfig) -> Result<Self, GridError> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Random disjoint placement, agent on a free cell, random episode length.
    pub fn reset(&self, seed: u64) -> GridState {
        let cfg = &self.config;
        let mut rng = rng_from_seed(seed);
        let n = cfg.width * cfg.width;
        let mut cells: Vec<usize> = (0..n).collect();
        cells.shuffle(&mut rng);
        let steps = rng.random_range(cfg.min_steps..=cfg.max_steps);
        let agent_cell = cells[cfg.n_apples + cfg.n_fires];
        let mut state = GridState::empty(
            cfg.width,
            (agent_cell / cfg.width, agent_cell % cfg.width),
            steps,
        );
        for &c in &cells[..cfg.n_apples] {
            state.apples[c] = true;
        }
        for &c in &cells[cfg.n_apples..cfg.n_apples + cfg.n_fires] {
            state.fires[c] = true;
        }
        state
    }

    pub fn step(&self, state: &mut GridState, action: GridAction) -> GridStep {
        if state.pending_consume {
            let i = state.idx(state.agent.0, state.agent.1);
            state.apples[i] = false;
            state.pending_consume = false;
        }
        state.agent = state.destination(action);
        let i = state.idx(state.agent.0, state.agent.1);
        let apple = state.apples[i];
        let fire = state.fires[i];
        let mut reward = STEP_REWARD;
        if apple {
            reward += APPLE_REWARD;
            state.pending_consume = true;
        }
        if fire {
            reward += FIRE_REWARD;
        }
        state.steps_remaining = state.steps_remaining.saturating_sub(1);
        GridStep {
            reward,
            done: state.steps_remaining == 0,
            apple_encountered: apple,
            fire_encountered: fire,
        }
    }
}

pub type GridObs = [f64; GRID_OBS_LEN];

/// Egocentric crop; cells beyond the grid read 0.
pub fn observe(state: &GridState) -> GridObs {
    let mut obs = [0.0; GRID_OBS_LEN];
    let half = (GRID_WINDOW / 2) as isize;
    let w = state.width as isize;
    for wr in 0..GRID_WINDOW {
        let r = state.agent.0 as isize + wr as isize - half;
        if r < 0 || r >= w {
            continue;
        }
        for wc in 0..GRID_WINDOW {
            let c = state.agent.1 as isize + wc as isize - half;
            if c < 0 || c >= w {
                continue;
            }
            let i = (r * w + c) as usize;
            let k = wr * GRID_WINDOW + wc;
            obs[k] = f64::from(u8::from(state.apples[i]));
            obs[GRID_CELLS + k] = f64::from(u8::from(state.fires[i]));
        }
    }
    obs
}

/// Which window cells a movement leaves fully determined by the current view.
pub fn predictable_mask(action: GridAction) -> [bool; GRID_CELLS] {
    let (dr, dc) = action.delta();
    let mut mask = [false; GRID_CELLS];
    for r in 0..GRID_WINDOW as isize {
        for c in 0..GRID_WINDOW as isize {
            let (sr, sc) = (r + dr, c + dc);
            mask[(r * GRID_WINDOW as isize + c) as usize] =
                (0..GRID_WINDOW as isize).contains(&sr) && (0..GRID_WINDOW as isize).contains(&sc);
        }
    }
    mask
}

/// The optimal stateless forward predictor: shift the view opposite the
/// movement; newly revealed cells are unknown and set to 0.
pub fn shift_oracle(obs: &GridObs, action: GridAction) -> (GridObs, [bool; GRID_CELLS]) {
    let (dr, dc) = action.delta();
    let mask = predictable_mask(action);
    let mut out = [0.0; GRID_OBS_LEN];
    for plane in 0..2 {
        for r in 0..GRID_WINDOW as isize {
            for c in 0..GRID_WINDOW as isize {
                let k = (r * GRID_WINDOW as isize + c) as usize;
                if mask[k] {
                    let src = ((r + dr) * GRID_WINDOW as isize + c + dc) as usize;
                    out[plane * GRID_CELLS + k] = obs[plane * GRID_CELLS + src];
                }
            }
        }
    }
    (out, mask)
}

/// Reported score: per-step net value of encounters, `R / T - 1`.
pub fn normalized_score(cumulative_reward: f64, steps: usize) -> f64 {
    if steps == 0 {
        0.0
    } else {
        cumulative_reward / steps as f64 - STEP_REWARD
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn world() -> GridWorld {
        GridWorld::new(GridConfig::default()).unwrap()
    }

    #[test]
    fn reset_is_seeded_and_counts_are_exact() {
        let w = world();
        assert_eq!(w.reset(3), w.reset(3));
        let s = w.reset(3);
        assert_eq!(s.apple_count(), 30);
        assert_eq!(s.fire_count(), 30);
        let i = s.idx(s.agent.0, s.agent.1);
        assert!(!s.apples[i] && !s.fires[i]);
        assert!((10..=100).contains(&s.steps_remaining));
    }

    #[test]
    fn placements_never_overlap() {
        let w = world();
        let violations: usize = (0..1000)
            .map(|seed| {
                let s = w.reset(seed);
                s.apples.iter().zip(&s.fires).filter(|(a, f)| **a && **f).count()
            })
            .sum();
        assert_eq!(violations, 0);
    }

    #[test]
    fn infeasible_config_is_rejected() {
        let cfg = GridConfig {
            width: 4,
            n_apples: 8,
            n_fires: 8,
            ..GridConfig::default()
        };
        assert!(GridWorld::new(cfg).is_err());
        let cfg = GridConfig {
            min_steps: 20,
            max_steps: 10,
            ..GridConfig::default()
        };
        assert!(GridWorld::new(cfg).is_err());
    }

    #[test]
    fn apple_is_rewarded_on_arrival_and_removed_next_step() {
        let w = world();
        let mut s = GridState::empty(12, (5, 5), 10);
        let target = s.idx(5, 6);
        s.apples[target] = true;
        let out = w.step(&mut s, GridAction::Right);
        assert_eq!(out.reward, 7.0);
        assert!(s.apples[target], "apple stays visible on the encounter turn");
        assert_eq!(observe(&s)[12], 1.0);
        let out = w.step(&mut s, GridAction::NoOp);
        assert_eq!(out.reward, 1.0);
        assert!(!s.apples[target]);
    }

    #[test]
    fn walls_block_movement() {
        let w = world();
        let mut s = GridState::empty(12, (0, 0), 10);
        let out = w.step(&mut s, GridAction::Up);
        assert_eq!(s.agent, (0, 0));
        assert_eq!(out.reward, 1.0);
        w.step(&mut s, GridAction::Left);
        assert_eq!(s.agent, (0, 0));
    }

    #[test]
    fn fires_persist_and_cost_eight() {
        let w = world();
        let mut s = GridState::empty(12, (5, 5), 10);
        let f = s.idx(6, 5);
        s.fires[f] = true;
        assert_eq!(w.step(&mut s, GridAction::Down).reward, -7.0);
        w.step(&mut s, GridAction::Up);
        assert!(s.fires[f]);
    }

    #[test]
    fn episode_ends_when_steps_run_out() {
        let w = world();
        let mut s = GridState::empty(12, (5, 5), 2);
        assert!(!w.step(&mut s, GridAction::NoOp).done);
        assert!(w.step(&mut s, GridAction::NoOp).done);
    }

    #[test]
    fn corner_view_is_padded() {
        let mut s = GridState::empty(12, (0, 0), 10);
        s.apples.iter_mut().for_each(|a| *a = true);
        let obs = observe(&s);
        for r in 0..5 {
            for c in 0..5 {
                let expect = if r >= 2 && c >= 2 { 1.0 } else { 0.0 };
                assert_eq!(obs[r * 5 + c], expect);
            }
        }
        assert_eq!(observe(&GridState::empty(12, (6, 6), 1)), [0.0; GRID_OBS_LEN]);
    }

    #[test]
    fn crop_matches_naive_lookup() {
        let w = world();
        for seed in 0..200 {
            let s = w.reset(seed);
            let obs = observe(&s);
            for plane in 0..2 {
                for wr in 0..5i64 {
                    for wc in 0..5i64 {
                        let r = s.agent.0 as i64 - 2 + wr;
                        let c = s.agent.1 as i64 - 2 + wc;
                        let truth = if (0..12).contains(&r) && (0..12).contains(&c) {
                            let i = (r * 12 + c) as usize;
                            if plane == 0 { s.apples[i] } else { s.fires[i] }
                        } else {
                            false
                        };
                        assert_eq!(obs[plane * 25 + (wr * 5 + wc) as usize] == 1.0, truth);
                    }
                }
            }
        }
    }

    #[test]
    fn shift_right_moves_contents_left() {
        let mut obs = [0.0; GRID_OBS_LEN];
        obs[2 * 5 + 3] = 1.0; // apple right of the agent
        obs[25 + 4] = 1.0; // fire in the rightmost column
        let (pred, mask) = shift_oracle(&obs, GridAction::Right);
        assert_eq!(pred[2 * 5 + 2], 1.0);
        assert_eq!(pred[25 + 3], 1.0);
        for r in 0..5 {
            assert!(!mask[r * 5 + 4]);
            assert!(mask[r * 5]);
        }
        let (same, full) = shift_oracle(&obs, GridAction::NoOp);
        assert_eq!(same, obs);
        assert!(full.iter().all(|&m| m));
    }

    proptest! {
        #[test]
        fn right_then_left_is_identity_on_mask(bits in prop::collection::vec(any::<bool>(), 50)) {
            let mut obs = [0.0; GRID_OBS_LEN];
            for (o, b) in obs.iter_mut().zip(&bits) {
                *o = if *b { 1.0 } else { 0.0 };
            }
            let (a, m1) = shift_oracle(&obs, GridAction::Right);
            let (b, m2) = shift_oracle(&a, GridAction::Left);
            for k in 0..GRID_CELLS {
                // Cells valid after both shifts: interior columns.
                if m1[k] && m2[k] && k % 5 != 0 {
                    prop_assert_eq!(b[k], obs[k]);
                    prop_assert_eq!(b[25 + k], obs[25 + k]);
                }
            }
        }

        #[test]
        fn reward_accounting_is_exact(seed in 0u64..10_000,
                                      actions in prop::collection::vec(0usize..5, 100)) {
            let w = world();
            let mut s = w.reset(seed);
            let fires0 = s.fire_count();
            let (mut total, mut steps, mut apples, mut fires) = (0.0, 0usize, 0usize, 0usize);
            let mut apple_count = s.apple_count();
            for a in actions {
                let out = w.step(&mut s, GridAction::from_index(a).unwrap());
                total += out.reward;
                steps += 1;
                apples += usize::from(out.apple_encountered);
                fires += usize::from(out.fire_encountered);
                prop_assert!(s.apple_count() <= apple_count);
                apple_count = s.apple_count();
                prop_assert_eq!(s.fire_count(), fires0);
                if out.done { break; }
            }
            prop_assert_eq!(total, steps as f64 + 6.0 * apples as f64 - 8.0 * fires as f64);
        }

        #[test]
        fn shift_oracle_commutes_with_movement(seed in 0u64..10_000, a in 0usize..4) {
            let w = world();
            let mut s = w.reset(seed);
            let action = GridAction::MOVES[a];
            let before = observe(&s);
            let blocked = s.destination(action) == s.agent;
            prop_assume!(!blocked && !s.pending_consume);
            w.step(&mut s, action);
            let after = observe(&s);
            let (pred, mask) = shift_oracle(&before, action);
            for k in 0..GRID_CELLS {
                if mask[k] {
                    prop_assert_eq!(pred[k], after[k]);
                    prop_assert_eq!(pred[25 + k], after[25 + k]);
                }
            }
        }
    }
}
