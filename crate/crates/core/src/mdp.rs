//! Finite MDPs, gridworld mazes, and random MDP generation.
//!
//! Everything downstream (datasets, operators, the trainer) works against
//! [`TabularMdp`]. Mazes are described by [`GridMaze`] and compiled into a
//! `TabularMdp` whose state indices are `y * width + x`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

use crate::{Error, Result};

/// Tolerance used when validating that probability rows sum to one.
pub const PROB_TOL: f64 = 1e-12;

/// A full finite MDP: transition tensor, reward table, discount, initial
/// distribution, and terminal flags. Terminal states self-loop with reward 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Row-major `[state][action][next_state]`.
    transition: Vec<f64>,
    /// Row-major `[state][action]`.
    reward: Vec<f64>,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
    pub terminal: Vec<bool>,
    /// Declared reward bound; every |reward| is ≤ this.
    pub r_max: f64,
    /// Present when the MDP was compiled from a grid; used for perturbation
    /// neighborhoods.
    pub grid: Option<GridGeometry>,
}

/// Grid shape retained by compiled mazes so state-space neighborhoods can be
/// taken in Chebyshev distance rather than transition-graph hops.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    /// `true` for wall cells, indexed `y * width + x`.
    pub walls: Vec<bool>,
}

impl GridGeometry {
    /// All non-wall cells within Chebyshev distance `radius` of `state`,
    /// including `state` itself, in ascending index order.
    pub fn chebyshev_neighborhood(&self, state: usize, radius: usize) -> Vec<usize> {
        let (x, y) = (state % self.width, state / self.width);
        let mut out = Vec::new();
        let y_lo = y.saturating_sub(radius);
        let x_lo = x.saturating_sub(radius);
        for ny in y_lo..=(y + radius).min(self.height - 1) {
            for nx in x_lo..=(x + radius).min(self.width - 1) {
                let idx = ny * self.width + nx;
                if !self.walls[idx] || idx == state {
                    out.push(idx);
                }
            }
        }
        out
    }
}

impl TabularMdp {
    /// Builds and validates an MDP from dense tensors.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        initial_dist: Vec<f64>,
        terminal: Vec<bool>,
        r_max: f64,
    ) -> Result<Self> {
        let mdp = TabularMdp {
            num_states,
            num_actions,
            transition,
            reward,
            discount,
            initial_dist,
            terminal,
            r_max,
            grid: None,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks every structural invariant: row normalization, nonnegativity,
    /// reward bounds, initial-distribution normalization, and terminal
    /// self-loops with zero reward.
    pub fn validate(&self) -> Result<()> {
        let (s_n, a_n) = (self.num_states, self.num_actions);
        if s_n == 0 || a_n == 0 {
            return Err(Error::invalid("num_states and num_actions must be positive"));
        }
        if !(0.0..1.0).contains(&self.discount) || self.discount <= 0.0 {
            return Err(Error::invalid(format!(
                "discount must lie in (0,1), got {}",
                self.discount
            )));
        }
        if self.transition.len() != s_n * a_n * s_n
            || self.reward.len() != s_n * a_n
            || self.initial_dist.len() != s_n
            || self.terminal.len() != s_n
        {
            return Err(Error::invalid("tensor dimensions do not match num_states/num_actions"));
        }
        for s in 0..s_n {
            for a in 0..a_n {
                let row = self.transition_row(s, a);
                let mut sum = 0.0;
                for &p in row {
                    if p < 0.0 {
                        return Err(Error::invalid(format!("negative probability at ({s},{a})")));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(Error::invalid(format!(
                        "transition row ({s},{a}) sums to {sum}, not 1"
                    )));
                }
                let r = self.reward(s, a);
                if r.abs() > self.r_max + PROB_TOL {
                    return Err(Error::invalid(format!(
                        "|reward({s},{a})| = {} exceeds r_max = {}",
                        r.abs(),
                        self.r_max
                    )));
                }
                if self.terminal[s] && (row[s] != 1.0 || r != 0.0) {
                    return Err(Error::invalid(format!(
                        "terminal state {s} must self-loop with reward 0"
                    )));
                }
            }
        }
        let init_sum: f64 = self.initial_dist.iter().sum();
        if (init_sum - 1.0).abs() > PROB_TOL || self.initial_dist.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid("initial_dist is not a probability vector"));
        }
        Ok(())
    }

    #[inline]
    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let base = (state * self.num_actions + action) * self.num_states;
        &self.transition[base..base + self.num_states]
    }

    #[inline]
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.num_actions + action]
    }

    /// The full reward table, row-major `[state][action]`.
    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    /// Samples an initial state from `initial_dist`.
    pub fn sample_initial(&self, rng: &mut ChaCha12Rng) -> usize {
        sample_categorical(&self.initial_dist, rng)
    }

    /// One environment step: samples the successor, returns
    /// `(next_state, reward, done)` where `done` means the successor is
    /// terminal. Errors on out-of-range indices.
    pub fn step(&self, state: usize, action: usize, rng: &mut ChaCha12Rng) -> Result<(usize, f64, bool)> {
        if state >= self.num_states || action >= self.num_actions {
            return Err(Error::invalid(format!(
                "step index out of range: state {state}, action {action}"
            )));
        }
        let next = sample_categorical(self.transition_row(state, action), rng);
        let reward = self.reward(state, action);
        Ok((next, reward, self.terminal[next]))
    }

    /// Successor states with positive probability under `(state, action)`.
    pub fn successors(&self, state: usize, action: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.transition_row(state, action)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(sp, &p)| (sp, p))
    }

    /// Rebuilds the same MDP with a different discount.
    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        self.discount = discount;
        self.validate()?;
        Ok(self)
    }
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Guard against accumulated rounding: fall back to the last positive entry.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("probability row has no positive entry")
}

/// Grid actions in the fixed order used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [GridAction::Up, GridAction::Down, GridAction::Left, GridAction::Right];

    fn delta(self) -> (isize, isize) {
        match self {
            GridAction::Up => (0, -1),
            GridAction::Down => (0, 1),
            GridAction::Left => (-1, 0),
            GridAction::Right => (1, 0),
        }
    }

    /// The two moves perpendicular to this one (slip directions).
    fn lateral(self) -> [GridAction; 2] {
        match self {
            GridAction::Up | GridAction::Down => [GridAction::Left, GridAction::Right],
            GridAction::Left | GridAction::Right => [GridAction::Up, GridAction::Down],
        }
    }
}

/// A rectangular gridworld maze. Compiles deterministically to a
/// [`TabularMdp`] with `width * height` states; wall cells become unreachable
/// self-loop states.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMaze {
    pub width: usize,
    pub height: usize,
    /// Wall flags indexed `y * width + x`.
    pub walls: Vec<bool>,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub slip_prob: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub horizon: usize,
    pub discount: f64,
}

impl GridMaze {
    pub fn cell_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn start_state(&self) -> usize {
        self.cell_index(self.start.0, self.start.1)
    }

    pub fn goal_state(&self) -> usize {
        self.cell_index(self.goal.0, self.goal.1)
    }

    pub fn is_wall(&self, x: usize, y: usize) -> bool {
        self.walls[self.cell_index(x, y)]
    }

    fn check(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("maze dimensions must be positive"));
        }
        if self.walls.len() != self.width * self.height {
            return Err(Error::invalid("wall table does not match maze dimensions"));
        }
        for (name, (x, y)) in [("start", self.start), ("goal", self.goal)] {
            if x >= self.width || y >= self.height {
                return Err(Error::invalid(format!("{name} cell out of bounds")));
            }
            if self.is_wall(x, y) {
                return Err(Error::invalid(format!("{name} cell is a wall")));
            }
        }
        if self.start == self.goal {
            return Err(Error::invalid("start and goal must differ"));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::invalid("slip_prob must lie in [0,1)"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        Ok(())
    }

    /// Parses the plain-text grid format: `#` wall, `.` floor, `S` start,
    /// `G` goal, one row per line. Rewards, slip, horizon, and discount come
    /// from `params`.
    pub fn from_text(text: &str, params: MazeParams) -> Result<GridMaze> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.is_empty() {
            return Err(Error::Parse { line: 1, message: "empty maze".into() });
        }
        let width = lines[0].chars().count();
        let height = lines.len();
        let mut walls = vec![false; width * height];
        let mut start = None;
        let mut goal = None;
        for (y, line) in lines.iter().enumerate() {
            let row: Vec<char> = line.chars().collect();
            if row.len() != width {
                return Err(Error::Parse {
                    line: y + 1,
                    message: format!("row width {} differs from first row width {width}", row.len()),
                });
            }
            for (x, c) in row.iter().enumerate() {
                match c {
                    '#' => walls[y * width + x] = true,
                    '.' => {}
                    'S' => start = Some((x, y)),
                    'G' => goal = Some((x, y)),
                    other => {
                        return Err(Error::Parse {
                            line: y + 1,
                            message: format!("unexpected character '{other}'"),
                        })
                    }
                }
            }
        }
        let start = start.ok_or(Error::Parse { line: 1, message: "no start cell 'S'".into() })?;
        let goal = goal.ok_or(Error::Parse { line: 1, message: "no goal cell 'G'".into() })?;
        let maze = GridMaze {
            width,
            height,
            walls,
            start,
            goal,
            slip_prob: params.slip_prob,
            step_reward: params.step_reward,
            goal_reward: params.goal_reward,
            horizon: params.horizon,
            discount: params.discount,
        };
        maze.check()?;
        Ok(maze)
    }

    /// Renders back to the plain-text grid format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = if (x, y) == self.start {
                    'S'
                } else if (x, y) == self.goal {
                    'G'
                } else if self.is_wall(x, y) {
                    '#'
                } else {
                    '.'
                };
                out.push(c);
            }
            let _ = writeln!(out);
        }
        out
    }

    /// Compiles to a `TabularMdp`. The cell-to-state bijection is
    /// `state = y * width + x`, stable across calls. Slip mass is split
    /// uniformly over the two lateral moves; moves into walls or out of
    /// bounds bounce back to the current cell. The reward table carries the
    /// expected one-step reward; entering the goal pays `goal_reward`.
    pub fn compile(&self) -> Result<TabularMdp> {
        self.check()?;
        let s_n = self.width * self.height;
        let a_n = GridAction::ALL.len();
        let goal = self.goal_state();
        let mut transition = vec![0.0; s_n * a_n * s_n];
        let mut reward = vec![0.0; s_n * a_n];
        let mut terminal = vec![false; s_n];
        terminal[goal] = true;

        for y in 0..self.height {
            for x in 0..self.width {
                let s = self.cell_index(x, y);
                let is_static = self.walls[s] || s == goal;
                for (ai, act) in GridAction::ALL.iter().enumerate() {
                    let base = (s * a_n + ai) * s_n;
                    if is_static {
                        transition[base + s] = 1.0;
                        continue;
                    }
                    let mut add = |dir: GridAction, p: f64, r_acc: &mut f64| {
                        let (dx, dy) = dir.delta();
                        let nx = x as isize + dx;
                        let ny = y as isize + dy;
                        let target = if nx < 0
                            || ny < 0
                            || nx >= self.width as isize
                            || ny >= self.height as isize
                            || self.is_wall(nx as usize, ny as usize)
                        {
                            s
                        } else {
                            self.cell_index(nx as usize, ny as usize)
                        };
                        transition[base + target] += p;
                        let edge_reward = if target == goal { self.goal_reward } else { self.step_reward };
                        *r_acc += p * edge_reward;
                    };
                    let mut r_acc = 0.0;
                    add(*act, 1.0 - self.slip_prob, &mut r_acc);
                    if self.slip_prob > 0.0 {
                        for lat in act.lateral() {
                            add(lat, self.slip_prob / 2.0, &mut r_acc);
                        }
                    }
                    reward[s * a_n + ai] = r_acc;
                }
            }
        }

        let mut initial_dist = vec![0.0; s_n];
        initial_dist[self.start_state()] = 1.0;
        let r_max = self.step_reward.abs().max(self.goal_reward.abs());
        let mut mdp = TabularMdp::new(
            s_n,
            a_n,
            transition,
            reward,
            self.discount,
            initial_dist,
            terminal,
            r_max,
        )?;
        mdp.grid = Some(GridGeometry {
            width: self.width,
            height: self.height,
            walls: self.walls.clone(),
        });
        Ok(mdp)
    }
}

/// Non-grid parameters accompanying a text maze.
#[derive(Debug, Clone, Copy)]
pub struct MazeParams {
    pub slip_prob: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub horizon: usize,
    pub discount: f64,
}

impl Default for MazeParams {
    fn default() -> Self {
        MazeParams {
            slip_prob: 0.0,
            step_reward: -1.0,
            goal_reward: 50.0,
            horizon: 60,
            discount: 0.95,
        }
    }
}

/// The fixed 7×7 two-corridor maze used by the trajectory-stitching
/// experiments: a long detour ring from S around a central block to G, and a
/// short corridor straight down from S through M to G. Deterministic moves,
/// step reward −1, goal reward +50, horizon 60.
pub fn stitching_maze() -> GridMaze {
    let text = "\
#######
#S....#
#.###.#
#.###.#
#.###.#
#G....#
#######";
    GridMaze::from_text(text, MazeParams::default()).expect("builtin maze is valid")
}

/// The junction cell M of the stitching maze: the last cell of the short
/// corridor before the goal, `(1, 4)`.
pub fn stitching_junction(maze: &GridMaze) -> usize {
    maze.cell_index(1, 4)
}

/// Generates a random MDP: each `(s,a)` reaches exactly `branching` distinct
/// next states with Dirichlet-like normalized weights, rewards uniform in
/// `[-r_max, r_max]`, uniform initial distribution, no terminal states.
/// Deterministic in `seed`.
pub fn build_random_mdp(
    num_states: usize,
    num_actions: usize,
    branching: usize,
    r_max: f64,
    discount: f64,
    seed: u64,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 || branching == 0 {
        return Err(Error::invalid("dimensions must be positive"));
    }
    if branching > num_states {
        return Err(Error::invalid("branching cannot exceed num_states"));
    }
    if discount <= 0.0 || discount >= 1.0 {
        return Err(Error::invalid("discount must lie in (0,1)"));
    }
    if r_max < 0.0 {
        return Err(Error::invalid("r_max must be nonnegative"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut transition = vec![0.0; num_states * num_actions * num_states];
    let mut reward = vec![0.0; num_states * num_actions];
    for s in 0..num_states {
        for a in 0..num_actions {
            // Sample `branching` distinct successors.
            let mut pool: Vec<usize> = (0..num_states).collect();
            for i in 0..branching {
                let j = rng.gen_range(i..num_states);
                pool.swap(i, j);
            }
            let mut weights: Vec<f64> = (0..branching).map(|_| rng.gen::<f64>() + 1e-9).collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            // Force exact normalization against rounding.
            let correction: f64 = 1.0 - weights.iter().sum::<f64>();
            weights[branching - 1] += correction;
            let base = (s * num_actions + a) * num_states;
            for (i, &sp) in pool[..branching].iter().enumerate() {
                transition[base + sp] += weights[i];
            }
            reward[s * num_actions + a] = if r_max > 0.0 { rng.gen_range(-r_max..=r_max) } else { 0.0 };
        }
    }
    let initial_dist = vec![1.0 / num_states as f64; num_states];
    TabularMdp::new(
        num_states,
        num_actions,
        transition,
        reward,
        discount,
        initial_dist,
        vec![false; num_states],
        r_max,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_mdp_rows_sum_to_one() {
        let mdp = build_random_mdp(5, 2, 2, 1.0, 0.9, 7).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                let sum: f64 = mdp.transition_row(s, a).iter().sum();
                assert!((sum - 1.0).abs() <= PROB_TOL);
            }
        }
    }

    #[test]
    fn degenerate_single_state_mdp() {
        let mdp = build_random_mdp(1, 1, 1, 0.0, 0.5, 0).unwrap();
        assert_eq!(mdp.transition_row(0, 0), &[1.0]);
        assert_eq!(mdp.reward(0, 0), 0.0);
    }

    #[test]
    fn random_mdp_deterministic_in_seed() {
        let a = build_random_mdp(8, 3, 2, 1.0, 0.9, 42).unwrap();
        let b = build_random_mdp(8, 3, 2, 1.0, 0.9, 42).unwrap();
        assert_eq!(a, b);
        let c = build_random_mdp(8, 3, 2, 1.0, 0.9, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_mdp_rejects_bad_arguments() {
        assert!(build_random_mdp(3, 2, 5, 1.0, 0.9, 0).is_err());
        assert!(build_random_mdp(3, 2, 2, 1.0, 1.0, 0).is_err());
        assert!(build_random_mdp(0, 2, 0, 1.0, 0.5, 0).is_err());
    }

    #[test]
    fn stitching_maze_structure() {
        let maze = stitching_maze();
        assert_eq!((maze.width, maze.height), (7, 7));
        assert_ne!(maze.start, maze.goal);
        assert!(!maze.is_wall(maze.start.0, maze.start.1));
        assert!(!maze.is_wall(maze.goal.0, maze.goal.1));
        let mdp = maze.compile().unwrap();
        assert_eq!(mdp.num_states, 49);
        mdp.validate().unwrap();
    }

    #[test]
    fn compile_is_pure() {
        let maze = stitching_maze();
        let a = maze.compile().unwrap();
        let b = maze.compile().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_rows_are_one_hot() {
        let mdp = stitching_maze().compile().unwrap();
        for s in 0..mdp.num_states {
            for a in 0..mdp.num_actions {
                let row = mdp.transition_row(s, a);
                assert_eq!(row.iter().filter(|&&p| p > 0.0).count(), 1);
                assert_eq!(row.iter().sum::<f64>(), 1.0);
            }
        }
    }

    #[test]
    fn two_cell_corridor_moves_right() {
        let maze = GridMaze::from_text("SG", MazeParams::default()).unwrap();
        let mdp = maze.compile().unwrap();
        let row = mdp.transition_row(0, GridAction::Right as usize);
        assert_eq!(row[1], 1.0);
        assert_eq!(mdp.reward(0, GridAction::Right as usize), 50.0);
    }

    #[test]
    fn terminal_step_self_loops() {
        let mdp = stitching_maze().compile().unwrap();
        let goal = stitching_maze().goal_state();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let (next, r, done) = mdp.step(goal, 2, &mut rng).unwrap();
        assert_eq!((next, r, done), (goal, 0.0, true));
    }

    #[test]
    fn step_rejects_out_of_range() {
        let mdp = stitching_maze().compile().unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(mdp.step(1000, 0, &mut rng).is_err());
        assert!(mdp.step(0, 17, &mut rng).is_err());
    }

    #[test]
    fn step_frequencies_match_row() {
        // A 2-state MDP with transition row (0.3, 0.7) out of state 0.
        let transition = vec![
            0.3, 0.7, // s0 a0
            0.0, 1.0, // s1 a0 (terminal self-loop)
        ];
        let mdp = TabularMdp::new(
            2,
            1,
            transition,
            vec![0.0, 0.0],
            0.9,
            vec![1.0, 0.0],
            vec![false, true],
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut count1 = 0usize;
        for _ in 0..1000 {
            let (next, _, _) = mdp.step(0, 0, &mut rng).unwrap();
            if next == 1 {
                count1 += 1;
            }
        }
        let freq = count1 as f64 / 1000.0;
        assert!((freq - 0.7).abs() < 0.05, "empirical frequency {freq}");
    }

    #[test]
    fn maze_text_round_trip() {
        let maze = stitching_maze();
        let text = maze.to_text();
        let reparsed = GridMaze::from_text(&text, MazeParams::default()).unwrap();
        assert_eq!(maze, reparsed);
    }

    #[test]
    fn maze_text_errors_name_line() {
        let err = GridMaze::from_text("S.\n.X", MazeParams::default()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn chebyshev_neighborhood_in_corner() {
        let maze = stitching_maze();
        let mdp = maze.compile().unwrap();
        let grid = mdp.grid.as_ref().unwrap();
        // Start cell (1,1): radius-1 ball is the 3×3 block minus walls,
        // which leaves (1,1), (2,1), (1,2) plus the cell itself only.
        let nb = grid.chebyshev_neighborhood(maze.start_state(), 1);
        let expected: Vec<usize> = vec![maze.cell_index(1, 1), maze.cell_index(2, 1), maze.cell_index(1, 2)];
        assert_eq!(nb, expected);
    }
}
