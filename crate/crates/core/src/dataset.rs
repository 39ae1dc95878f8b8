//! Offline transition datasets: generation, mixing, indexing, persistence.
//!
//! A [`TransitionDataset`] is an ordered list of transitions plus count
//! tables and support sets. The state support deliberately includes every
//! observed next state, not only states visited as sources, so it tracks the
//! support of the behavior policy's state-visitation distribution.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{stitching_junction, GridAction, GridMaze, TabularMdp};
use crate::policy::SoftmaxPolicy;
use crate::{Error, Result};

/// One offline transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
}

/// An offline dataset with visit-count indexes and support sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub transitions: Vec<Transition>,
    pub num_states: usize,
    pub num_actions: usize,
    /// N(s,a), row-major `[state][action]`.
    pub counts_sa: Vec<u32>,
    /// N(s,a,s'), row-major `[state][action][next_state]`.
    pub counts_sas: Vec<u32>,
    /// N(s) = Σ_a N(s,a): visits as a source state.
    pub counts_s: Vec<u32>,
    /// States with N(s) > 0 plus every observed next state.
    pub state_support: BTreeSet<usize>,
    /// Pairs with N(s,a) > 0.
    pub pair_support: BTreeSet<(usize, usize)>,
    /// Identifier of the MDP the data came from.
    pub source_mdp_id: String,
    /// Indexes where episodes begin, when known at construction time. Lost by
    /// serialization; reconstructed from `done` flags on load.
    pub episode_starts: Vec<usize>,
}

impl TransitionDataset {
    /// Builds indexes from a transition list, validating index ranges.
    pub fn from_transitions(
        transitions: Vec<Transition>,
        num_states: usize,
        num_actions: usize,
        source_mdp_id: impl Into<String>,
        episode_starts: Vec<usize>,
    ) -> Result<TransitionDataset> {
        let mut ds = TransitionDataset {
            transitions,
            num_states,
            num_actions,
            counts_sa: vec![0; num_states * num_actions],
            counts_sas: vec![0; num_states * num_actions * num_states],
            counts_s: vec![0; num_states],
            state_support: BTreeSet::new(),
            pair_support: BTreeSet::new(),
            source_mdp_id: source_mdp_id.into(),
            episode_starts,
        };
        ds.rebuild_counts()?;
        Ok(ds)
    }

    fn rebuild_counts(&mut self) -> Result<()> {
        self.counts_sa = vec![0; self.num_states * self.num_actions];
        self.counts_sas = vec![0; self.num_states * self.num_actions * self.num_states];
        self.counts_s = vec![0; self.num_states];
        self.state_support.clear();
        self.pair_support.clear();
        for t in &self.transitions {
            if t.state >= self.num_states || t.next_state >= self.num_states || t.action >= self.num_actions {
                return Err(Error::invalid(format!(
                    "transition ({}, {}, {}) out of range for {}x{} MDP",
                    t.state, t.action, t.next_state, self.num_states, self.num_actions
                )));
            }
            self.counts_sa[t.state * self.num_actions + t.action] += 1;
            self.counts_sas
                [(t.state * self.num_actions + t.action) * self.num_states + t.next_state] += 1;
            self.counts_s[t.state] += 1;
            self.state_support.insert(t.state);
            self.state_support.insert(t.next_state);
            self.pair_support.insert((t.state, t.action));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    #[inline]
    pub fn count_sa(&self, state: usize, action: usize) -> u32 {
        self.counts_sa[state * self.num_actions + action]
    }

    #[inline]
    pub fn count_sas(&self, state: usize, action: usize, next: usize) -> u32 {
        self.counts_sas[(state * self.num_actions + action) * self.num_states + next]
    }

    /// The empirical behavior policy row π̂β(·|s) = N(s,·)/N(s), or `None`
    /// when the state was never visited as a source.
    pub fn empirical_policy_row(&self, state: usize) -> Option<Vec<f64>> {
        let n = self.counts_s[state];
        if n == 0 {
            return None;
        }
        Some(
            (0..self.num_actions)
                .map(|a| self.count_sa(state, a) as f64 / n as f64)
                .collect(),
        )
    }

    /// Empirical next-state distribution from `state`, marginalized over the
    /// behavior policy's actions: N(s,·,s')/N(s).
    pub fn empirical_next_dist(&self, state: usize) -> Option<Vec<f64>> {
        let n = self.counts_s[state];
        if n == 0 {
            return None;
        }
        let mut out = vec![0.0; self.num_states];
        for a in 0..self.num_actions {
            for sp in 0..self.num_states {
                out[sp] += self.count_sas(state, a, sp) as f64;
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        Some(out)
    }

    /// Recomputes counts from scratch and checks they match the stored
    /// tables. Used by tests and by `load`.
    pub fn verify_counts(&self) -> Result<()> {
        let rebuilt = TransitionDataset::from_transitions(
            self.transitions.clone(),
            self.num_states,
            self.num_actions,
            self.source_mdp_id.clone(),
            self.episode_starts.clone(),
        )?;
        if rebuilt.counts_sa != self.counts_sa
            || rebuilt.counts_sas != self.counts_sas
            || rebuilt.counts_s != self.counts_s
            || rebuilt.state_support != self.state_support
            || rebuilt.pair_support != self.pair_support
        {
            return Err(Error::invalid("count tables inconsistent with transition list"));
        }
        Ok(())
    }

    /// Rebinds the dataset to known environment dimensions (e.g. after
    /// loading from disk, which infers dimensions from the data).
    pub fn with_dims(self, num_states: usize, num_actions: usize, source_mdp_id: impl Into<String>) -> Result<TransitionDataset> {
        TransitionDataset::from_transitions(
            self.transitions,
            num_states,
            num_actions,
            source_mdp_id,
            self.episode_starts,
        )
    }

    /// Per-trajectory undiscounted returns, split on episode boundaries.
    pub fn trajectory_returns(&self) -> Vec<f64> {
        let mut returns = Vec::new();
        let mut boundaries: Vec<usize> = self.episode_starts.clone();
        if boundaries.is_empty() && !self.transitions.is_empty() {
            boundaries.push(0);
            for (i, t) in self.transitions.iter().enumerate() {
                if t.done && i + 1 < self.transitions.len() {
                    boundaries.push(i + 1);
                }
            }
        }
        for (bi, &start) in boundaries.iter().enumerate() {
            let end = boundaries.get(bi + 1).copied().unwrap_or(self.transitions.len());
            returns.push(self.transitions[start..end].iter().map(|t| t.reward).sum());
        }
        returns
    }
}

/// What drives action selection during a rollout.
pub enum RolloutPolicy<'a> {
    /// Sample from a softmax policy.
    Stochastic(&'a SoftmaxPolicy),
    /// Uniform over all actions.
    Uniform,
    /// Greedy w.r.t. a softmax policy.
    Greedy(&'a SoftmaxPolicy),
    /// Fixed action sequences, one per episode (cycled if fewer than
    /// `episodes`). Episodes end when the script runs out.
    Script(&'a [Vec<usize>]),
}

/// Collects `episodes` rollouts of at most `horizon` steps each.
/// Deterministic in `seed`.
pub fn rollout(
    mdp: &TabularMdp,
    policy: RolloutPolicy<'_>,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut transitions = Vec::new();
    let mut episode_starts = Vec::new();
    for ep in 0..episodes {
        let episode_start = transitions.len();
        let mut state = mdp.sample_initial(&mut rng);
        let script = match &policy {
            RolloutPolicy::Script(scripts) if !scripts.is_empty() => Some(&scripts[ep % scripts.len()]),
            _ => None,
        };
        let steps = script.map_or(horizon, |s| s.len().min(horizon));
        for t in 0..steps {
            if mdp.is_terminal(state) {
                break;
            }
            let action = match &policy {
                RolloutPolicy::Stochastic(p) => p.sample(state, &mut rng),
                RolloutPolicy::Uniform => rng.gen_range(0..mdp.num_actions),
                RolloutPolicy::Greedy(p) => p.greedy(state),
                RolloutPolicy::Script(_) => script.unwrap()[t],
            };
            let (next, reward, done) = mdp.step(state, action, &mut rng)?;
            transitions.push(Transition { state, action, reward, next_state: next, done });
            state = next;
            if done {
                break;
            }
        }
    }
    // Drop trailing empty-episode markers (episodes that began terminal).
    episode_starts.retain(|&i| i < transitions.len() || !transitions.is_empty() && i != transitions.len());
    TransitionDataset::from_transitions(transitions, mdp.num_states, mdp.num_actions, "rollout", episode_starts)
}

/// The detour family of the stitching maze: S right along the top, down the
/// far column, left along the bottom into G. 12 moves.
pub fn stitching_detour_actions() -> Vec<usize> {
    let mut acts = Vec::new();
    acts.extend(std::iter::repeat(GridAction::Right as usize).take(4));
    acts.extend(std::iter::repeat(GridAction::Down as usize).take(4));
    acts.extend(std::iter::repeat(GridAction::Left as usize).take(4));
    acts
}

/// The fragment family of the stitching maze: S straight down, stopping at
/// the junction cell one move short of G. 3 moves.
pub fn stitching_fragment_actions() -> Vec<usize> {
    std::iter::repeat(GridAction::Down as usize).take(3).collect()
}

/// Cells visited by a scripted action sequence from the maze start.
pub fn scripted_cells(maze: &GridMaze, actions: &[usize]) -> Vec<usize> {
    let mdp = maze.compile().expect("valid maze");
    let mut state = maze.start_state();
    let mut cells = vec![state];
    for &a in actions {
        let row = mdp.transition_row(state, a);
        let next = row.iter().position(|&p| p == 1.0).expect("deterministic maze");
        cells.push(next);
        state = next;
    }
    cells
}

/// Builds the two-family stitching dataset: `episodes_per_family` detour
/// trajectories reaching G and the same number of fragment trajectories
/// stopping one move short of G. No transition traverses the junction-to-goal
/// segment. The maze must be the stitching maze (its geometry is checked).
/// The trajectories are scripted and deterministic; `seed` is accepted for
/// API uniformity but does not affect the content.
pub fn make_stitching_dataset(
    maze: &GridMaze,
    episodes_per_family: usize,
    _seed: u64,
) -> Result<TransitionDataset> {
    if *maze != crate::mdp::stitching_maze() {
        return Err(Error::invalid("make_stitching_dataset requires the stitching maze"));
    }
    let mdp = maze.compile()?;
    let detour = stitching_detour_actions();
    let fragment = stitching_fragment_actions();
    let junction = stitching_junction(maze);
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut transitions = Vec::new();
    let mut episode_starts = Vec::new();
    for _ in 0..episodes_per_family {
        for script in [&detour, &fragment] {
            episode_starts.push(transitions.len());
            let mut state = maze.start_state();
            for &action in script.iter() {
                let (next, reward, done) = mdp.step(state, action, &mut rng)?;
                transitions.push(Transition { state, action, reward, next_state: next, done });
                state = next;
                if done {
                    break;
                }
            }
        }
    }
    let goal = maze.goal_state();
    debug_assert!(
        !transitions.iter().any(|t| t.state == junction && t.next_state == goal),
        "no dataset transition may traverse the junction-to-goal segment"
    );
    TransitionDataset::from_transitions(transitions, mdp.num_states, mdp.num_actions, "stitching", episode_starts)
}

/// Mixes two datasets from the same MDP at transition granularity. The output
/// has `min(|expert|, |random|)` transitions of which a `random_ratio`
/// fraction (rounded) are drawn from `random`, the rest from `expert`;
/// sampling is without replacement and the result is shuffled.
/// Deterministic in `seed`.
pub fn mix_datasets(
    expert: &TransitionDataset,
    random: &TransitionDataset,
    random_ratio: f64,
    seed: u64,
) -> Result<TransitionDataset> {
    if expert.source_mdp_id != random.source_mdp_id
        || expert.num_states != random.num_states
        || expert.num_actions != random.num_actions
    {
        return Err(Error::invalid("mix_datasets requires datasets from the same MDP"));
    }
    if !(0.0..=1.0).contains(&random_ratio) {
        return Err(Error::invalid("random_ratio must lie in [0,1]"));
    }
    let total = expert.len().min(random.len());
    let n_random = (random_ratio * total as f64).round() as usize;
    let n_expert = total - n_random;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut sample = |src: &TransitionDataset, n: usize| -> Vec<Transition> {
        let mut idx: Vec<usize> = (0..src.len()).collect();
        for i in 0..n {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        idx[..n].iter().map(|&i| src.transitions[i]).collect()
    };
    let mut mixed = sample(expert, n_expert);
    mixed.extend(sample(random, n_random));
    // Final shuffle so the two sources interleave.
    for i in (1..mixed.len()).rev() {
        let j = rng.gen_range(0..=i);
        mixed.swap(i, j);
    }
    TransitionDataset::from_transitions(
        mixed,
        expert.num_states,
        expert.num_actions,
        expert.source_mdp_id.clone(),
        Vec::new(),
    )
}

#[derive(Serialize, Deserialize)]
struct TransitionLine {
    s: usize,
    a: usize,
    r: f64,
    sp: usize,
    done: bool,
}

/// Serializes one transition per JSON line with rewards at 17 significant
/// digits. Byte-stable for a fixed transition order.
pub fn save(dataset: &TransitionDataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for t in &dataset.transitions {
        writeln!(
            w,
            "{{\"s\":{},\"a\":{},\"r\":{:.16e},\"sp\":{},\"done\":{}}}",
            t.state, t.action, t.reward, t.next_state, t.done
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a JSONL dataset. Dimensions are inferred from the maximum indices;
/// counts are rebuilt and verified. Parse failures name the offending line.
pub fn load(path: &Path) -> Result<TransitionDataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut transitions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TransitionLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        transitions.push(Transition {
            state: parsed.s,
            action: parsed.a,
            reward: parsed.r,
            next_state: parsed.sp,
            done: parsed.done,
        });
    }
    let num_states = transitions
        .iter()
        .map(|t| t.state.max(t.next_state) + 1)
        .max()
        .unwrap_or(1);
    let num_actions = transitions.iter().map(|t| t.action + 1).max().unwrap_or(1);
    let mut episode_starts = Vec::new();
    if !transitions.is_empty() {
        episode_starts.push(0);
        for (i, t) in transitions.iter().enumerate() {
            if t.done && i + 1 < transitions.len() {
                episode_starts.push(i + 1);
            }
        }
    }
    let ds = TransitionDataset::from_transitions(transitions, num_states, num_actions, "", episode_starts)?;
    ds.verify_counts()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_random_mdp, stitching_maze};

    #[test]
    fn empty_rollout_has_empty_supports() {
        let mdp = build_random_mdp(4, 2, 2, 1.0, 0.9, 1).unwrap();
        let ds = rollout(&mdp, RolloutPolicy::Uniform, 0, 10, 0).unwrap();
        assert!(ds.is_empty());
        assert!(ds.state_support.is_empty());
        assert!(ds.pair_support.is_empty());
    }

    #[test]
    fn deterministic_script_traces_unique_path() {
        let maze = stitching_maze();
        let mdp = maze.compile().unwrap();
        let script = vec![stitching_detour_actions()];
        let ds = rollout(&mdp, RolloutPolicy::Script(&script), 1, 60, 3).unwrap();
        let cells = scripted_cells(&maze, &stitching_detour_actions());
        assert_eq!(ds.len(), 12);
        for (i, t) in ds.transitions.iter().enumerate() {
            assert_eq!(t.state, cells[i]);
            assert_eq!(t.next_state, cells[i + 1]);
        }
        assert!(ds.transitions.last().unwrap().done);
    }

    #[test]
    fn uniform_rollout_support_matches_reachable_set() {
        let mdp = build_random_mdp(5, 2, 2, 1.0, 0.9, 11).unwrap();
        let ds = rollout(&mdp, RolloutPolicy::Uniform, 200, 40, 7).unwrap();
        // Reachable set by graph search from every initial state.
        let mut reachable: BTreeSet<usize> =
            (0..5).filter(|&s| mdp.initial_dist[s] > 0.0).collect();
        let mut frontier: Vec<usize> = reachable.iter().copied().collect();
        while let Some(s) = frontier.pop() {
            for a in 0..mdp.num_actions {
                for (sp, _) in mdp.successors(s, a) {
                    if reachable.insert(sp) {
                        frontier.push(sp);
                    }
                }
            }
        }
        assert_eq!(ds.state_support, reachable);
    }

    #[test]
    fn count_tables_consistent() {
        let mdp = build_random_mdp(6, 3, 2, 1.0, 0.9, 2).unwrap();
        let ds = rollout(&mdp, RolloutPolicy::Uniform, 20, 15, 9).unwrap();
        ds.verify_counts().unwrap();
        for s in ds.state_support.iter().copied() {
            if let Some(row) = ds.empirical_policy_row(s) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stitching_dataset_shape_and_returns() {
        let maze = stitching_maze();
        let ds = make_stitching_dataset(&maze, 1, 0).unwrap();
        let returns = ds.trajectory_returns();
        assert_eq!(returns.len(), 2);
        let max = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        // Detour: 11 steps at −1 then +50; fragment: 3 steps at −1.
        assert_eq!(max, 39.0);
        assert_eq!(returns, vec![39.0, -3.0]);
        assert!(mean < max);
    }

    #[test]
    fn stitching_dataset_never_crosses_junction_to_goal() {
        let maze = stitching_maze();
        let ds = make_stitching_dataset(&maze, 5, 1).unwrap();
        let junction = stitching_junction(&maze);
        let goal = maze.goal_state();
        assert!(!ds
            .transitions
            .iter()
            .any(|t| t.state == junction && t.next_state == goal));
        // Both corridors' cells are in the state support.
        for cell in scripted_cells(&maze, &stitching_fragment_actions()) {
            assert!(ds.state_support.contains(&cell));
        }
        for cell in scripted_cells(&maze, &stitching_detour_actions()) {
            assert!(ds.state_support.contains(&cell));
        }
    }

    #[test]
    fn stitching_dataset_rejects_other_mazes() {
        let maze = GridMaze::from_text("S.\n.G", crate::mdp::MazeParams::default()).unwrap();
        assert!(make_stitching_dataset(&maze, 1, 0).is_err());
    }

    #[test]
    fn mix_ratio_counts() {
        let mdp = build_random_mdp(4, 2, 2, 1.0, 0.9, 3).unwrap();
        let expert = rollout(&mdp, RolloutPolicy::Uniform, 100, 10, 1).unwrap();
        let random = rollout(&mdp, RolloutPolicy::Uniform, 100, 10, 2).unwrap();
        // Trim both to exactly 1000 transitions.
        let expert = TransitionDataset::from_transitions(
            expert.transitions[..1000.min(expert.len())].to_vec(),
            4,
            2,
            "rollout",
            vec![],
        )
        .unwrap();
        let random = TransitionDataset::from_transitions(
            random.transitions[..1000.min(random.len())].to_vec(),
            4,
            2,
            "rollout",
            vec![],
        )
        .unwrap();
        assert_eq!((expert.len(), random.len()), (1000, 1000));
        let mixed = mix_datasets(&expert, &random, 0.7, 5).unwrap();
        assert_eq!(mixed.len(), 1000);

        // Ratio 0 and 1 reduce to one-source subsets.
        let only_expert = mix_datasets(&expert, &random, 0.0, 5).unwrap();
        assert_eq!(only_expert.len(), 1000);
        let only_random = mix_datasets(&expert, &random, 1.0, 5).unwrap();
        assert_eq!(only_random.len(), 1000);
    }

    #[test]
    fn mix_rejects_mismatched_sources() {
        let mdp = build_random_mdp(4, 2, 2, 1.0, 0.9, 3).unwrap();
        let a = rollout(&mdp, RolloutPolicy::Uniform, 5, 10, 1).unwrap();
        let b = rollout(&mdp, RolloutPolicy::Uniform, 5, 10, 2)
            .unwrap()
            .with_dims(4, 2, "other")
            .unwrap();
        assert!(mix_datasets(&a, &b, 0.5, 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mdp = build_random_mdp(5, 3, 2, 1.0, 0.9, 4).unwrap();
        let ds = rollout(&mdp, RolloutPolicy::Uniform, 10, 10, 6).unwrap();
        save(&ds, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.transitions, ds.transitions);

        // Empty dataset round-trips too.
        let empty_path = dir.path().join("empty.jsonl");
        let empty = TransitionDataset::from_transitions(vec![], 5, 3, "x", vec![]).unwrap();
        save(&empty, &empty_path).unwrap();
        let loaded = load(&empty_path).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn truncated_file_errors_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"s\":0,\"a\":0,\"r\":1.0,\"sp\":1,\"done\":false}\n{\"s\":1,\"a\":0,\"r\":",
        )
        .unwrap();
        match load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
