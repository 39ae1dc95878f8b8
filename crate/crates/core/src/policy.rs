//! Tabular softmax policies over logits.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::TabularMdp;
use crate::{Error, Result};

/// A stochastic tabular policy π(a|s) = softmax(logits[s])_a. Rows are always
/// valid distributions with strictly positive entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub num_states: usize,
    pub num_actions: usize,
    logits: Vec<f64>,
}

impl SoftmaxPolicy {
    /// The uniform policy (all logits zero).
    pub fn uniform(num_states: usize, num_actions: usize) -> SoftmaxPolicy {
        SoftmaxPolicy {
            num_states,
            num_actions,
            logits: vec![0.0; num_states * num_actions],
        }
    }

    pub fn from_logits(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<SoftmaxPolicy> {
        if logits.len() != num_states * num_actions {
            return Err(Error::invalid("logit table does not match dimensions"));
        }
        Ok(SoftmaxPolicy { num_states, num_actions, logits })
    }

    #[inline]
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    #[inline]
    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    #[inline]
    fn logit_row(&self, state: usize) -> &[f64] {
        &self.logits[state * self.num_actions..(state + 1) * self.num_actions]
    }

    /// π(·|s) computed with a numerically stable softmax.
    pub fn probs(&self, state: usize) -> Vec<f64> {
        let row = self.logit_row(state);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = out.iter().sum();
        for p in &mut out {
            *p /= sum;
        }
        out
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs(state)[action]
    }

    pub fn log_probs(&self, state: usize) -> Vec<f64> {
        let row = self.logit_row(state);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
        row.iter().map(|&z| z - log_sum).collect()
    }

    /// Greedy action: argmax of π(·|s), ties broken toward the lowest index.
    pub fn greedy(&self, state: usize) -> usize {
        let row = self.logit_row(state);
        let mut best = 0;
        for (a, &z) in row.iter().enumerate() {
            if z > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn sample(&self, state: usize, rng: &mut ChaCha12Rng) -> usize {
        let probs = self.probs(state);
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        for (a, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        self.num_actions - 1
    }

    /// Shannon entropy of π(·|s).
    pub fn entropy(&self, state: usize) -> f64 {
        self.probs(state)
            .iter()
            .zip(self.log_probs(state))
            .map(|(&p, lp)| -p * lp)
            .sum()
    }

    /// Logit-space soft update toward `source`:
    /// `logits ← (1−τ)·logits + τ·source.logits`.
    pub fn soft_update_from(&mut self, source: &SoftmaxPolicy, tau: f64) {
        for (z, &zs) in self.logits.iter_mut().zip(&source.logits) {
            *z = (1.0 - tau) * *z + tau * zs;
        }
    }
}

/// Undiscounted returns of greedy rollouts, one per episode. Episodes start
/// from the MDP's initial distribution and end at a terminal state or after
/// `horizon` steps. Deterministic in `seed`.
pub fn greedy_returns(
    policy: &SoftmaxPolicy,
    mdp: &TabularMdp,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = mdp.sample_initial(&mut rng);
        let mut total = 0.0;
        for _ in 0..horizon {
            if mdp.is_terminal(state) {
                break;
            }
            let action = policy.greedy(state);
            let (next, reward, done) = mdp.step(state, action, &mut rng)?;
            total += reward;
            state = next;
            if done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(returns)
}

/// The greedy trajectory (visited states, including the start) and the
/// `(state, action)` pairs taken, from the maze start, up to `horizon` steps.
/// Only meaningful for deterministic MDPs.
pub fn greedy_trajectory(
    policy: &SoftmaxPolicy,
    mdp: &TabularMdp,
    start: usize,
    horizon: usize,
) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut states = vec![start];
    let mut pairs = Vec::new();
    let mut state = start;
    for _ in 0..horizon {
        if mdp.is_terminal(state) {
            break;
        }
        let action = policy.greedy(state);
        // Deterministic transition: take the argmax-probability successor.
        let row = mdp.transition_row(state, action);
        let next = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        pairs.push((state, action));
        states.push(next);
        state = next;
    }
    (states, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_one_and_are_positive() {
        let mut p = SoftmaxPolicy::uniform(3, 4);
        p.logits_mut()[0] = 5.0;
        p.logits_mut()[5] = -3.0;
        for s in 0..3 {
            let probs = p.probs(s);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(probs.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let p = SoftmaxPolicy::uniform(1, 3);
        assert_eq!(p.greedy(0), 0);
    }

    #[test]
    fn soft_update_tau_one_copies() {
        let mut a = SoftmaxPolicy::uniform(2, 2);
        let mut b = SoftmaxPolicy::uniform(2, 2);
        b.logits_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        a.soft_update_from(&b, 1.0);
        assert_eq!(a.logits(), b.logits());
    }

    #[test]
    fn entropy_of_uniform_is_log_n() {
        let p = SoftmaxPolicy::uniform(1, 4);
        assert!((p.entropy(0) - (4.0f64).ln()).abs() < 1e-12);
    }
}
