//! Successive elimination for the static K-armed problem, as an incremental
//! `next`/`update` state machine, together with its confidence radius and a
//! UCB baseline.
//!
//! A round sweeps the active arms in ascending index order. The best running
//! mean is snapshotted once when the round starts; each arm is then either
//! eliminated (its mean is more than `gamma * U(round, T)` below the snapshot)
//! or pulled once. Elimination tests use only the snapshot and the tested
//! arm's own mean, which is untouched until the arm is pulled, so the outcome
//! of a round does not depend on when within the round a test is evaluated.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `max(ln x, 1)`.
pub fn blog<F: Scalar>(x: F) -> Result<F> {
    if !(x > F::zero()) {
        return Err(Error::invalid(format!("blog needs x > 0, got {x}")));
    }
    Ok(blog_positive(x))
}

#[inline]
fn blog_positive<F: Scalar>(x: F) -> F {
    x.ln().max(F::one())
}

/// Elimination radius `U(tau, T) = 2 sqrt(2 blog(T / tau) / tau)`.
///
/// `T` may be any positive real. `tau = 0` yields `+inf`.
#[inline]
pub fn confidence_radius<F: Scalar>(tau: u64, horizon: F) -> F {
    if tau == 0 {
        return F::infinity();
    }
    let tau = F::of(tau as f64);
    F::of(2.0) * (F::of(2.0) * blog_positive(horizon / tau) / tau).sqrt()
}

/// Parameters of one successive elimination run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeConfig<F> {
    horizon: F,
    gamma: F,
}

impl<F: Scalar> SeConfig<F> {
    pub fn new(horizon: F, gamma: F) -> Result<Self> {
        if !(horizon > F::zero() && horizon.is_finite()) {
            return Err(Error::invalid(format!("T must be positive and finite, got {horizon}")));
        }
        if !(gamma >= F::one() && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be at least 1, got {gamma}")));
        }
        Ok(Self { horizon, gamma })
    }

    /// The horizon parameter `T` of the confidence radius.
    pub fn horizon(&self) -> F {
        self.horizon
    }

    pub fn gamma(&self) -> F {
        self.gamma
    }

    /// `gamma * U(tau, T)`.
    pub fn threshold(&self, tau: u64) -> F {
        self.gamma * confidence_radius(tau, self.horizon)
    }
}

/// State of one successive elimination run.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessiveElimination<F> {
    config: SeConfig<F>,
    round: u64,
    active: Vec<usize>,
    means: Vec<F>,
    pulls: Vec<u64>,
    /// Arms active when the current round started, in sweep order.
    sweep: Vec<usize>,
    cursor: usize,
    round_max: F,
    emitted: u64,
    pending: Option<usize>,
}

impl<F: Scalar> SuccessiveElimination<F> {
    /// Run over all arms `0..num_arms`.
    pub fn new(num_arms: usize, config: SeConfig<F>) -> Result<Self> {
        Self::with_arms(num_arms, (0..num_arms).collect(), config)
    }

    /// Run over the given initial subset of `0..num_arms`.
    pub fn with_arms(num_arms: usize, mut arms: Vec<usize>, config: SeConfig<F>) -> Result<Self> {
        arms.sort_unstable();
        arms.dedup();
        if arms.is_empty() {
            return Err(Error::invalid("successive elimination needs at least one arm"));
        }
        if let Some(&arm) = arms.iter().find(|&&a| a >= num_arms) {
            return Err(Error::ArmOutOfRange { arm, arms: num_arms });
        }
        let mut state = Self {
            config,
            round: 1,
            active: arms,
            means: vec![F::zero(); num_arms],
            pulls: vec![0; num_arms],
            sweep: Vec::new(),
            cursor: 0,
            round_max: F::zero(),
            emitted: 0,
            pending: None,
        };
        state.begin_round();
        Ok(state)
    }

    fn begin_round(&mut self) {
        self.round_max = self
            .active
            .iter()
            .map(|&i| self.means[i])
            .fold(F::neg_infinity(), F::max);
        self.sweep.clone_from(&self.active);
        self.cursor = 0;
        self.settle();
    }

    /// Runs elimination tests from the cursor until an arm survives or the
    /// sweep ends.
    fn settle(&mut self) {
        let threshold = self.round_max - self.config.threshold(self.round);
        while self.cursor < self.sweep.len() {
            let arm = self.sweep[self.cursor];
            if self.active.len() > 1 && self.means[arm] < threshold {
                self.active.retain(|&a| a != arm);
                self.cursor += 1;
            } else {
                break;
            }
        }
    }

    /// Next arm to pull.
    pub fn next_arm(&mut self) -> Result<usize> {
        if self.pending.is_some() {
            return Err(Error::Protocol("next_arm called twice without update"));
        }
        if self.cursor == self.sweep.len() {
            self.round += 1;
            self.begin_round();
        }
        let arm = self.sweep[self.cursor];
        self.cursor += 1;
        self.pending = Some(arm);
        Ok(arm)
    }

    /// Feeds the reward of the pending arm.
    pub fn update(&mut self, reward: F) -> Result<()> {
        let arm = self
            .pending
            .take()
            .ok_or(Error::Protocol("update called without a pending arm"))?;
        let tau = F::of(self.round as f64);
        self.means[arm] = ((tau - F::one()) * self.means[arm] + reward) / tau;
        self.pulls[arm] += 1;
        self.emitted += 1;
        self.settle();
        Ok(())
    }

    pub fn config(&self) -> &SeConfig<F> {
        &self.config
    }

    /// Index of the current round (starting at 1).
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Number of fully swept rounds.
    pub fn completed_rounds(&self) -> u64 {
        if self.pending.is_none() && self.cursor == self.sweep.len() {
            self.round
        } else {
            self.round - 1
        }
    }

    /// Active arms in ascending order. Never empty.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn is_active(&self, arm: usize) -> bool {
        self.active.binary_search(&arm).is_ok()
    }

    pub fn means(&self) -> &[F] {
        &self.means
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    /// Total number of pulls so far.
    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn pending(&self) -> Option<usize> {
        self.pending
    }

    pub fn num_arms(&self) -> usize {
        self.means.len()
    }

    /// State at the start of `round` with the given running means, every
    /// arm active and pulled `round - 1` times.
    #[cfg(test)]
    pub(crate) fn at_round_start(means: Vec<F>, round: u64, config: SeConfig<F>) -> Self {
        let k = means.len();
        let mut state = Self {
            config,
            round,
            active: (0..k).collect(),
            means,
            pulls: vec![round - 1; k],
            sweep: Vec::new(),
            cursor: 0,
            round_max: F::zero(),
            emitted: (round - 1) * k as u64,
            pending: None,
        };
        state.begin_round();
        state
    }
}

/// UCB1-style index policy, `mean + sqrt(2 ln t / pulls)`; a comparison
/// baseline only.
#[derive(Debug, Clone, PartialEq)]
pub struct Ucb<F> {
    means: Vec<F>,
    pulls: Vec<u64>,
    t: u64,
    pending: Option<usize>,
}

impl<F: Scalar> Ucb<F> {
    pub fn new(num_arms: usize) -> Result<Self> {
        if num_arms == 0 {
            return Err(Error::invalid("UCB needs at least one arm"));
        }
        Ok(Self {
            means: vec![F::zero(); num_arms],
            pulls: vec![0; num_arms],
            t: 0,
            pending: None,
        })
    }

    pub fn next_arm(&mut self) -> Result<usize> {
        if self.pending.is_some() {
            return Err(Error::Protocol("next_arm called twice without update"));
        }
        let arm = match self.pulls.iter().position(|&p| p == 0) {
            Some(arm) => arm,
            None => {
                let log_t = F::of(((self.t + 1) as f64).ln());
                let index = |i: usize| {
                    self.means[i] + (F::of(2.0) * log_t / F::of(self.pulls[i] as f64)).sqrt()
                };
                let mut best = 0;
                let mut best_index = index(0);
                for i in 1..self.means.len() {
                    let v = index(i);
                    if v > best_index {
                        best = i;
                        best_index = v;
                    }
                }
                best
            }
        };
        self.pending = Some(arm);
        Ok(arm)
    }

    pub fn update(&mut self, reward: F) -> Result<()> {
        let arm = self
            .pending
            .take()
            .ok_or(Error::Protocol("update called without a pending arm"))?;
        self.pulls[arm] += 1;
        let n = F::of(self.pulls[arm] as f64);
        self.means[arm] = self.means[arm] + (reward - self.means[arm]) / n;
        self.t += 1;
        Ok(())
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn means(&self) -> &[F] {
        &self.means
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se(k: usize, t: f64, gamma: f64) -> SuccessiveElimination<f64> {
        SuccessiveElimination::new(k, SeConfig::new(t, gamma).unwrap()).unwrap()
    }

    #[test]
    fn blog_values() {
        assert_eq!(blog(1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(blog(std::f64::consts::E.powi(2)).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(blog(0.1).unwrap(), 1.0);
        assert!(blog(0.0).is_err());
        assert!(blog(-2.0f32).is_err());
    }

    #[test]
    fn radius_values() {
        assert_abs_diff_eq!(confidence_radius(8, 8.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(confidence_radius(200, 100.0), 0.2, epsilon = 1e-12);
        // 2 * sqrt(2 ln 100)
        assert_abs_diff_eq!(confidence_radius(1, 100.0), 6.069_708_5, epsilon = 1e-6);
        assert!(confidence_radius(0, 10.0f64).is_infinite());
        assert_abs_diff_eq!(confidence_radius(1, 100.0f32), 6.069_708, epsilon = 1e-5);
    }

    #[test]
    fn config_validation() {
        assert!(SeConfig::new(0.0, 1.0).is_err());
        assert!(SeConfig::new(10.0, 0.5).is_err());
        assert!(SeConfig::new(12.5, 2.0).is_ok());
    }

    #[test]
    fn first_round_sweeps_all_arms() {
        let mut s = se(4, 100.0, 1.0);
        for expected in 0..4 {
            assert_eq!(s.next_arm().unwrap(), expected);
            s.update(if expected == 2 { 1.0 } else { 0.0 }).unwrap();
        }
        assert_eq!(s.active(), &[0, 1, 2, 3]);
        assert_eq!(s.completed_rounds(), 1);
    }

    #[test]
    fn threshold_arithmetic_eliminates() {
        // U(32, 32) = 2 sqrt(2 / 32) = 0.5; no reward path reaches means
        // (0.9, 0.2) at round 32 without an earlier elimination, so the state
        // is constructed directly.
        let config = SeConfig::new(32.0, 1.0).unwrap();
        assert_abs_diff_eq!(config.threshold(32), 0.5, epsilon = 1e-12);
        let mut s = SuccessiveElimination::at_round_start(vec![0.9, 0.2], 32, config);
        assert_eq!(s.next_arm().unwrap(), 0);
        s.update(0.9).unwrap();
        // Arm 1 is tested against the round-start snapshot and removed unpulled.
        assert_eq!(s.active(), &[0]);
        assert_eq!(s.pulls(), &[32, 31]);
        assert_eq!(s.completed_rounds(), 32);

        let mut s = SuccessiveElimination::at_round_start(vec![0.9, 0.45], 32, config);
        assert_eq!(s.next_arm().unwrap(), 0);
        s.update(0.9).unwrap();
        assert_eq!(s.active(), &[0, 1]);
        assert_eq!(s.next_arm().unwrap(), 1);
    }

    #[test]
    fn single_arm_forever() {
        let mut s = SuccessiveElimination::with_arms(3, vec![1], SeConfig::new(10.0, 1.0).unwrap()).unwrap();
        for i in 1..=50u64 {
            assert_eq!(s.next_arm().unwrap(), 1);
            assert_eq!(s.round(), i);
            s.update(0.3).unwrap();
        }
        assert_eq!(s.completed_rounds(), 50);
    }

    #[test]
    fn protocol_violations() {
        let mut s = se(2, 10.0, 1.0);
        assert!(matches!(s.update(1.0), Err(Error::Protocol(_))));
        s.next_arm().unwrap();
        assert!(matches!(s.next_arm(), Err(Error::Protocol(_))));
        let mut u = Ucb::<f64>::new(2).unwrap();
        assert!(u.update(0.0).is_err());
        u.next_arm().unwrap();
        assert!(u.next_arm().is_err());
    }

    #[test]
    fn running_mean_update() {
        let mut s = se(2, 100.0, 1.0);
        s.next_arm().unwrap();
        s.update(0.4).unwrap();
        assert_eq!(s.means()[0], 0.4);
        s.next_arm().unwrap();
        s.update(0.0).unwrap();
        assert_eq!(s.next_arm().unwrap(), 0);
        s.update(1.0).unwrap();
        assert_abs_diff_eq!(s.means()[0], 0.7, epsilon = 1e-12);
    }

    /// First round `tau` at which `gap > gamma * U(tau, T)`, by direct scan.
    fn scan_elimination_round(gap: f64, t: f64, gamma: f64) -> u64 {
        (1..).find(|&tau| gap > gamma * confidence_radius(tau, t)).unwrap()
    }

    /// Drives `s` with constant rewards and records the round in which each
    /// arm leaves the active set.
    fn constant_run(s: &mut SuccessiveElimination<f64>, rewards: &[f64], steps: usize) -> Vec<Option<u64>> {
        let mut out = vec![None; rewards.len()];
        for _ in 0..steps {
            let arm = s.next_arm().unwrap();
            s.update(rewards[arm]).unwrap();
            for (i, slot) in out.iter_mut().enumerate() {
                if slot.is_none() && !s.is_active(i) {
                    *slot = Some(s.round());
                }
            }
        }
        out
    }

    #[test]
    fn deterministic_winner_survives() {
        let mut s = se(4, 1e4, 1.0);
        let rewards = [0.0, 0.0, 1.0, 0.0];
        let elim = constant_run(&mut s, &rewards, 10_000);
        assert_eq!(s.active(), &[2]);
        let expected = scan_elimination_round(1.0, 1e4, 1.0);
        assert_eq!(expected, 44);
        for i in [0, 1, 3] {
            assert_eq!(elim[i], Some(expected));
        }
        assert_eq!(elim[2], None);
        assert_eq!(s.emitted(), 10_000);
    }

    #[test]
    fn two_arm_elimination_matches_scan() {
        for (gap_num, t) in [(1u32, 1e4), (3, 2e4), (8, 1e5), (16, 500.0)] {
            let gap = gap_num as f64 / 32.0;
            let rewards = [0.75, 0.75 - gap];
            let mut s = se(2, t, 1.0);
            let elim = constant_run(&mut s, &rewards, 400_000);
            assert_eq!(elim[1], Some(scan_elimination_round(gap, t, 1.0)), "gap {gap}, T {t}");
        }
    }

    #[test]
    fn ucb_initial_sweep_and_ties() {
        let mut u = Ucb::<f64>::new(3).unwrap();
        for expected in 0..3 {
            assert_eq!(u.next_arm().unwrap(), expected);
            u.update(0.5).unwrap();
        }
        assert_eq!(u.next_arm().unwrap(), 0);
    }

    #[test]
    fn ucb_concentrates_on_best_arm() {
        let mut total_bad = 0u64;
        let n = 10_000;
        let reps = 100;
        for rep in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(rep);
            let mut u = Ucb::<f64>::new(2).unwrap();
            for _ in 0..n {
                let arm = u.next_arm().unwrap();
                let p = if arm == 0 { 0.9 } else { 0.1 };
                u.update(if rng.random::<f64>() < p { 1.0 } else { 0.0 }).unwrap();
            }
            total_bad += u.pulls()[1];
        }
        let frac = total_bad as f64 / (n * reps) as f64;
        assert!(frac < 0.10, "suboptimal fraction {frac}");
    }

    /// Per-round sets of pulled arms.
    fn round_sets(s: &mut SuccessiveElimination<f64>, streams: &[Vec<f64>], steps: usize) -> Vec<Vec<usize>> {
        let mut rounds: Vec<Vec<usize>> = Vec::new();
        for _ in 0..steps {
            let arm = s.next_arm().unwrap();
            let r = s.round() as usize;
            if rounds.len() < r {
                rounds.resize(r, Vec::new());
            }
            rounds[r - 1].push(arm);
            let j = s.pulls()[arm] as usize;
            s.update(streams[arm][j % streams[arm].len()]).unwrap();
        }
        for set in &mut rounds {
            set.sort_unstable();
        }
        rounds
    }

    proptest! {
        #[test]
        fn radius_strictly_decreasing(tau in 1u64..100_000, t in 1.0..1e6f64) {
            prop_assert!(confidence_radius(tau + 1, t) < confidence_radius(tau, t));
        }

        #[test]
        fn active_set_nested_and_nonempty(seed in any::<u64>(), k in 2usize..6, t in 10.0..1e4f64, gamma in 1.0..2.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let probs: Vec<f64> = (0..k).map(|_| rng.random()).collect();
            let mut s = se(k, t, gamma);
            let mut prev = s.active().to_vec();
            for _ in 0..3000 {
                let arm = s.next_arm().unwrap();
                prop_assert!(prev.contains(&arm));
                let r = if rng.random::<f64>() < probs[arm] { 1.0 } else { 0.0 };
                s.update(r).unwrap();
                let now = s.active().to_vec();
                prop_assert!(!now.is_empty());
                prop_assert!(now.iter().all(|a| prev.contains(a)));
                for &a in &now {
                    let p = s.pulls()[a];
                    prop_assert!(p + 1 == s.round() || p == s.round());
                }
                prev = now;
            }
        }

        #[test]
        fn label_equivariance(seed in any::<u64>(), perm_seed in any::<u64>()) {
            let k = 4;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let streams: Vec<Vec<f64>> = (0..k)
                .map(|i| {
                    let p = 0.2 + 0.2 * i as f64;
                    (0..4000).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect()
                })
                .collect();
            // Fisher-Yates from perm_seed.
            let mut perm: Vec<usize> = (0..k).collect();
            let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..k).rev() {
                perm.swap(i, prng.random_range(0..=i));
            }
            let mut permuted = vec![Vec::new(); k];
            for i in 0..k {
                permuted[perm[i]] = streams[i].clone();
            }
            let a = round_sets(&mut se(k, 2000.0, 1.0), &streams, 4000);
            let b = round_sets(&mut se(k, 2000.0, 1.0), &permuted, 4000);
            // Compare only rounds completed in both runs.
            let full = a.len().min(b.len()) - 1;
            for r in 0..full {
                let mut mapped: Vec<usize> = a[r].iter().map(|&i| perm[i]).collect();
                mapped.sort_unstable();
                prop_assert_eq!(&mapped, &b[r]);
            }
        }
    }
}
