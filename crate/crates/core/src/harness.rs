//! Simulation harness: seeded policy-vs-machine runs, regret traces,
//! aggregation over replications, closed-form comparators, log-log scaling
//! fits and an empirical check of the peeling maximal inequality.
//!
//! Regret is pseudo-regret, `sum_t f*(X_t) - f_{pi_t}(X_t)`, computed from the
//! machine's mean functions rather than realized rewards.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Machine, MachineSpec};
use crate::error::{Error, Result};
use crate::partition::TreeSnapshot;
use crate::policies::{Policy, PolicySpec};
use crate::rng::{self, StreamRole, Streams};
use crate::scalar::Scalar;
use crate::se::blog;

/// How the realized horizon is drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HorizonMode {
    /// The game lasts exactly `n` steps.
    #[default]
    Fixed,
    /// The game lasts `N ~ Poisson(n)` steps; policies still receive `n`.
    Poisson,
}

/// One experiment: a machine, a policy and a replication plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub machine: MachineSpec,
    pub policy: PolicySpec,
    pub n: u64,
    #[serde(default)]
    pub horizon_mode: HorizonMode,
    #[serde(default = "default_reps")]
    pub reps: u64,
    #[serde(default)]
    pub base_seed: u64,
    /// Checkpoint times; defaults to [`default_checkpoints`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    /// Also record regret against realized rewards.
    #[serde(default)]
    pub realized: bool,
}

fn default_reps() -> u64 {
    1
}

impl RunConfig {
    pub fn new(machine: MachineSpec, policy: PolicySpec, n: u64) -> Self {
        Self {
            machine,
            policy,
            n,
            horizon_mode: HorizonMode::Fixed,
            reps: 1,
            base_seed: 0,
            checkpoints: None,
            realized: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if let Some(cp) = &self.checkpoints {
            if cp.is_empty() || cp.windows(2).any(|w| w[0] >= w[1]) || cp[0] == 0 {
                return Err(Error::invalid("checkpoints must be positive and strictly increasing"));
            }
            if *cp.last().unwrap() != self.n {
                return Err(Error::invalid("the last checkpoint must equal n"));
            }
        }
        Ok(())
    }

    pub fn checkpoint_times(&self) -> Vec<u64> {
        self.checkpoints
            .clone()
            .unwrap_or_else(|| default_checkpoints(self.n))
    }
}

/// `{ceil(n 2^-j) : j >= 0}`, ascending, ending at `n`.
pub fn default_checkpoints(n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut j = 0u32;
    loop {
        let t = if j >= 64 { 1 } else { n.div_ceil(1u64 << j) };
        if out.last() != Some(&t) {
            out.push(t);
        }
        if t <= 1 {
            break;
        }
        j += 1;
    }
    out.reverse();
    out
}

/// Cumulative pseudo-regret of one replication at its checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub rep: u64,
    /// Seed of the replication's streams.
    pub seed: u64,
    pub checkpoints: Vec<u64>,
    /// Regret at `min(checkpoint, horizon)`.
    pub regret: Vec<f64>,
    /// Realized horizon `N`.
    pub horizon: u64,
    /// Regret at the realized horizon.
    pub final_regret: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized: Option<Vec<f64>>,
}

/// Plays `policy` against `machine` for `horizon` steps, recording regret
/// at each checkpoint (clamped to the horizon).
pub fn simulate<F: Scalar, P: Policy<F> + ?Sized>(
    machine: &Machine<F>,
    policy: &mut P,
    horizon: u64,
    checkpoints: &[u64],
    streams: &mut Streams,
    realized: bool,
) -> Result<(Vec<f64>, f64, Option<Vec<f64>>)> {
    check_arity(machine, policy)?;
    let mut x = Vec::with_capacity(machine.dim());
    let mut regret = 0.0f64;
    let mut realized_regret = 0.0f64;
    let mut at_cp = Vec::with_capacity(checkpoints.len());
    let mut realized_cp = Vec::with_capacity(if realized { checkpoints.len() } else { 0 });
    let mut next = 0;
    let mut record = |t: u64, r: f64, rr: f64, at_cp: &mut Vec<f64>, realized_cp: &mut Vec<f64>| {
        while next < checkpoints.len() && checkpoints[next] <= t {
            at_cp.push(r);
            if realized {
                realized_cp.push(rr);
            }
            next += 1;
        }
    };
    record(0, 0.0, 0.0, &mut at_cp, &mut realized_cp);
    for t in 1..=horizon {
        machine.draw_covariate_into(&mut streams.covariate, &mut x);
        let arm = policy.act(&x)?;
        if arm >= machine.num_arms() {
            return Err(Error::ArmOutOfRange { arm, arms: machine.num_arms() });
        }
        let reward = machine.draw_reward(arm, &x, &mut streams.reward)?;
        policy.feed(reward)?;
        let best = machine.fstar(&x);
        regret += (best - machine.mean(arm, &x)).as_f64();
        if realized {
            realized_regret += (best - reward).as_f64();
        }
        record(t, regret, realized_regret, &mut at_cp, &mut realized_cp);
    }
    // Checkpoints past the realized horizon keep the final value.
    while at_cp.len() < checkpoints.len() {
        at_cp.push(regret);
        if realized {
            realized_cp.push(realized_regret);
        }
    }
    Ok((at_cp, regret, realized.then_some(realized_cp)))
}

fn check_arity<F: Scalar, P: Policy<F> + ?Sized>(machine: &Machine<F>, policy: &P) -> Result<()> {
    if policy.num_arms() != machine.num_arms() {
        return Err(Error::Arity(format!(
            "policy has {} arms but the machine has {}",
            policy.num_arms(),
            machine.num_arms()
        )));
    }
    if let Some(d) = policy.dim() {
        if d != machine.dim() {
            return Err(Error::Arity(format!(
                "policy routes on dimension {d} but the machine has d = {}",
                machine.dim()
            )));
        }
    }
    Ok(())
}

/// Draws the realized horizon for one replication.
pub fn draw_horizon<R: Rng + ?Sized>(n: u64, mode: HorizonMode, rng: &mut R) -> u64 {
    match mode {
        HorizonMode::Fixed => n,
        HorizonMode::Poisson => {
            let law = Poisson::new(n as f64).expect("n is positive");
            law.sample(rng) as u64
        }
    }
}

/// One replication with an explicit machine and policy.
#[allow(clippy::too_many_arguments)]
pub fn run_with<F: Scalar, P: Policy<F> + ?Sized>(
    machine: &Machine<F>,
    policy: &mut P,
    n: u64,
    mode: HorizonMode,
    checkpoints: &[u64],
    base_seed: u64,
    rep: u64,
    realized: bool,
) -> Result<RegretTrace> {
    let mut streams = Streams::new(base_seed, rep);
    let horizon = draw_horizon(n, mode, &mut streams.horizon);
    let (regret, final_regret, realized) =
        simulate(machine, policy, horizon, checkpoints, &mut streams, realized)?;
    Ok(RegretTrace {
        rep,
        seed: rng::rep_seed(base_seed, rep),
        checkpoints: checkpoints.to_vec(),
        regret,
        horizon,
        final_regret,
        realized,
    })
}

/// Replication `rep` of `config`; deterministic in `(config, rep)`.
pub fn run_once(config: &RunConfig, rep: u64) -> Result<RegretTrace> {
    run_once_as::<f64>(config, rep)
}

/// [`run_once`] with a chosen scalar type.
pub fn run_once_as<F: Scalar>(config: &RunConfig, rep: u64) -> Result<RegretTrace> {
    run_once_with_snapshot::<F>(config, rep).map(|(trace, _)| trace)
}

/// [`run_once_as`], also returning the policy's final partition if it keeps
/// one.
pub fn run_once_with_snapshot<F: Scalar>(
    config: &RunConfig,
    rep: u64,
) -> Result<(RegretTrace, Option<TreeSnapshot>)> {
    config.validate()?;
    let machine = config.machine.build::<F>()?;
    let mut policy = config.policy.build(&machine, config.n)?;
    let trace = run_with(
        &machine,
        &mut policy,
        config.n,
        config.horizon_mode,
        &config.checkpoint_times(),
        config.base_seed,
        rep,
        config.realized,
    )?;
    Ok((trace, policy.snapshot()))
}

/// Point summary across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (0 for a single replication).
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    /// Mean, sample sd and a normal-approximation 95% interval.
    pub fn of(values: &[f64]) -> Self {
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        let half = 1.96 * sd / k.sqrt();
        Self {
            mean,
            sd,
            ci_low: mean - half,
            ci_high: mean + half,
        }
    }

    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    /// Whether the two confidence intervals are disjoint.
    pub fn separated_from(&self, other: &Summary) -> bool {
        self.ci_high < other.ci_low || other.ci_high < self.ci_low
    }
}

/// Per-checkpoint summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub t: u64,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Replications of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub checkpoints: Vec<CheckpointSummary>,
    /// Summary of the regret at the realized horizon.
    #[serde(rename = "final")]
    pub final_regret: Summary,
    #[serde(skip)]
    pub traces: Vec<RegretTrace>,
}

/// Aggregates traces in ascending `rep` order, so the result does not depend
/// on the order traces were produced in.
pub fn aggregate(mut traces: Vec<RegretTrace>) -> Result<Aggregate> {
    if traces.is_empty() {
        return Err(Error::invalid("nothing to aggregate"));
    }
    traces.sort_by_key(|t| t.rep);
    let times = traces[0].checkpoints.clone();
    if traces.iter().any(|t| t.checkpoints != times) {
        return Err(Error::invalid("traces have different checkpoints"));
    }
    let checkpoints = times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let column: Vec<f64> = traces.iter().map(|tr| tr.regret[j]).collect();
            CheckpointSummary {
                t,
                summary: Summary::of(&column),
            }
        })
        .collect();
    let finals: Vec<f64> = traces.iter().map(|t| t.final_regret).collect();
    Ok(Aggregate {
        checkpoints,
        final_regret: Summary::of(&finals),
        traces,
    })
}

/// Runs all replications of `config` on the current rayon pool.
pub fn run_many(config: &RunConfig) -> Result<Aggregate> {
    config.validate()?;
    // Surface configuration errors once, before fanning out.
    let machine = config.machine.build::<f64>()?;
    config.policy.build(&machine, config.n)?;
    let traces = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_once(config, rep))
        .collect::<Result<Vec<_>>>()?;
    aggregate(traces)
}

/// A sweep over horizons and policies on one machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub machine: MachineSpec,
    pub policies: Vec<PolicySpec>,
    pub n_values: Vec<u64>,
    #[serde(default)]
    pub horizon_mode: HorizonMode,
    #[serde(default = "default_reps")]
    pub reps: u64,
    #[serde(default)]
    pub base_seed: u64,
}

impl SweepConfig {
    /// Run configuration for one `(policy, n)` cell. Each horizon gets its own
    /// derived seed.
    pub fn run_config(&self, policy: &PolicySpec, n: u64) -> RunConfig {
        RunConfig {
            machine: self.machine.clone(),
            policy: policy.clone(),
            n,
            horizon_mode: self.horizon_mode,
            reps: self.reps,
            base_seed: rng::rep_seed(self.base_seed, n),
            checkpoints: None,
            realized: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: u64,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub policy: String,
    pub points: Vec<SweepPoint>,
    /// Log-log fit of mean final regret against `n`, when it can be fitted.
    pub fit: Option<ScalingFit>,
}

/// Runs every `(policy, n)` cell of the sweep.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepSeries>> {
    if config.n_values.is_empty() || config.policies.is_empty() {
        return Err(Error::invalid("a sweep needs at least one policy and one n"));
    }
    config
        .policies
        .iter()
        .map(|policy| {
            let points = config
                .n_values
                .iter()
                .map(|&n| {
                    Ok(SweepPoint {
                        n,
                        aggregate: run_many(&config.run_config(policy, n))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let xy: Vec<(f64, f64)> = points
                .iter()
                .map(|p| (p.n as f64, p.aggregate.final_regret.mean))
                .collect();
            Ok(SweepSeries {
                policy: policy.label(),
                points,
                fit: fit_scaling_exponent(&xy).ok(),
            })
        })
        .collect()
}

/// Which form of the static regret bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundForm {
    /// `min{646 sum_i blog(n D_i^2)/D_i, 166 sqrt(n K ln K)}`.
    Minimum,
    /// The bound indexed by a cutoff `K0`, minimized over `K0`.
    BestCutoff,
}

/// Closed-form upper bound on the expected regret of elimination run with
/// `T = n` and `gamma = 1`, for a machine whose suboptimal arms have `gaps`
/// (zero entries denote additional optimal arms).
///
/// The gap-free term uses the total number of arms, `gaps.len() + 1`.
pub fn static_regret_bound(n: f64, gaps: &[f64], form: BoundForm) -> Result<f64> {
    if !(n > 0.0) {
        return Err(Error::invalid("n must be positive"));
    }
    if gaps.iter().any(|&g| !(g >= 0.0)) {
        return Err(Error::invalid("gaps must be nonnegative"));
    }
    let arms = (gaps.len() + 1) as f64;
    let gap_free = 166.0 * (n * arms * arms.ln()).sqrt();
    let mut positive: Vec<f64> = gaps.iter().copied().filter(|&g| g > 0.0).collect();
    if positive.is_empty() {
        return Ok(gap_free);
    }
    positive.sort_by(|a, b| b.partial_cmp(a).expect("finite gaps"));
    let phi = |g: f64| blog(n * g * g).expect("positive argument") / g;
    match form {
        BoundForm::Minimum => {
            let gap_term = 646.0 * positive.iter().map(|&g| phi(g)).sum::<f64>();
            Ok(gap_term.min(gap_free))
        }
        BoundForm::BestCutoff => {
            let m = positive.len();
            let best = (1..=m)
                .map(|k0| {
                    let head: f64 = positive[..k0].iter().map(|&g| phi(g)).sum();
                    let cut = positive[k0 - 1];
                    let tail = 304.0 * (m - k0) as f64 * phi(cut);
                    let rest = positive.get(k0).map_or(0.0, |&g| n * g);
                    646.0 * head + tail + rest
                })
                .fold(f64::INFINITY, f64::min);
            Ok(best)
        }
    }
}

/// Ordinary least squares fit of `ln regret` on `ln n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    /// Points used by the fit.
    pub points: usize,
}

/// Fits `ln regret = intercept + slope ln n`. Nonpositive points are dropped
/// with a warning; at least three positive points are required.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<ScalingFit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(n, r)| {
            let keep = n > 0.0 && r > 0.0;
            if !keep {
                log::warn!("dropping nonpositive point ({n}, {r}) from the scaling fit");
            }
            keep
        })
        .map(|&(n, r)| (n.ln(), r.ln()))
        .collect();
    if logs.len() < 3 {
        return Err(Error::invalid(format!(
            "a scaling fit needs at least 3 positive points, got {}",
            logs.len()
        )));
    }
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("scaling fit needs at least two distinct n"));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = (ssr / (k - 2.0) / sxx).sqrt();
    Ok(ScalingFit {
        slope,
        intercept,
        stderr,
        points: logs.len(),
    })
}

/// Regret-rate exponent `1 - beta (alpha + 1) / (2 beta + d)`.
pub fn theoretical_slope(alpha: f64, beta: f64, d: usize) -> f64 {
    1.0 - beta * (alpha + 1.0) / (2.0 * beta + d as f64)
}

/// Mean-zero increments for the peeling check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ZeroMeanLaw {
    /// `Z = 0`.
    Zero,
    /// `Z = +h` or `-h` with equal probability.
    Coin { half: f64 },
    /// `Z ~ Uniform[-h, h]`.
    Uniform { half: f64 },
}

impl ZeroMeanLaw {
    fn support(&self) -> (f64, f64) {
        match *self {
            ZeroMeanLaw::Zero => (0.0, 0.0),
            ZeroMeanLaw::Coin { half } | ZeroMeanLaw::Uniform { half } => (-half, half),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ZeroMeanLaw::Zero => 0.0,
            ZeroMeanLaw::Coin { half } => {
                if rng.random::<bool>() {
                    half
                } else {
                    -half
                }
            }
            ZeroMeanLaw::Uniform { half } => half * (2.0 * rng.random::<f64>() - 1.0),
        }
    }
}

/// Frequency, over `reps` independent sequences, of the event that some
/// running mean `Zbar_t` (`t <= T`) reaches
/// `sqrt(2 (b-a)^2 / t * ln(4 T / (delta t)))`.
///
/// The bound `(a, b)` must contain the support of `law`.
pub fn peeling_check(
    horizon: u64,
    delta: f64,
    bounds: (f64, f64),
    law: ZeroMeanLaw,
    reps: u64,
    seed: u64,
) -> Result<f64> {
    let (a, b) = bounds;
    let (lo, hi) = law.support();
    if !(a <= lo && hi <= b) {
        return Err(Error::invalid(format!(
            "support [{lo}, {hi}] is not contained in [{a}, {b}]"
        )));
    }
    peeling_frequency(horizon, delta, bounds, law, reps, seed)
}

/// [`peeling_check`] without the support check, for monotonicity
/// experiments that shrink the bound below the support.
pub fn peeling_frequency(
    horizon: u64,
    delta: f64,
    (a, b): (f64, f64),
    law: ZeroMeanLaw,
    reps: u64,
    seed: u64,
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta must lie in (0, 1)"));
    }
    if !(a <= 0.0 && 0.0 <= b && a < b) {
        return Err(Error::invalid("bounds must satisfy a <= 0 <= b and a < b"));
    }
    if horizon == 0 || reps == 0 {
        return Err(Error::invalid("T and reps must be positive"));
    }
    let width2 = (b - a).powi(2);
    let tf = horizon as f64;
    let thresholds: Vec<f64> = (1..=horizon)
        .map(|t| {
            let t = t as f64;
            (2.0 * width2 / t * (4.0 / delta * tf / t).ln()).sqrt()
        })
        .collect();
    let hits: u64 = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(seed, rep, StreamRole::Auxiliary);
            let mut sum = 0.0;
            for (i, &eps) in thresholds.iter().enumerate() {
                sum += law.sample(&mut rng);
                if sum / (i + 1) as f64 >= eps {
                    return 1;
                }
            }
            0
        })
        .sum();
    Ok(hits as f64 / reps as f64)
}

/// Writes traces as CSV rows `run_id,rep,t,regret`.
pub fn write_traces_csv<W: Write>(
    writer: W,
    rows: impl IntoIterator<Item = (String, RegretTrace)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Config(format!("writing CSV: {e}"));
    w.write_record(["run_id", "rep", "t", "regret"]).map_err(io)?;
    for (run_id, trace) in rows {
        for (&t, &r) in trace.checkpoints.iter().zip(&trace.regret) {
            w.write_record([run_id.clone(), trace.rep.to_string(), t.to_string(), r.to_string()])
                .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Config(format!("writing CSV: {e}")))?;
    Ok(())
}

/// Parsed CSV trace row.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TraceRow {
    pub run_id: String,
    pub rep: u64,
    pub t: u64,
    pub regret: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StaticMachine;
    use crate::policies::{FixedArm, OraclePolicy, PolicyKind};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn static_spec(means: &[f64]) -> MachineSpec {
        serde_json::from_value(serde_json::json!({
            "family": "static", "params": {"means": means}, "K": means.len()
        }))
        .unwrap()
    }

    fn prop_spec(alpha: f64) -> MachineSpec {
        serde_json::from_value(serde_json::json!({
            "family": "proposition", "params": {"alpha": alpha, "L": 1.0}, "d": 1, "K": 2
        }))
        .unwrap()
    }

    #[test]
    fn checkpoint_grid() {
        assert_eq!(default_checkpoints(1), vec![1]);
        assert_eq!(default_checkpoints(10), vec![1, 2, 3, 5, 10]);
        assert_eq!(default_checkpoints(16), vec![1, 2, 4, 8, 16]);
        let cp = default_checkpoints(20_000);
        assert_eq!(*cp.last().unwrap(), 20_000);
        assert!(cp.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn oracle_has_zero_regret() {
        let machine = prop_spec(0.5).build::<f64>().unwrap();
        let mut oracle = OraclePolicy::new(machine.clone());
        let cp = default_checkpoints(2000);
        let trace = run_with(&machine, &mut oracle, 2000, HorizonMode::Fixed, &cp, 1, 0, false).unwrap();
        assert!(trace.regret.iter().all(|&r| r == 0.0));

        let mut config = RunConfig::new(prop_spec(0.5), PolicySpec::new(PolicyKind::Oracle), 500);
        config.reps = 3;
        assert_eq!(run_many(&config).unwrap().final_regret.mean, 0.0);
    }

    #[test]
    fn fixed_arm_regret_is_linear() {
        let machine = Machine::Static(StaticMachine::bernoulli(vec![0.5, 0.9]).unwrap());
        let mut policy = FixedArm::new(0, 2).unwrap();
        let cp = default_checkpoints(1000);
        let trace = run_with(&machine, &mut policy, 1000, HorizonMode::Fixed, &cp, 2, 0, false).unwrap();
        for (&t, &r) in cp.iter().zip(&trace.regret) {
            assert_abs_diff_eq!(r, 0.4 * t as f64, epsilon = 1e-9 * t as f64);
        }
    }

    #[test]
    fn arity_mismatch() {
        let machine = Machine::Static(StaticMachine::bernoulli(vec![0.5, 0.9]).unwrap());
        let mut policy = FixedArm::new(0, 3).unwrap();
        let err = run_with(&machine, &mut policy, 10, HorizonMode::Fixed, &[10], 0, 0, false).unwrap_err();
        assert!(matches!(err, Error::Arity(_)));
        let covariate = prop_spec(1.0).build::<f64>().unwrap();
        let mut bse = crate::policies::Bse::<f64>::new(100, 2, 2, 2).unwrap();
        assert!(matches!(
            run_with(&covariate, &mut bse, 10, HorizonMode::Fixed, &[10], 0, 0, false),
            Err(Error::Arity(_))
        ));
    }

    #[test]
    fn run_once_is_deterministic() {
        let mut config = RunConfig::new(prop_spec(0.5), PolicySpec::new(PolicyKind::Abse), 4096);
        config.base_seed = 99;
        let a = run_once(&config, 3).unwrap();
        let b = run_once(&config, 3).unwrap();
        assert_eq!(a, b);
        let c = run_once(&config, 4).unwrap();
        assert_ne!(a.regret, c.regret);
        // f32 scalar path runs too.
        let f = run_once_as::<f32>(&config, 3).unwrap();
        assert_eq!(f.checkpoints, a.checkpoints);
    }

    #[test]
    fn single_rep_aggregate() {
        let mut config = RunConfig::new(static_spec(&[0.5, 0.7]), PolicySpec::new(PolicyKind::Se), 1000);
        config.reps = 1;
        let agg = run_many(&config).unwrap();
        let trace = &agg.traces[0];
        for (cs, &r) in agg.checkpoints.iter().zip(&trace.regret) {
            assert_eq!(cs.summary.mean, r);
            assert_eq!(cs.summary.ci_width(), 0.0);
        }
    }

    #[test]
    fn aggregate_ignores_order() {
        let mut config = RunConfig::new(static_spec(&[0.5, 0.7]), PolicySpec::new(PolicyKind::Se), 500);
        config.reps = 6;
        let traces: Vec<RegretTrace> = (0..6).map(|r| run_once(&config, r).unwrap()).collect();
        let mut shuffled = traces.clone();
        shuffled.reverse();
        shuffled.swap(1, 4);
        assert_eq!(aggregate(traces).unwrap(), aggregate(shuffled).unwrap());
    }

    #[test]
    fn ci_width_scales_with_reps() {
        let mut config = RunConfig::new(static_spec(&[0.5, 0.7]), PolicySpec::new(PolicyKind::Se), 2000);
        config.base_seed = 5;
        config.reps = 400;
        let w1 = run_many(&config).unwrap().final_regret.ci_width();
        config.reps = 800;
        let w2 = run_many(&config).unwrap().final_regret.ci_width();
        let ratio = w2 / w1;
        let expected = 1.0 / 2f64.sqrt();
        assert!((ratio / expected - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn poisson_horizon_varies() {
        let mut config = RunConfig::new(static_spec(&[0.5, 0.7]), PolicySpec::new(PolicyKind::Se), 1000);
        config.horizon_mode = HorizonMode::Poisson;
        let horizons: Vec<u64> = (0..50).map(|r| run_once(&config, r).unwrap().horizon).collect();
        let mean = horizons.iter().sum::<u64>() as f64 / 50.0;
        assert!((mean - 1000.0).abs() < 3.0 * (1000.0f64 / 50.0).sqrt());
        assert!(horizons.iter().any(|&h| h != 1000));
        for r in 0..10 {
            let tr = run_once(&config, r).unwrap();
            if tr.horizon < 1000 {
                assert_eq!(*tr.regret.last().unwrap(), tr.final_regret);
            }
        }
    }

    #[test]
    fn static_bound_values() {
        let v = static_regret_bound(2e4, &[0.2], BoundForm::Minimum).unwrap();
        let gap_term = 646.0 * 800f64.ln() / 0.2;
        assert_abs_diff_eq!(v, gap_term, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 21_591.0, epsilon = 2.0);
        let gap_free = 166.0 * (2e4 * 2.0 * 2f64.ln()).sqrt();
        assert!(gap_free > 27_500.0 && gap_free < 27_700.0);
        // Floor case: n D^2 <= e.
        assert_abs_diff_eq!(
            static_regret_bound(10.0, &[0.5], BoundForm::BestCutoff).unwrap(),
            1292.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            static_regret_bound(1e4, &[0.0], BoundForm::Minimum).unwrap(),
            166.0 * (2e4 * 2f64.ln()).sqrt(),
            epsilon = 1e-9
        );
        // With one gap the cutoff form reduces to the gap sum.
        assert_abs_diff_eq!(
            static_regret_bound(2e4, &[0.2], BoundForm::BestCutoff).unwrap(),
            gap_term,
            epsilon = 1e-9
        );
        let many = [0.5, 0.3, 0.01, 0.01];
        let cut = static_regret_bound(1e5, &many, BoundForm::BestCutoff).unwrap();
        let k0_2 = 646.0 * (blog(1e5 * 0.25).unwrap() / 0.5 + blog(1e5 * 0.09).unwrap() / 0.3)
            + 304.0 * 2.0 / 0.3 * blog(1e5 * 0.09).unwrap()
            + 1e5 * 0.01;
        assert!(cut <= k0_2 + 1e-9);
    }

    #[test]
    fn gap_term_decreasing_in_gap() {
        let n = 1e4;
        let mut prev = f64::INFINITY;
        // phi rises on e < n D^2 < e^2 and falls beyond.
        let start = (std::f64::consts::E.powi(2) / n).sqrt();
        for i in 0..200 {
            let g = start + i as f64 * 0.005;
            let v = blog(n * g * g).unwrap() / g;
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn fit_exact_lines() {
        let pts: Vec<(f64, f64)> = [1e3f64, 1e4, 1e5, 1e6].iter().map(|&n| (n, 3.0 * n.sqrt())).collect();
        let fit = fit_scaling_exponent(&pts).unwrap();
        assert_abs_diff_eq!(fit.slope, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, 3f64.ln(), epsilon = 1e-9);
        assert!(fit.stderr < 1e-9);
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0].iter().map(|&n| (n, 0.1 * n)).collect();
        assert_abs_diff_eq!(fit_scaling_exponent(&pts).unwrap().slope, 1.0, epsilon = 1e-12);
        let with_zero = [(10.0, 0.0), (20.0, 2.0), (40.0, 4.0), (80.0, 8.0)];
        assert_eq!(fit_scaling_exponent(&with_zero).unwrap().points, 3);
        assert!(fit_scaling_exponent(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
    }

    #[test]
    fn peeling_basics() {
        assert_eq!(peeling_check(256, 0.1, (-1.0, 1.0), ZeroMeanLaw::Zero, 100, 0).unwrap(), 0.0);
        assert!(peeling_check(256, 0.0, (-1.0, 1.0), ZeroMeanLaw::Zero, 10, 0).is_err());
        assert!(peeling_check(256, 1.0, (-1.0, 1.0), ZeroMeanLaw::Zero, 10, 0).is_err());
        assert!(peeling_check(256, 0.1, (-0.2, 0.2), ZeroMeanLaw::Coin { half: 0.5 }, 10, 0).is_err());
        let f = peeling_check(128, 0.2, (-0.5, 0.5), ZeroMeanLaw::Uniform { half: 0.5 }, 2000, 1).unwrap();
        assert!(f <= 0.2);
    }

    #[test]
    fn peeling_monotone_in_width() {
        let law = ZeroMeanLaw::Coin { half: 0.5 };
        let mut prev = -1.0;
        for width in [1.0, 0.5, 0.25, 0.125] {
            let f = peeling_frequency(256, 0.2, (-width / 2.0, width / 2.0), law, 2000, 3).unwrap();
            assert!(f >= prev);
            prev = f;
        }
        assert!(prev > 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let mut config = RunConfig::new(static_spec(&[0.5, 0.7]), PolicySpec::new(PolicyKind::Se), 64);
        config.reps = 2;
        let agg = run_many(&config).unwrap();
        let mut buf = Vec::new();
        write_traces_csv(&mut buf, agg.traces.iter().map(|t| ("se".to_string(), t.clone()))).unwrap();
        let mut rdr = csv::Reader::from_reader(&buf[..]);
        assert_eq!(rdr.headers().unwrap(), vec!["run_id", "rep", "t", "regret"]);
        let rows: Vec<TraceRow> = rdr.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2 * agg.traces[0].checkpoints.len());
        assert_eq!(rows[0].regret, agg.traces[0].regret[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn traces_nonnegative_nondecreasing_bounded(seed in any::<u64>(), alpha in 0.3..3.0f64, kind in 0usize..4) {
            let policy = PolicySpec::new([PolicyKind::Se, PolicyKind::Bse, PolicyKind::Abse, PolicyKind::Ucb][kind]);
            let mut config = RunConfig::new(prop_spec(alpha), policy, 3000);
            config.base_seed = seed;
            let machine = config.machine.build::<f64>().unwrap();
            let cap = machine.max_step_regret();
            let trace = run_once(&config, 0).unwrap();
            let mut prev = 0.0;
            for (&t, &r) in trace.checkpoints.iter().zip(&trace.regret) {
                prop_assert!(r >= prev);
                prop_assert!(r <= t as f64 * cap + 1e-9);
                prev = r;
            }
        }
    }
}
