//! Named acceptance experiments. Each criterion runs a fixed, seeded
//! experiment and reports whether its threshold was met.

use std::fmt;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::Serialize;

use crate::env::{make_proposition_machine, Machine, MachineSpec, StaticMachine};
use crate::error::{Error, Result};
use crate::harness::{
    fit_scaling_exponent, peeling_check, run_many, run_once, static_regret_bound,
    theoretical_slope, BoundForm, HorizonMode, RunConfig, ZeroMeanLaw,
};
use crate::partition::AdaptiveTree;
use crate::policies::{
    choose_m, compute_c0, compute_k0, compute_lb, Abse, Policy, PolicyKind, PolicySpec,
};
use crate::rng::{self, StreamRole};
use crate::se::{SeConfig, SuccessiveElimination};

/// Result of one acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {}: {} ({}; {:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

/// Suite names accepted by [`suite_criteria`].
pub const SUITES: [&str; 5] = ["static", "lemma", "scaling", "partition", "all"];

/// Criterion ids belonging to a named suite.
pub fn suite_criteria(name: &str) -> Result<Vec<u32>> {
    Ok(match name {
        "static" => vec![1, 2, 8],
        "lemma" => vec![3],
        "scaling" => vec![4, 5],
        "partition" => vec![6, 7],
        "all" => (1..=8).collect(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown suite `{other}`; expected one of {}",
                SUITES.join(", ")
            )))
        }
    })
}

/// Runs every criterion of a suite.
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<CriterionOutcome>> {
    suite_criteria(name)?
        .into_iter()
        .map(|id| run_criterion(id, seed))
        .collect()
}

/// Runs one criterion by id.
pub fn run_criterion(id: u32, seed: u64) -> Result<CriterionOutcome> {
    let start = Instant::now();
    let (name, passed, detail) = match id {
        1 => static_bound(seed, HorizonMode::Fixed).map(|(p, d)| ("static elimination bound", p, d))?,
        2 => logarithmic_growth(seed).map(|(p, d)| ("logarithmic growth", p, d))?,
        3 => maximal_inequality(seed).map(|(p, d)| ("peeling maximal inequality", p, d))?,
        4 => adaptive_rate(seed).map(|(p, d)| ("adaptive binning rate", p, d))?,
        5 => easy_problem(seed).map(|(p, d)| ("adaptive vs fixed binning", p, d))?,
        6 => invariants(seed).map(|(p, d)| ("invariant suites", p, d))?,
        7 => analytic_oracles().map(|(p, d)| ("analytic oracles", p, d))?,
        8 => static_bound(seed, HorizonMode::Poisson).map(|(p, d)| ("random horizon bound", p, d))?,
        other => return Err(Error::InvalidArgument(format!("no criterion {other}"))),
    };
    Ok(CriterionOutcome {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn two_arm_static() -> MachineSpec {
    MachineSpec::static_means(vec![0.5, 0.7])
}

fn proposition(alpha: f64) -> MachineSpec {
    MachineSpec::proposition(alpha, 1.0, 2, 1)
}

fn se_config(n: u64, reps: u64, seed: u64) -> RunConfig {
    let mut config = RunConfig::new(two_arm_static(), PolicySpec::new(PolicyKind::Se), n);
    config.reps = reps;
    config.base_seed = seed;
    config
}

type Check = Result<(bool, String)>;

fn static_bound(seed: u64, mode: HorizonMode) -> Check {
    let n = 20_000;
    let mut config = se_config(n, 500, seed);
    config.horizon_mode = mode;
    let agg = run_many(&config)?;
    let bound = static_regret_bound(n as f64, &[0.2], BoundForm::Minimum)?;
    let mean = agg.final_regret.mean;
    Ok((mean <= bound, format!("mean regret {mean:.1} vs bound {bound:.1}")))
}

fn logarithmic_growth(seed: u64) -> Check {
    let small = run_many(&se_config(10_000, 500, seed))?.final_regret.mean;
    let large = run_many(&se_config(100_000, 500, seed ^ 1))?.final_regret.mean;
    let ratio = large / small;
    Ok((
        ratio <= 2.0,
        format!("R(1e5)/R(1e4) = {large:.1}/{small:.1} = {ratio:.3} (limit 2.0)"),
    ))
}

fn maximal_inequality(seed: u64) -> Check {
    let reps = 20_000u64;
    let delta = 0.2;
    let freq = peeling_check(512, delta, (-0.5, 0.5), ZeroMeanLaw::Coin { half: 0.5 }, reps, seed)?;
    let limit = delta + 3.0 * (delta * (1.0 - delta) / reps as f64).sqrt();
    Ok((freq <= limit, format!("frequency {freq:.4} vs limit {limit:.4}")))
}

fn adaptive_rate(seed: u64) -> Check {
    let alpha = 0.5;
    let points = (12..=18)
        .map(|j| {
            let n = 1u64 << j;
            let mut config = RunConfig::new(proposition(alpha), PolicySpec::new(PolicyKind::Abse), n);
            config.reps = 100;
            config.base_seed = rng::rep_seed(seed, n);
            Ok((n as f64, run_many(&config)?.final_regret.mean))
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_scaling_exponent(&points)?;
    let target = theoretical_slope(alpha, 1.0, 1);
    Ok((
        (fit.slope - target).abs() <= 0.15,
        format!("slope {:.3} ± {:.3} vs {target:.3} ± 0.15", fit.slope, fit.stderr),
    ))
}

fn easy_problem(seed: u64) -> Check {
    let n = 1u64 << 17;
    let run = |kind| {
        let mut config = RunConfig::new(proposition(2.0), PolicySpec::new(kind), n);
        config.reps = 200;
        config.base_seed = seed;
        run_many(&config).map(|a| a.final_regret)
    };
    let abse = run(PolicyKind::Abse)?;
    let bse = run(PolicyKind::Bse)?;
    let passed = abse.mean <= bse.mean && abse.separated_from(&bse);
    Ok((
        passed,
        format!(
            "ABSE {:.1} [{:.1}, {:.1}] vs BSE {:.1} [{:.1}, {:.1}]",
            abse.mean, abse.ci_low, abse.ci_high, bse.mean, bse.ci_low, bse.ci_high
        ),
    ))
}

type InvariantCheck = fn(u64) -> std::result::Result<(), String>;

fn invariants(seed: u64) -> Check {
    let checks: [(&str, InvariantCheck); 4] = [
        ("random bursts", random_bursts),
        ("elimination sets", elimination_sets),
        ("adaptive nesting", adaptive_nesting),
        ("thread replay", thread_replay),
    ];
    let mut failures = Vec::new();
    for (name, check) in checks {
        if let Err(e) = check(seed) {
            failures.push(format!("{name}: {e}"));
        }
    }
    if failures.is_empty() {
        Ok((true, "bursts, elimination sets, nesting and replay hold".into()))
    } else {
        Ok((false, failures.join("; ")))
    }
}

/// `10^4` random bursts of a 2-d tree, then volume and unique-containment
/// checks against a brute-force scan of the live bins.
pub fn random_bursts(seed: u64) -> std::result::Result<(), String> {
    let mut rng = rng::stream(seed, 0, StreamRole::Auxiliary);
    let mut tree = AdaptiveTree::new(2, 16, vec![0, 1], ()).map_err(|e| e.to_string())?;
    let mut live = vec![tree.root()];
    let mut bursts = 0;
    while bursts < 10_000 {
        let pick = rng.random_range(0..live.len());
        let index = live[pick];
        if tree.node(index).depth() >= tree.max_depth() {
            continue;
        }
        live.swap_remove(pick);
        live.extend(tree.burst(index, vec![0, 1], |_| ()).map_err(|e| e.to_string())?);
        bursts += 1;
    }
    tree.check_invariants()?;
    let live: Vec<usize> = tree.live_nodes().collect();
    for _ in 0..1000 {
        let x = [rng.random::<f64>(), rng.random::<f64>()];
        let hits: Vec<usize> = live
            .iter()
            .copied()
            .filter(|&i| tree.node(i).id.contains(&x))
            .collect();
        if hits.len() != 1 || hits[0] != tree.live_bin_of(&x) {
            return Err(format!("point {x:?} lies in live bins {hits:?}"));
        }
    }
    Ok(())
}

/// Active sets over `10^3` random reward streams stay sorted, nonempty and
/// nested.
pub fn elimination_sets(seed: u64) -> std::result::Result<(), String> {
    for stream in 0..1000u64 {
        let mut rng = rng::stream(seed, stream, StreamRole::Reward);
        let arms = rng.random_range(2..=6);
        let means: Vec<f64> = (0..arms).map(|_| rng.random()).collect();
        let gamma = *[1.0, 2.0].choose(&mut rng).expect("nonempty");
        let horizon = rng.random_range(50.0..5000.0);
        let cfg = SeConfig::new(horizon, gamma).map_err(|e| e.to_string())?;
        let mut se = SuccessiveElimination::new(arms, cfg).map_err(|e| e.to_string())?;
        let mut prev = se.active().to_vec();
        for _ in 0..2000 {
            let arm = se.next_arm().map_err(|e| e.to_string())?;
            let reward = if rng.random::<f64>() < means[arm] { 1.0 } else { 0.0 };
            se.update(reward).map_err(|e| e.to_string())?;
            let now = se.active();
            if now.is_empty()
                || now.windows(2).any(|w| w[0] >= w[1])
                || !now.iter().all(|a| prev.contains(a))
            {
                return Err(format!("stream {stream}: active set {now:?} after {prev:?}"));
            }
            prev = now.to_vec();
        }
    }
    Ok(())
}

/// Arm-set nesting and partition exactness of adaptive binning across 100
/// seeded runs.
pub fn adaptive_nesting(seed: u64) -> std::result::Result<(), String> {
    let n = 8192u64;
    for run in 0..100u64 {
        let mut streams = rng::Streams::new(seed, run);
        let arms = 2 + (run % 3) as usize;
        let alpha = [0.5, 1.0, 2.0][(run % 3) as usize];
        let machine = Machine::Covariate(make_proposition_machine(alpha, 1.0, arms, 1).map_err(|e| e.to_string())?);
        let class = *machine.class_params().expect("covariate machine");
        let mut abse = Abse::<f64>::new(n, arms, 1, class.beta, class.lipschitz).map_err(|e| e.to_string())?;
        let mut x = Vec::new();
        for t in 1..=n {
            machine.draw_covariate_into(&mut streams.covariate, &mut x);
            let arm = abse.act(&x).map_err(|e| e.to_string())?;
            let reward = machine.draw_reward(arm, &x, &mut streams.reward).map_err(|e| e.to_string())?;
            abse.feed(reward).map_err(|e| e.to_string())?;
            if t % 512 == 0 || t == n {
                check_adaptive_tree(&abse, n).map_err(|e| format!("run {run}, t = {t}: {e}"))?;
            }
        }
    }
    Ok(())
}

fn check_adaptive_tree(abse: &Abse<f64>, n: u64) -> std::result::Result<(), String> {
    let tree = abse.tree();
    tree.check_invariants()?;
    for i in tree.live_nodes() {
        let node = tree.node(i);
        let cell = node.payload.as_ref().expect("live node");
        if !cell.se.active().iter().all(|a| node.arms.contains(a)) {
            return Err(format!("bin {i} activates arms outside its born set"));
        }
        let expected = n as f64 * 2f64.powi(-(node.depth() as i32));
        if cell.se.config().horizon() != expected || cell.se.config().gamma() != Abse::<f64>::GAMMA {
            return Err(format!("bin {i} has a mis-scaled elimination config"));
        }
    }
    Ok(())
}

/// `run_many` is bit-identical on pools of 1, 2 and 4 threads.
pub fn thread_replay(seed: u64) -> std::result::Result<(), String> {
    let mut config = RunConfig::new(proposition(1.0), PolicySpec::new(PolicyKind::Abse), 4096);
    config.reps = 8;
    config.base_seed = seed;
    let run_on = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?
            .install(|| run_many(&config))
            .map_err(|e| e.to_string())
    };
    let reference = run_on(1)?;
    for threads in [2, 4] {
        let other = run_on(threads)?;
        let same = reference.traces.iter().zip(&other.traces).all(|(a, b)| {
            a.regret.iter().map(|v| v.to_bits()).eq(b.regret.iter().map(|v| v.to_bits()))
        });
        if !same || reference.final_regret != other.final_regret {
            return Err(format!("results differ between 1 and {threads} threads"));
        }
    }
    let direct = run_once(&config, 3).map_err(|e| e.to_string())?;
    if direct != reference.traces[3] {
        return Err("run_once disagrees with run_many".into());
    }
    Ok(())
}

fn ln_k(arms: usize) -> f64 {
    arms as f64 * (arms as f64).ln()
}

/// Largest `m >= 1` with `m^{2 beta + d} <= n / (K ln K)`, by linear scan.
fn scan_m(n: f64, arms: usize, d: usize, beta: f64) -> u64 {
    let ratio = n / ln_k(arms);
    let e = 2.0 * beta + d as f64;
    let mut m = 1u64;
    while ((m + 1) as f64).powf(e) <= ratio {
        m += 1;
    }
    m
}

/// Smallest `k >= 0` with `2^{-k} <= (K ln K / n)^{1/(d + 2 beta)}`.
fn scan_k0(n: f64, arms: usize, d: usize, beta: f64) -> u32 {
    let threshold = (ln_k(arms) / n).powf(1.0 / (d as f64 + 2.0 * beta));
    (0u32..).find(|&k| 2f64.powi(-(k as i32)) <= threshold).expect("threshold is positive")
}

/// Smallest `l >= 1` with `U(l, n 2^{-kd}) <= 2 c0 2^{-k beta}`.
fn scan_lb(depth: u32, n: f64, c0: f64, beta: f64, d: usize) -> u64 {
    let width = 2f64.powi(-(depth as i32));
    let horizon = n * width.powi(d as i32);
    let target = 2.0 * c0 * width.powf(beta);
    let radius = |l: f64| 2.0 * (2.0 * (horizon / l).ln().max(1.0) / l).sqrt();
    (1u64..).find(|&l| radius(l as f64) <= target).expect("radius vanishes")
}

fn analytic_oracles() -> Check {
    let mut mismatches = Vec::new();
    let mut cases = 0;
    let ns = [1e3, 4096.0, 2e4, 1e5, 1e6];
    let shapes = [(2usize, 1usize, 1.0f64), (2, 1, 0.5), (3, 2, 1.0), (5, 1, 0.25), (4, 3, 0.75)];
    let mut grid = Vec::new();
    for &n in &ns {
        for &(arms, d, beta) in &shapes {
            grid.push((n, arms, d, beta, 0.5));
            grid.push((n, arms, d, beta, 1.0));
        }
    }
    for (n, arms, d, beta, lipschitz) in grid {
        cases += 1;
        let m = choose_m(n, arms, d, beta);
        if m != scan_m(n, arms, d, beta) {
            mismatches.push(format!("M at {n},{arms},{d},{beta}"));
        }
        let k0 = compute_k0(n, arms, d, beta)?;
        if k0 != scan_k0(n, arms, d, beta) {
            mismatches.push(format!("k0 at {n},{arms},{d},{beta}"));
        }
        let c0 = compute_c0(lipschitz, d, beta);
        for depth in 0..=k0 {
            if compute_lb(depth, n, c0, beta, d) != scan_lb(depth, n, c0, beta, d) {
                mismatches.push(format!("lB at depth {depth}, {n},{arms},{d},{beta},{lipschitz}"));
            }
        }
    }
    if mismatches.is_empty() {
        Ok((true, format!("{cases} grid points agree exactly")))
    } else {
        Ok((false, mismatches.join("; ")))
    }
}

/// Mean final regret of plain elimination on a static machine with a
/// doubling wrapper versus the known horizon.
pub fn doubling_overhead(machine: StaticMachine<f64>, n: u64, reps: u64, seed: u64) -> Result<(f64, f64)> {
    let spec = MachineSpec::static_means(machine.means().to_vec());
    let mut known = RunConfig::new(spec, PolicySpec::new(PolicyKind::Se), n);
    known.reps = reps;
    known.base_seed = seed;
    let mut doubled = known.clone();
    doubled.policy.params.doubling = true;
    Ok((
        run_many(&known)?.final_regret.mean,
        run_many(&doubled)?.final_regret.mean,
    ))
}
