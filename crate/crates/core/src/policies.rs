//! Covariate policies built on successive elimination.
//!
//! [`Bse`] runs an independent elimination instance on every cell of a fixed
//! regular partition; [`Abse`] runs one per live cell of an adaptive dyadic
//! tree and bursts a cell once its instance has completed enough rounds while
//! at least two arms survive. Both follow the `act`/`feed` protocol of
//! [`Policy`].

use serde::{Deserialize, Serialize};

use crate::env::Machine;
use crate::error::{Error, Result};
use crate::partition::{bin_of, linear_index, AdaptiveTree, TreeNode, TreeSnapshot};
use crate::scalar::Scalar;
use crate::se::{confidence_radius, SeConfig, SuccessiveElimination, Ucb};

/// A sequential decision rule interacting with a machine through strict
/// `act`/`feed` alternation.
pub trait Policy<F: Scalar>: Send {
    fn num_arms(&self) -> usize;

    /// Covariate dimension the policy routes on, or `None` if it ignores
    /// covariates.
    fn dim(&self) -> Option<usize> {
        None
    }

    fn act(&mut self, x: &[F]) -> Result<usize>;

    fn feed(&mut self, reward: F) -> Result<()>;

    /// Current adaptive partition, for policies that maintain one.
    fn snapshot(&self) -> Option<TreeSnapshot> {
        None
    }
}

impl<F: Scalar> Policy<F> for SuccessiveElimination<F> {
    fn num_arms(&self) -> usize {
        SuccessiveElimination::num_arms(self)
    }

    fn act(&mut self, _x: &[F]) -> Result<usize> {
        self.next_arm()
    }

    fn feed(&mut self, reward: F) -> Result<()> {
        self.update(reward)
    }
}

impl<F: Scalar> Policy<F> for Ucb<F> {
    fn num_arms(&self) -> usize {
        self.pulls().len()
    }

    fn act(&mut self, _x: &[F]) -> Result<usize> {
        self.next_arm()
    }

    fn feed(&mut self, reward: F) -> Result<()> {
        self.update(reward)
    }
}

impl<F: Scalar, P: Policy<F> + ?Sized> Policy<F> for Box<P> {
    fn num_arms(&self) -> usize {
        (**self).num_arms()
    }

    fn dim(&self) -> Option<usize> {
        (**self).dim()
    }

    fn snapshot(&self) -> Option<TreeSnapshot> {
        (**self).snapshot()
    }

    fn act(&mut self, x: &[F]) -> Result<usize> {
        (**self).act(x)
    }

    fn feed(&mut self, reward: F) -> Result<()> {
        (**self).feed(reward)
    }
}

/// Bins per side for binned elimination:
/// `max(1, floor((n / (K ln K))^{1/(2 beta + d)}))`.
pub fn choose_m<F: Scalar>(n: F, arms: usize, d: usize, beta: F) -> u64 {
    let k = F::of(arms as f64);
    let ratio = n / (k * k.ln());
    if !(ratio >= F::one()) {
        return 1;
    }
    let e = F::of(2.0) * beta + F::of(d as f64);
    let pow = |m: u64| F::of(m as f64).powf(e);
    let mut m = ratio.powf(e.recip()).floor().to_u64().unwrap_or(1).max(1);
    // Repair floating-point rounding at exact boundaries.
    while pow(m + 1) <= ratio {
        m += 1;
    }
    while m > 1 && pow(m) > ratio {
        m -= 1;
    }
    m
}

/// Maximum tree depth: the smallest `k0` with
/// `2^{-k0} <= (K ln K / n)^{1/(d + 2 beta)}`.
pub fn compute_k0<F: Scalar>(n: F, arms: usize, d: usize, beta: F) -> Result<u32> {
    let k = F::of(arms as f64);
    let floor = k * k.ln();
    if n < floor {
        return Err(Error::Config(format!(
            "adaptive binning assumes n >= K ln K, but n = {n} < {floor} for K = {arms}"
        )));
    }
    let threshold = (floor / n).powf((F::of(d as f64) + F::of(2.0) * beta).recip());
    let side = |k0: u32| F::of(2.0).powi(-(k0 as i32));
    let mut k0 = (-threshold.log2()).ceil().max(F::zero()).to_u32().unwrap_or(0);
    while side(k0) > threshold {
        k0 += 1;
    }
    while k0 > 0 && side(k0 - 1) <= threshold {
        k0 -= 1;
    }
    Ok(k0)
}

/// `c0 = 2 L d^{beta/2}`.
pub fn compute_c0<F: Scalar>(lipschitz: F, d: usize, beta: F) -> F {
    F::of(2.0) * lipschitz * F::of(d as f64).powf(beta / F::of(2.0))
}

/// Minimum rounds before a depth-`k` cell may burst: the smallest integer
/// `l >= 1` with `U(l, n 2^{-kd}) <= 2 c0 2^{-k beta}`.
///
/// Uses exponential bracketing and bisection, relying on `U(., T)` being
/// strictly decreasing.
pub fn compute_lb<F: Scalar>(depth: u32, n: F, c0: F, beta: F, d: usize) -> u64 {
    let width = F::of(2.0).powi(-(depth as i32));
    let horizon = n * width.powi(d as i32);
    let target = F::of(2.0) * c0 * width.powf(beta);
    let ok = |l: u64| confidence_radius(l, horizon) <= target;
    if ok(1) {
        return 1;
    }
    let mut hi = 2u64;
    while !ok(hi) {
        hi *= 2;
    }
    let mut lo = hi / 2; // !ok(lo)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Binned successive elimination over the regular `M`-partition.
#[derive(Debug, Clone)]
pub struct Bse<F> {
    m: u64,
    n: u64,
    arms: usize,
    d: usize,
    config: SeConfig<F>,
    bins: Vec<Option<SuccessiveElimination<F>>>,
    counts: Vec<u64>,
    pending: Option<usize>,
}

const MAX_BSE_CELLS: u128 = 1 << 26;

impl<F: Scalar> Bse<F> {
    /// Each cell runs elimination with `T = n M^{-d}` and `gamma = 1`.
    pub fn new(n: u64, arms: usize, d: usize, m: u64) -> Result<Self> {
        if n == 0 || arms < 2 || d == 0 || m == 0 {
            return Err(Error::invalid("binned elimination needs n >= 1, K >= 2, d >= 1, M >= 1"));
        }
        let cells = (m as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
        if cells > MAX_BSE_CELLS {
            return Err(Error::Config(format!("M^d = {m}^{d} cells is too many")));
        }
        let horizon = F::of(n as f64) / F::of(m as f64).powi(d as i32);
        Ok(Self {
            m,
            n,
            arms,
            d,
            config: SeConfig::new(horizon, F::one())?,
            bins: vec![None; cells as usize],
            counts: vec![0; cells as usize],
            pending: None,
        })
    }

    /// Uses [`choose_m`] for the number of bins.
    pub fn with_smoothness(n: u64, arms: usize, d: usize, beta: F) -> Result<Self> {
        Self::new(n, arms, d, choose_m(F::of(n as f64), arms, d, beta))
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn horizon(&self) -> u64 {
        self.n
    }

    pub fn config(&self) -> &SeConfig<F> {
        &self.config
    }

    /// Visit counts `N_B`, in row-major cell order.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// The elimination state of cell `index`, if it has been visited.
    pub fn cell(&self, index: usize) -> Option<&SuccessiveElimination<F>> {
        self.bins[index].as_ref()
    }
}

impl<F: Scalar> Policy<F> for Bse<F> {
    fn num_arms(&self) -> usize {
        self.arms
    }

    fn dim(&self) -> Option<usize> {
        Some(self.d)
    }

    fn act(&mut self, x: &[F]) -> Result<usize> {
        if self.pending.is_some() {
            return Err(Error::Protocol("act called twice without feed"));
        }
        if x.len() != self.d {
            return Err(Error::Arity(format!("expected a {}-dimensional covariate", self.d)));
        }
        let cell = linear_index(&bin_of(x, self.m));
        let se = match &mut self.bins[cell] {
            Some(se) => se,
            slot @ None => slot.insert(SuccessiveElimination::new(self.arms, self.config)?),
        };
        let arm = se.next_arm()?;
        self.counts[cell] += 1;
        self.pending = Some(cell);
        Ok(arm)
    }

    fn feed(&mut self, reward: F) -> Result<()> {
        let cell = self
            .pending
            .take()
            .ok_or(Error::Protocol("feed called without a pending action"))?;
        self.bins[cell]
            .as_mut()
            .expect("pending cell has a state")
            .update(reward)
    }
}

/// Payload of a live cell in [`Abse`].
#[derive(Debug, Clone)]
pub struct AbseCell<F> {
    pub se: SuccessiveElimination<F>,
    /// Rounds required before the cell may burst.
    pub min_rounds: u64,
}

/// Adaptively binned successive elimination.
#[derive(Debug, Clone)]
pub struct Abse<F> {
    tree: AdaptiveTree<AbseCell<F>>,
    n: u64,
    arms: usize,
    d: usize,
    k0: u32,
    c0: F,
    beta: F,
    /// `l_B` by depth.
    min_rounds: Vec<u64>,
    pending: Option<usize>,
    bursts: u64,
}

impl<F: Scalar> Abse<F> {
    pub const GAMMA: f64 = 2.0;

    /// Derives `k0` and `c0` from `(n, K, d, beta, L)`. Fails when
    /// `n < K ln K`.
    pub fn new(n: u64, arms: usize, d: usize, beta: F, lipschitz: F) -> Result<Self> {
        let k0 = compute_k0(F::of(n as f64), arms, d, beta)?;
        Self::with_params(n, arms, d, beta, compute_c0(lipschitz, d, beta), k0)
    }

    /// Like [`Abse::new`], but falls back to `k0 = 0` (a single elimination
    /// instance) when `n < K ln K`. Used by the doubling wrapper, whose early
    /// episodes are shorter than `K ln K`.
    pub fn new_or_flat(n: u64, arms: usize, d: usize, beta: F, lipschitz: F) -> Result<Self> {
        let k0 = compute_k0(F::of(n as f64), arms, d, beta).unwrap_or(0);
        Self::with_params(n, arms, d, beta, compute_c0(lipschitz, d, beta), k0)
    }

    pub fn with_params(n: u64, arms: usize, d: usize, beta: F, c0: F, k0: u32) -> Result<Self> {
        if n == 0 || arms < 2 || d == 0 {
            return Err(Error::invalid("adaptive binning needs n >= 1, K >= 2, d >= 1"));
        }
        if !(beta > F::zero() && beta <= F::one()) {
            return Err(Error::invalid(format!("beta must lie in (0, 1], got {beta}")));
        }
        if !(c0 > F::zero()) {
            return Err(Error::invalid("c0 must be positive"));
        }
        let nf = F::of(n as f64);
        let min_rounds: Vec<u64> = (0..=k0).map(|k| compute_lb(k, nf, c0, beta, d)).collect();
        let root = Self::fresh_cell(nf, arms, (0..arms).collect(), 0, d, &min_rounds)?;
        Ok(Self {
            tree: AdaptiveTree::new(d, k0, (0..arms).collect(), root)?,
            n,
            arms,
            d,
            k0,
            c0,
            beta,
            min_rounds,
            pending: None,
            bursts: 0,
        })
    }

    fn fresh_cell(
        n: F,
        arms: usize,
        active: Vec<usize>,
        depth: u32,
        d: usize,
        min_rounds: &[u64],
    ) -> Result<AbseCell<F>> {
        let horizon = cell_horizon(n, depth, d);
        Ok(AbseCell {
            se: SuccessiveElimination::with_arms(
                arms,
                active,
                SeConfig::new(horizon, F::of(Self::GAMMA))?,
            )?,
            min_rounds: min_rounds[depth as usize],
        })
    }

    pub fn k0(&self) -> u32 {
        self.k0
    }

    pub fn c0(&self) -> F {
        self.c0
    }

    pub fn beta(&self) -> F {
        self.beta
    }

    pub fn horizon(&self) -> u64 {
        self.n
    }

    /// `l_B` for a cell at `depth`.
    pub fn min_rounds(&self, depth: u32) -> u64 {
        self.min_rounds[depth as usize]
    }

    pub fn tree(&self) -> &AdaptiveTree<AbseCell<F>> {
        &self.tree
    }

    pub fn bursts(&self) -> u64 {
        self.bursts
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        self.tree.snapshot(|node: &TreeNode<AbseCell<F>>| {
            let cell = node.payload.as_ref().expect("live node");
            (cell.se.completed_rounds(), cell.se.active().to_vec())
        })
    }

    fn maybe_burst(&mut self, index: usize) -> Result<()> {
        let node = self.tree.node(index);
        let depth = node.depth();
        let cell = node.payload.as_ref().expect("routed node is live");
        if cell.se.completed_rounds() < cell.min_rounds
            || depth >= self.k0
            || cell.se.active().len() < 2
        {
            return Ok(());
        }
        let survivors = cell.se.active().to_vec();
        let n = F::of(self.n as f64);
        let mut cells = (0..1usize << self.d)
            .map(|_| {
                Self::fresh_cell(n, self.arms, survivors.clone(), depth + 1, self.d, &self.min_rounds)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        self.tree
            .burst(index, survivors, |_| cells.next().expect("one cell per child"))?;
        self.bursts += 1;
        Ok(())
    }
}

/// Elimination horizon of a depth-`k` cell: `n 2^{-kd}`, the expected number
/// of visits under uniform covariates.
pub fn cell_horizon<F: Scalar>(n: F, depth: u32, d: usize) -> F {
    n * F::of(2.0).powi(-((depth as usize * d) as i32))
}

impl<F: Scalar> Policy<F> for Abse<F> {
    fn num_arms(&self) -> usize {
        self.arms
    }

    fn dim(&self) -> Option<usize> {
        Some(self.d)
    }

    fn snapshot(&self) -> Option<TreeSnapshot> {
        Some(Abse::snapshot(self))
    }

    fn act(&mut self, x: &[F]) -> Result<usize> {
        if self.pending.is_some() {
            return Err(Error::Protocol("act called twice without feed"));
        }
        if x.len() != self.d {
            return Err(Error::Arity(format!("expected a {}-dimensional covariate", self.d)));
        }
        let index = self.tree.live_bin_of(x);
        let node = self.tree.node_mut(index);
        node.visits += 1;
        let arm = node.payload.as_mut().expect("live").se.next_arm()?;
        self.pending = Some(index);
        Ok(arm)
    }

    fn feed(&mut self, reward: F) -> Result<()> {
        let index = self
            .pending
            .take()
            .ok_or(Error::Protocol("feed called without a pending action"))?;
        self.tree
            .node_mut(index)
            .payload
            .as_mut()
            .expect("pending node is live")
            .se
            .update(reward)?;
        self.maybe_burst(index)
    }
}

/// Episode of step `t` under the doubling trick: `0` for `t = 1`, else
/// `floor(log2 t)`.
pub fn episode_of(t: u64) -> u32 {
    assert!(t >= 1, "steps are 1-based");
    t.ilog2()
}

/// Whether a new episode (and a fresh policy) starts at step `t`.
pub fn starts_episode(t: u64) -> bool {
    t >= 2 && t.is_power_of_two()
}

/// Builds a policy for a given horizon.
pub type PolicyFactory<F> = Box<dyn Fn(u64) -> Result<Box<dyn Policy<F>>> + Send>;

/// Restarts a horizon-dependent policy at steps `2, 4, 8, ...`, giving the
/// policy that starts at step `2^k` the horizon `2^k`.
pub struct Doubling<F: Scalar> {
    factory: PolicyFactory<F>,
    current: Box<dyn Policy<F>>,
    t: u64,
    episodes: u32,
}

impl<F: Scalar> Doubling<F> {
    pub fn new(factory: PolicyFactory<F>) -> Result<Self> {
        let current = factory(1)?;
        Ok(Self {
            factory,
            current,
            t: 0,
            episodes: 1,
        })
    }

    /// Steps acted so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Number of episodes started so far.
    pub fn episodes(&self) -> u32 {
        self.episodes
    }
}

impl<F: Scalar> Policy<F> for Doubling<F> {
    fn num_arms(&self) -> usize {
        self.current.num_arms()
    }

    fn dim(&self) -> Option<usize> {
        self.current.dim()
    }

    fn snapshot(&self) -> Option<TreeSnapshot> {
        self.current.snapshot()
    }

    fn act(&mut self, x: &[F]) -> Result<usize> {
        let t = self.t + 1;
        if starts_episode(t) {
            self.current = (self.factory)(t)?;
            self.episodes += 1;
        }
        let arm = self.current.act(x)?;
        self.t = t;
        Ok(arm)
    }

    fn feed(&mut self, reward: F) -> Result<()> {
        self.current.feed(reward)
    }
}

/// Pulls an arm maximizing the true mean at `x` (lowest index on ties).
pub struct OraclePolicy<F> {
    machine: Machine<F>,
    pending: bool,
}

impl<F: Scalar> OraclePolicy<F> {
    pub fn new(machine: Machine<F>) -> Self {
        Self { machine, pending: false }
    }
}

impl<F: Scalar> Policy<F> for OraclePolicy<F> {
    fn num_arms(&self) -> usize {
        self.machine.num_arms()
    }

    fn dim(&self) -> Option<usize> {
        match self.machine.dim() {
            0 => None,
            d => Some(d),
        }
    }

    fn act(&mut self, x: &[F]) -> Result<usize> {
        if std::mem::replace(&mut self.pending, true) {
            return Err(Error::Protocol("act called twice without feed"));
        }
        Ok(self.machine.oracle_arm(x))
    }

    fn feed(&mut self, _reward: F) -> Result<()> {
        if !std::mem::replace(&mut self.pending, false) {
            return Err(Error::Protocol("feed called without a pending action"));
        }
        Ok(())
    }
}

/// Always pulls the same arm.
pub struct FixedArm {
    arm: usize,
    arms: usize,
}

impl FixedArm {
    pub fn new(arm: usize, arms: usize) -> Result<Self> {
        if arm >= arms {
            return Err(Error::ArmOutOfRange { arm, arms });
        }
        Ok(Self { arm, arms })
    }
}

impl<F: Scalar> Policy<F> for FixedArm {
    fn num_arms(&self) -> usize {
        self.arms
    }

    fn act(&mut self, _x: &[F]) -> Result<usize> {
        Ok(self.arm)
    }

    fn feed(&mut self, _reward: F) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Se,
    Bse,
    Abse,
    Ucb,
    /// The oracle; useful as a zero-regret reference.
    Oracle,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Elimination horizon `T` for plain SE (defaults to `n`).
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default)]
    pub doubling: bool,
}

/// Structured policy definition:
/// `{ "policy": "se" | "bse" | "abse" | "ucb", "params": { gamma?, M?, beta?, L?, doubling? } }`.
///
/// Missing `beta`/`L` default to the machine's declared class parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub policy: PolicyKind,
    #[serde(default)]
    pub params: PolicyParams,
}

impl PolicySpec {
    pub fn new(policy: PolicyKind) -> Self {
        Self {
            policy,
            params: PolicyParams::default(),
        }
    }

    /// Short label such as `abse` or `bse+doubling`.
    pub fn label(&self) -> String {
        let base = match self.policy {
            PolicyKind::Se => "se",
            PolicyKind::Bse => "bse",
            PolicyKind::Abse => "abse",
            PolicyKind::Ucb => "ucb",
            PolicyKind::Oracle => "oracle",
        };
        if self.params.doubling {
            format!("{base}+doubling")
        } else {
            base.to_string()
        }
    }

    /// Instantiates the policy for `machine` and horizon `n`.
    pub fn build<F: Scalar>(&self, machine: &Machine<F>, n: u64) -> Result<Box<dyn Policy<F>>> {
        if n == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        let arms = machine.num_arms();
        let d = machine.dim();
        let class = machine.class_params().copied();
        let beta = match (self.params.beta, class) {
            (Some(b), _) => F::of(b),
            (None, Some(c)) => c.beta,
            (None, None) => F::one(),
        };
        let lipschitz = match (self.params.lipschitz, class) {
            (Some(l), _) => F::of(l),
            (None, Some(c)) => c.lipschitz,
            (None, None) => F::one(),
        };
        let needs_covariates = || {
            if d == 0 {
                Err(Error::Arity(format!(
                    "policy `{}` needs a covariate machine",
                    self.label()
                )))
            } else {
                Ok(())
            }
        };
        match self.policy {
            PolicyKind::Se => {
                let gamma = F::of(self.params.gamma.unwrap_or(1.0));
                SeConfig::new(F::one(), gamma)?;
                if self.params.doubling {
                    return Ok(Box::new(Doubling::new(Box::new(move |h| {
                        let cfg = SeConfig::new(F::of(h as f64), gamma)?;
                        Ok(Box::new(SuccessiveElimination::new(arms, cfg)?) as Box<dyn Policy<F>>)
                    }))?));
                }
                let horizon = F::of(self.params.horizon.unwrap_or(n as f64));
                Ok(Box::new(SuccessiveElimination::new(arms, SeConfig::new(horizon, gamma)?)?))
            }
            PolicyKind::Ucb => Ok(Box::new(Ucb::<F>::new(arms)?)),
            PolicyKind::Oracle => Ok(Box::new(OraclePolicy::new(machine.clone()))),
            PolicyKind::Bse => {
                needs_covariates()?;
                let fixed_m = self.params.m;
                let make = move |h: u64| -> Result<Box<dyn Policy<F>>> {
                    let m = fixed_m.unwrap_or_else(|| choose_m(F::of(h as f64), arms, d, beta));
                    Ok(Box::new(Bse::<F>::new(h, arms, d, m)?))
                };
                if self.params.doubling {
                    Ok(Box::new(Doubling::new(Box::new(make))?))
                } else {
                    make(n)
                }
            }
            PolicyKind::Abse => {
                needs_covariates()?;
                if self.params.doubling {
                    Abse::<F>::new_or_flat(n, arms, d, beta, lipschitz)?;
                    Ok(Box::new(Doubling::new(Box::new(move |h| {
                        Ok(Box::new(Abse::<F>::new_or_flat(h, arms, d, beta, lipschitz)?)
                            as Box<dyn Policy<F>>)
                    }))?))
                } else {
                    Ok(Box::new(Abse::<F>::new(n, arms, d, beta, lipschitz)?))
                }
            }
        }
    }
}
