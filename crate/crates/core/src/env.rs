//! Bandit machines: static arms with fixed means and covariate machines whose
//! arm means are functions on `[0,1]^d`.
//!
//! Arms are indexed from `0`. Machines are immutable after construction; all
//! randomness is drawn from caller-owned generators.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Conditional law of a reward given its mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardLaw<F> {
    /// `Bernoulli(mean)`.
    Bernoulli,
    /// Uniform on `[mean - w, mean + w]`.
    ///
    /// On covariate machines the half-width is narrowed to
    /// `min(w, mean, 1 - mean)` at each point so that rewards stay in `[0,1]`
    /// without moving the conditional mean.
    UniformBand { halfwidth: F },
}

impl<F: Scalar> RewardLaw<F> {
    pub fn sample<R: Rng + ?Sized>(&self, mean: F, rng: &mut R) -> F {
        match *self {
            RewardLaw::Bernoulli => {
                let u = F::of(rng.random::<f64>());
                if u < mean {
                    F::one()
                } else {
                    F::zero()
                }
            }
            RewardLaw::UniformBand { halfwidth } => {
                let w = halfwidth.min(mean).min(F::one() - mean).max(F::zero());
                let u = F::of(rng.random::<f64>());
                let r = mean + w * (F::of(2.0) * u - F::one());
                r.max(F::zero()).min(F::one())
            }
        }
    }

    /// Parses `bernoulli` or `uniform-band:<halfwidth>`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.eq_ignore_ascii_case("bernoulli") {
            return Ok(RewardLaw::Bernoulli);
        }
        if let Some(rest) = text.strip_prefix("uniform-band:") {
            let w: f64 = rest
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad uniform-band half-width `{rest}`")))?;
            if !(0.0..=0.5).contains(&w) {
                return Err(Error::invalid("uniform-band half-width must lie in [0, 0.5]"));
            }
            return Ok(RewardLaw::UniformBand { halfwidth: F::of(w) });
        }
        Err(Error::invalid(format!("unknown reward law `{text}`")))
    }
}

/// Largest and second-largest distinct level among `values`.
///
/// The second level is the maximum over entries strictly below the maximum,
/// and equals the maximum when all entries agree.
pub fn top_two<F: Scalar>(values: &[F]) -> (F, F) {
    let best = values.iter().copied().fold(F::neg_infinity(), F::max);
    let second = values
        .iter()
        .copied()
        .filter(|&v| v < best)
        .fold(F::neg_infinity(), F::max);
    if second == F::neg_infinity() {
        (best, best)
    } else {
        (best, second)
    }
}

/// First index attaining the maximum.
pub fn argmax_lowest<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// K arms with fixed means.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticMachine<F> {
    means: Vec<F>,
    law: RewardLaw<F>,
}

impl<F: Scalar> StaticMachine<F> {
    pub fn new(means: Vec<F>, law: RewardLaw<F>) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::invalid("a static machine needs at least two arms"));
        }
        if means.iter().any(|&m| !(m >= F::zero() && m <= F::one())) {
            return Err(Error::invalid("static means must lie in [0,1]"));
        }
        if let RewardLaw::UniformBand { halfwidth } = law {
            let room = means
                .iter()
                .map(|&m| m.min(F::one() - m))
                .fold(F::infinity(), F::min);
            if halfwidth > room {
                return Err(Error::invalid(format!(
                    "uniform-band half-width {halfwidth} exceeds the room {room} left by the means"
                )));
            }
        }
        Ok(Self { means, law })
    }

    pub fn bernoulli(means: Vec<F>) -> Result<Self> {
        Self::new(means, RewardLaw::Bernoulli)
    }

    pub fn means(&self) -> &[F] {
        &self.means
    }

    pub fn law(&self) -> RewardLaw<F> {
        self.law
    }

    pub fn num_arms(&self) -> usize {
        self.means.len()
    }

    /// `max_j f_j - f_i` for every arm.
    pub fn gaps(&self) -> Vec<F> {
        let (best, _) = top_two(&self.means);
        self.means.iter().map(|&m| best - m).collect()
    }

    pub fn draw_reward<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> Result<F> {
        let mean = *self.means.get(arm).ok_or(Error::ArmOutOfRange {
            arm,
            arms: self.means.len(),
        })?;
        Ok(self.law.sample(mean, rng))
    }
}

/// Mean-reward function families available to covariate machines.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardFn<F> {
    Constant {
        value: F,
    },
    /// `intercept + <weights, x>`.
    Affine {
        intercept: F,
        weights: Vec<F>,
    },
    /// `level + scale * sign(x[coord] - center) * |x[coord] - center|^power`.
    ///
    /// `power = 0` gives a step at `center` (with `sign(0) = 0`).
    PiecewisePower {
        coord: usize,
        center: F,
        level: F,
        scale: F,
        power: F,
    },
}

impl<F: Scalar> RewardFn<F> {
    pub fn eval(&self, x: &[F]) -> F {
        match self {
            RewardFn::Constant { value } => *value,
            RewardFn::Affine { intercept, weights } => weights
                .iter()
                .zip(x)
                .fold(*intercept, |acc, (&w, &xi)| acc + w * xi),
            RewardFn::PiecewisePower {
                coord,
                center,
                level,
                scale,
                power,
            } => {
                let u = x[*coord] - *center;
                if u == F::zero() {
                    *level
                } else {
                    *level + *scale * u.signum() * u.abs().powf(*power)
                }
            }
        }
    }

    fn required_dim(&self) -> usize {
        match self {
            RewardFn::Constant { .. } => 0,
            RewardFn::Affine { weights, .. } => weights.len(),
            RewardFn::PiecewisePower { coord, .. } => coord + 1,
        }
    }
}

/// Law of the covariates on `[0,1]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateLaw<F> {
    Uniform,
    /// Product density `prod_l (1 + slope * (x_l - 1/2))`, sampled by rejection
    /// from the uniform law. Requires `|slope| < 2`.
    BoundedDensity { slope: F },
}

impl<F: Scalar> CovariateLaw<F> {
    pub fn density(&self, x: &[F]) -> F {
        match *self {
            CovariateLaw::Uniform => F::one(),
            CovariateLaw::BoundedDensity { slope } => x
                .iter()
                .fold(F::one(), |acc, &xi| acc * (F::one() + slope * (xi - F::of(0.5)))),
        }
    }

    /// `(c_lower, c_upper)` bounding the density on `[0,1]^d`.
    pub fn density_bounds(&self, d: usize) -> (F, F) {
        match *self {
            CovariateLaw::Uniform => (F::one(), F::one()),
            CovariateLaw::BoundedDensity { slope } => {
                let half = slope.abs() * F::of(0.5);
                let e = d as i32;
                ((F::one() - half).powi(e), (F::one() + half).powi(e))
            }
        }
    }

    fn sample_into<R: Rng + ?Sized>(&self, d: usize, rng: &mut R, out: &mut Vec<F>) {
        out.clear();
        match *self {
            CovariateLaw::Uniform => out.extend((0..d).map(|_| F::of(rng.random::<f64>()))),
            CovariateLaw::BoundedDensity { .. } => {
                let (_, upper) = self.density_bounds(d);
                loop {
                    out.clear();
                    out.extend((0..d).map(|_| F::of(rng.random::<f64>())));
                    let accept = F::of(rng.random::<f64>()) * upper;
                    if accept <= self.density(out) {
                        return;
                    }
                }
            }
        }
    }
}

/// Declared class parameters of a covariate machine.
///
/// These are informational: machines are never rejected because of them, and
/// the verifiers below let tests compare them against the actual functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineClassParams<F> {
    /// Margin exponent; may be infinite.
    pub alpha: F,
    /// Smoothness exponent in `(0, 1]`.
    pub beta: F,
    /// Hölder constant.
    #[serde(rename = "L")]
    pub lipschitz: F,
    /// Margin threshold.
    pub delta0: F,
    /// Margin constant.
    #[serde(rename = "C0")]
    pub margin_constant: F,
}

impl<F: Scalar> Default for MachineClassParams<F> {
    fn default() -> Self {
        Self {
            alpha: F::infinity(),
            beta: F::one(),
            lipschitz: F::one(),
            delta0: F::of(0.5),
            margin_constant: F::one(),
        }
    }
}

impl<F: Scalar> MachineClassParams<F> {
    /// `alpha * beta <= d` whenever alpha is finite; a nontrivial oracle is
    /// impossible otherwise.
    pub fn compatible_with_dim(&self, d: usize) -> bool {
        !self.alpha.is_finite() || self.alpha * self.beta <= F::of(d as f64)
    }
}

/// A K-armed bandit machine with covariates in `[0,1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMachine<F> {
    d: usize,
    reward_fns: Vec<RewardFn<F>>,
    covariate_law: CovariateLaw<F>,
    class_params: MachineClassParams<F>,
    reward_law: RewardLaw<F>,
}

impl<F: Scalar> CovariateMachine<F> {
    /// Builds a machine, checking that every mean function stays in `[0,1]`
    /// on a dense grid (`d <= 2`) or a fixed pseudo-random sample.
    pub fn new(
        d: usize,
        reward_fns: Vec<RewardFn<F>>,
        covariate_law: CovariateLaw<F>,
        class_params: MachineClassParams<F>,
        reward_law: RewardLaw<F>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("covariate dimension must be at least 1"));
        }
        if reward_fns.len() < 2 {
            return Err(Error::invalid("a covariate machine needs at least two arms"));
        }
        if let Some(f) = reward_fns.iter().find(|f| f.required_dim() > d) {
            return Err(Error::invalid(format!(
                "reward function {f:?} needs dimension {} but d = {d}",
                f.required_dim()
            )));
        }
        if let CovariateLaw::BoundedDensity { slope } = covariate_law {
            if !(slope.abs() < F::of(2.0)) {
                return Err(Error::invalid("density slope must satisfy |slope| < 2"));
            }
        }
        let machine = Self {
            d,
            reward_fns,
            covariate_law,
            class_params,
            reward_law,
        };
        for x in machine.probe_points() {
            for (arm, f) in machine.reward_fns.iter().enumerate() {
                let v = f.eval(&x);
                if !(v >= F::zero() && v <= F::one()) {
                    return Err(Error::invalid(format!(
                        "arm {arm} has mean {v} outside [0,1] at {x:?}"
                    )));
                }
            }
        }
        Ok(machine)
    }

    fn probe_points(&self) -> Vec<Vec<F>> {
        match self.d {
            1 => (0..=1000).map(|i| vec![F::of(i as f64 / 1000.0)]).collect(),
            2 => (0..=100)
                .flat_map(|i| {
                    (0..=100).map(move |j| vec![F::of(i as f64 / 100.0), F::of(j as f64 / 100.0)])
                })
                .collect(),
            d => {
                let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
                (0..4096)
                    .map(|_| (0..d).map(|_| F::of(rng.random::<f64>())).collect())
                    .collect()
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_arms(&self) -> usize {
        self.reward_fns.len()
    }

    pub fn reward_fns(&self) -> &[RewardFn<F>] {
        &self.reward_fns
    }

    pub fn covariate_law(&self) -> CovariateLaw<F> {
        self.covariate_law
    }

    pub fn class_params(&self) -> &MachineClassParams<F> {
        &self.class_params
    }

    pub fn reward_law(&self) -> RewardLaw<F> {
        self.reward_law
    }

    pub fn mean(&self, arm: usize, x: &[F]) -> F {
        self.reward_fns[arm].eval(x)
    }

    pub fn means_at(&self, x: &[F]) -> Vec<F> {
        self.reward_fns.iter().map(|f| f.eval(x)).collect()
    }

    pub fn draw_covariate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        let mut out = Vec::with_capacity(self.d);
        self.draw_covariate_into(rng, &mut out);
        out
    }

    pub fn draw_covariate_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<F>) {
        self.covariate_law.sample_into(self.d, rng, out);
    }

    pub fn draw_reward<R: Rng + ?Sized>(&self, arm: usize, x: &[F], rng: &mut R) -> Result<F> {
        let f = self.reward_fns.get(arm).ok_or(Error::ArmOutOfRange {
            arm,
            arms: self.reward_fns.len(),
        })?;
        Ok(self.reward_law.sample(f.eval(x), rng))
    }

    pub fn oracle_arm(&self, x: &[F]) -> usize {
        argmax_lowest(&self.means_at(x))
    }

    pub fn fstar(&self, x: &[F]) -> F {
        top_two(&self.means_at(x)).0
    }

    pub fn fsharp(&self, x: &[F]) -> F {
        top_two(&self.means_at(x)).1
    }

    /// `f*(x) - f#(x)`.
    pub fn gap(&self, x: &[F]) -> F {
        let (a, b) = top_two(&self.means_at(x));
        a - b
    }
}

/// Hölder constant (with exponent `min(1, p)`) of `u -> sign(u)|u|^p` on `[-1/2, 1/2]`.
fn odd_power_holder_constant(p: f64) -> f64 {
    if p >= 1.0 {
        p * 2f64.powf(1.0 - p)
    } else {
        2f64.powf(1.0 - p)
    }
}

/// The example machine with margin exponent `alpha`.
///
/// Arm 0 has mean `0.5 + 0.5 L sign(x_1 - 0.5)|x_1 - 0.5|^{1/alpha}`; every
/// other arm is constant at `0.5`. Only the first coordinate matters when
/// `d > 1`. The declared class parameters are `beta = min(1, 1/alpha)`, the
/// exact Hölder constant of arm 0, and the margin constants for which
/// `P[0 < gap <= delta] = C0 delta^alpha` holds for `delta <= delta0`.
pub fn make_proposition_machine<F: Scalar>(
    alpha: F,
    lipschitz: F,
    arms: usize,
    d: usize,
) -> Result<CovariateMachine<F>> {
    if !(alpha > F::zero() && alpha.is_finite()) {
        return Err(Error::invalid("alpha must be finite and positive"));
    }
    if !(lipschitz > F::zero()) {
        return Err(Error::invalid("L must be positive"));
    }
    if lipschitz > F::one() {
        return Err(Error::invalid("L must be at most 1 for rewards to stay in [0,1]"));
    }
    if arms < 2 {
        return Err(Error::invalid("the example machine needs at least two arms"));
    }
    let a = alpha.as_f64();
    let l = lipschitz.as_f64();
    let power = 1.0 / a;
    let mut fns = Vec::with_capacity(arms);
    fns.push(RewardFn::PiecewisePower {
        coord: 0,
        center: F::of(0.5),
        level: F::of(0.5),
        scale: F::of(0.5 * l),
        power: F::of(power),
    });
    fns.extend((1..arms).map(|_| RewardFn::Constant { value: F::of(0.5) }));
    let class = MachineClassParams {
        alpha,
        beta: F::of(power.min(1.0)),
        lipschitz: F::of(0.5 * l * odd_power_holder_constant(power)),
        delta0: F::of(0.5 * l * 0.5f64.powf(power)),
        margin_constant: F::of(2.0 * (2.0 / l).powf(a)),
    };
    CovariateMachine::new(d, fns, CovariateLaw::Uniform, class, RewardLaw::Bernoulli)
}

/// A static or covariate machine.
#[derive(Debug, Clone, PartialEq)]
pub enum Machine<F> {
    Static(StaticMachine<F>),
    Covariate(CovariateMachine<F>),
}

impl<F: Scalar> Machine<F> {
    pub fn num_arms(&self) -> usize {
        match self {
            Machine::Static(m) => m.num_arms(),
            Machine::Covariate(m) => m.num_arms(),
        }
    }

    /// Covariate dimension (`0` for static machines).
    pub fn dim(&self) -> usize {
        match self {
            Machine::Static(_) => 0,
            Machine::Covariate(m) => m.dim(),
        }
    }

    pub fn class_params(&self) -> Option<&MachineClassParams<F>> {
        match self {
            Machine::Static(_) => None,
            Machine::Covariate(m) => Some(m.class_params()),
        }
    }

    /// Fills `out` with the next covariate; static machines leave it empty.
    pub fn draw_covariate_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<F>) {
        match self {
            Machine::Static(_) => out.clear(),
            Machine::Covariate(m) => m.draw_covariate_into(rng, out),
        }
    }

    pub fn mean(&self, arm: usize, x: &[F]) -> F {
        match self {
            Machine::Static(m) => m.means[arm],
            Machine::Covariate(m) => m.mean(arm, x),
        }
    }

    pub fn means_at(&self, x: &[F]) -> Vec<F> {
        match self {
            Machine::Static(m) => m.means.clone(),
            Machine::Covariate(m) => m.means_at(x),
        }
    }

    pub fn fstar(&self, x: &[F]) -> F {
        match self {
            Machine::Static(m) => top_two(&m.means).0,
            Machine::Covariate(m) => m.fstar(x),
        }
    }

    pub fn oracle_arm(&self, x: &[F]) -> usize {
        match self {
            Machine::Static(m) => argmax_lowest(&m.means),
            Machine::Covariate(m) => m.oracle_arm(x),
        }
    }

    pub fn draw_reward<R: Rng + ?Sized>(&self, arm: usize, x: &[F], rng: &mut R) -> Result<F> {
        match self {
            Machine::Static(m) => m.draw_reward(arm, rng),
            Machine::Covariate(m) => m.draw_reward(arm, x, rng),
        }
    }

    /// Upper bound on a single step's pseudo-regret, `max_x (f* - min_i f_i)`,
    /// evaluated on the machine's probe set.
    pub fn max_step_regret(&self) -> F {
        let spread = |v: &[F]| {
            let hi = v.iter().copied().fold(F::neg_infinity(), F::max);
            let lo = v.iter().copied().fold(F::infinity(), F::min);
            hi - lo
        };
        match self {
            Machine::Static(m) => spread(&m.means),
            Machine::Covariate(m) => m
                .probe_points()
                .iter()
                .map(|x| spread(&m.means_at(x)))
                .fold(F::zero(), F::max),
        }
    }
}

/// Monte Carlo estimate of `P_X[0 < f*(X) - f#(X) <= delta]`.
pub fn estimate_margin_prob<F: Scalar, R: Rng + ?Sized>(
    machine: &CovariateMachine<F>,
    delta: F,
    n_samples: usize,
    rng: &mut R,
) -> Result<F> {
    let gaps = sample_gaps(machine, n_samples, rng)?;
    margin_prob_from_gaps(&gaps, delta)
}

/// Draws `n_samples` covariates and returns the gap at each.
pub fn sample_gaps<F: Scalar, R: Rng + ?Sized>(
    machine: &CovariateMachine<F>,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<F>> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be positive"));
    }
    let mut x = Vec::with_capacity(machine.dim());
    Ok((0..n_samples)
        .map(|_| {
            machine.draw_covariate_into(rng, &mut x);
            machine.gap(&x)
        })
        .collect())
}

/// Fraction of `gaps` in `(0, delta]`.
pub fn margin_prob_from_gaps<F: Scalar>(gaps: &[F], delta: F) -> Result<F> {
    if !(delta >= F::zero()) {
        return Err(Error::invalid("delta must be nonnegative"));
    }
    if gaps.is_empty() {
        return Err(Error::invalid("no gap samples"));
    }
    let hits = gaps
        .iter()
        .filter(|&&g| g > F::zero() && g <= delta)
        .count();
    Ok(F::of(hits as f64 / gaps.len() as f64))
}

/// Largest observed `|f(x) - f(x')| / ||x - x'||^beta` over `n_pairs` uniform
/// pairs and all arms, with `beta` taken from the declared class parameters.
pub fn check_smoothness<F: Scalar, R: Rng + ?Sized>(
    machine: &CovariateMachine<F>,
    n_pairs: usize,
    rng: &mut R,
) -> F {
    let beta = machine.class_params().beta;
    let d = machine.dim();
    let mut worst = F::zero();
    for _ in 0..n_pairs {
        let x: Vec<F> = (0..d).map(|_| F::of(rng.random::<f64>())).collect();
        let y: Vec<F> = (0..d).map(|_| F::of(rng.random::<f64>())).collect();
        let dist = x
            .iter()
            .zip(&y)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<F>()
            .sqrt();
        if dist == F::zero() {
            continue;
        }
        let scale = dist.powf(beta);
        for f in machine.reward_fns() {
            let ratio = (f.eval(&x) - f.eval(&y)).abs() / scale;
            worst = worst.max(ratio);
        }
    }
    worst
}

/// Structured machine definition, as read from experiment configs.
///
/// ```json
/// { "family": "proposition", "params": { "alpha": 0.5, "L": 1.0 },
///   "reward_law": "bernoulli", "d": 1, "K": 2 }
/// ```
///
/// Families: `static` (`means`), `proposition` (`alpha`, `L`), `constant`
/// (`values`), `affine` (`arms: [{intercept, weights}]`) and
/// `piecewise-power` (`arms: [{coord, center, level, scale, power}]`).
/// Covariate families also accept `covariate_slope` (tilted density) and a
/// `class` object overriding the declared class parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default = "default_reward_law")]
    pub reward_law: String,
    #[serde(default)]
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
}

fn default_reward_law() -> String {
    "bernoulli".into()
}

#[derive(Deserialize)]
struct AffineArm {
    intercept: f64,
    #[serde(default)]
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct PowerArm {
    #[serde(default)]
    coord: usize,
    center: f64,
    level: f64,
    scale: f64,
    power: f64,
}

impl MachineSpec {
    /// Static Bernoulli machine with the given means.
    pub fn static_means(means: Vec<f64>) -> Self {
        let k = means.len();
        let mut params = BTreeMap::new();
        params.insert("means".into(), Value::from(means));
        Self {
            family: "static".into(),
            params,
            reward_law: default_reward_law(),
            d: 0,
            k,
        }
    }

    /// Proposition machine with margin exponent `alpha` and scale `L`.
    pub fn proposition(alpha: f64, lipschitz: f64, k: usize, d: usize) -> Self {
        let mut params = BTreeMap::new();
        params.insert("alpha".into(), Value::from(alpha));
        params.insert("L".into(), Value::from(lipschitz));
        Self {
            family: "proposition".into(),
            params,
            reward_law: default_reward_law(),
            d,
            k,
        }
    }

    fn param<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .params
            .get(key)
            .ok_or_else(|| Error::invalid(format!("machine family `{}` needs `{key}`", self.family)))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::invalid(format!("machine parameter `{key}`: {e}")))
    }

    fn optional<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.params.get(key) {
            None => Ok(None),
            Some(_) => self.param(key).map(Some),
        }
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.k {
            return Err(Error::invalid(format!(
                "machine declares K = {} but `{what}` has {len} entries",
                self.k
            )));
        }
        Ok(())
    }

    pub fn build<F: Scalar>(&self) -> Result<Machine<F>> {
        let law = RewardLaw::<F>::parse(&self.reward_law)?;
        if self.family == "static" {
            let means: Vec<f64> = self.param("means")?;
            self.check_len("means", means.len())?;
            if self.d != 0 {
                return Err(Error::invalid("static machines have d = 0"));
            }
            return Ok(Machine::Static(StaticMachine::new(
                means.into_iter().map(F::of).collect(),
                law,
            )?));
        }

        let covariate_law = match self.optional::<f64>("covariate_slope")? {
            None => CovariateLaw::Uniform,
            Some(s) => CovariateLaw::BoundedDensity { slope: F::of(s) },
        };
        let class = self.optional::<MachineClassParams<f64>>("class")?;
        let to_f = |c: MachineClassParams<f64>| MachineClassParams {
            alpha: F::of(c.alpha),
            beta: F::of(c.beta),
            lipschitz: F::of(c.lipschitz),
            delta0: F::of(c.delta0),
            margin_constant: F::of(c.margin_constant),
        };

        let fns: Vec<RewardFn<F>> = match self.family.as_str() {
            "proposition" => {
                let alpha: f64 = self.param("alpha")?;
                let l: f64 = self.param("L")?;
                let m = make_proposition_machine(F::of(alpha), F::of(l), self.k, self.d)?;
                let params = class.map(to_f).unwrap_or(*m.class_params());
                return Ok(Machine::Covariate(CovariateMachine::new(
                    self.d,
                    m.reward_fns,
                    covariate_law,
                    params,
                    law,
                )?));
            }
            "constant" => {
                let values: Vec<f64> = self.param("values")?;
                self.check_len("values", values.len())?;
                values
                    .into_iter()
                    .map(|v| RewardFn::Constant { value: F::of(v) })
                    .collect()
            }
            "affine" => {
                let arms: Vec<AffineArm> = self.param("arms")?;
                self.check_len("arms", arms.len())?;
                arms.into_iter()
                    .map(|a| RewardFn::Affine {
                        intercept: F::of(a.intercept),
                        weights: a.weights.into_iter().map(F::of).collect(),
                    })
                    .collect()
            }
            "piecewise-power" => {
                let arms: Vec<PowerArm> = self.param("arms")?;
                self.check_len("arms", arms.len())?;
                arms.into_iter()
                    .map(|a| RewardFn::PiecewisePower {
                        coord: a.coord,
                        center: F::of(a.center),
                        level: F::of(a.level),
                        scale: F::of(a.scale),
                        power: F::of(a.power),
                    })
                    .collect()
            }
            other => return Err(Error::invalid(format!("unknown machine family `{other}`"))),
        };
        let params = class.map(to_f).unwrap_or_default();
        Ok(Machine::Covariate(CovariateMachine::new(
            self.d,
            fns,
            covariate_law,
            params,
            law,
        )?))
    }
}
