//! Group-sequential efficacy and futility boundaries from error spending.
//!
//! Boundaries are on the standardised log-rank scale with the benefit
//! direction positive: crossing `efficacy[k]` from below stops for efficacy,
//! falling under `futility[k]` stops for futility. At the final look both
//! coincide so every path ends in a decision.
//!
//! The recursion follows the canonical joint distribution of sequential
//! statistics: `Z_k sqrt(t_k)` has independent Gaussian increments with
//! variance `t_k - t_{k-1}` and mean `drift * (t_k - t_{k-1})`, where `drift`
//! is the expected final-look statistic. Sub-densities of paths that have
//! not stopped are propagated across looks on a Simpson grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpendingRule {
    /// Lan-DeMets O'Brien-Fleming type: `2 - 2 Phi(z_{1-q/2} / sqrt(t))`.
    ObfType,
    /// Lan-DeMets Pocock type: `q ln(1 + (e - 1) t)`.
    PocockType,
    /// User-supplied cumulative spends.
    Direct,
}

/// How the drift used to calibrate futility boundaries is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignAlternative {
    /// Drift solved so that the design has power `1 - total_beta`.
    PowerTarget,
    /// Fixed drift from a design hazard ratio via the Schoenfeld approximation.
    HazardRatio { hr: f64 },
}

/// Cumulative spends at one look, used by [`SpendingRule::Direct`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectSpend {
    /// Information fraction the spend applies to; `None` matches by look index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpendingSpec {
    /// One-sided type-I error.
    #[serde(default = "default_alpha")]
    pub total_alpha: f64,
    /// Type-II error; zero disables futility stopping.
    #[serde(default = "default_beta")]
    pub total_beta: f64,
    #[serde(default = "default_rule")]
    pub alpha_rule: SpendingRule,
    #[serde(default = "default_rule")]
    pub beta_rule: SpendingRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct_cumulative: Option<Vec<DirectSpend>>,
    #[serde(default = "default_true")]
    pub binding_futility: bool,
    #[serde(default = "default_alternative")]
    pub alternative: DesignAlternative,
}

fn default_alpha() -> f64 {
    0.025
}
fn default_beta() -> f64 {
    0.1
}
fn default_rule() -> SpendingRule {
    SpendingRule::ObfType
}
fn default_true() -> bool {
    true
}
fn default_alternative() -> DesignAlternative {
    DesignAlternative::PowerTarget
}

impl Default for SpendingSpec {
    fn default() -> Self {
        Self {
            total_alpha: default_alpha(),
            total_beta: default_beta(),
            alpha_rule: default_rule(),
            beta_rule: default_rule(),
            direct_cumulative: None,
            binding_futility: true,
            alternative: default_alternative(),
        }
    }
}

impl SpendingSpec {
    /// Direct spends given per look, independent of the look's timing.
    pub fn direct_by_look(spends: &[(f64, f64)]) -> Self {
        let (alpha, beta) = *spends.last().expect("at least one look");
        Self {
            total_alpha: alpha,
            total_beta: beta,
            alpha_rule: SpendingRule::Direct,
            beta_rule: SpendingRule::Direct,
            direct_cumulative: Some(
                spends
                    .iter()
                    .map(|&(alpha, beta)| DirectSpend {
                        fraction: None,
                        alpha,
                        beta,
                    })
                    .collect(),
            ),
            ..Self::default()
        }
    }

    pub fn futility_enabled(&self) -> bool {
        self.total_beta > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_alpha > 0.0 && self.total_alpha < 1.0) {
            return Err(Error::invalid("total_alpha", "must lie in (0, 1)"));
        }
        if !(self.total_beta >= 0.0 && self.total_beta < 1.0) {
            return Err(Error::invalid("total_beta", "must lie in [0, 1)"));
        }
        let uses_direct =
            self.alpha_rule == SpendingRule::Direct || self.beta_rule == SpendingRule::Direct;
        match (&self.direct_cumulative, uses_direct) {
            (None, true) => {
                return Err(Error::invalid(
                    "direct_cumulative",
                    "required by the direct spending rule",
                ))
            }
            (Some(points), _) => {
                if points.is_empty() {
                    return Err(Error::invalid("direct_cumulative", "must not be empty"));
                }
                let by_fraction = points[0].fraction.is_some();
                if points.iter().any(|p| p.fraction.is_some() != by_fraction) {
                    return Err(Error::invalid(
                        "direct_cumulative",
                        "either every entry has a fraction or none does",
                    ));
                }
                for w in points.windows(2) {
                    let frac_ok = match (w[0].fraction, w[1].fraction) {
                        (Some(a), Some(b)) => b > a,
                        _ => true,
                    };
                    if !frac_ok || w[1].alpha < w[0].alpha || w[1].beta < w[0].beta {
                        return Err(Error::invalid("direct_cumulative", "must be nondecreasing"));
                    }
                }
                let last = points.last().unwrap();
                if let Some(f) = last.fraction {
                    if (f - 1.0).abs() > 1e-12 {
                        return Err(Error::invalid(
                            "direct_cumulative",
                            "must end at fraction 1",
                        ));
                    }
                }
                if self.alpha_rule == SpendingRule::Direct
                    && (last.alpha - self.total_alpha).abs() > 1e-12
                {
                    return Err(Error::invalid(
                        "direct_cumulative",
                        "final alpha must equal total_alpha",
                    ));
                }
                if self.beta_rule == SpendingRule::Direct
                    && (last.beta - self.total_beta).abs() > 1e-12
                {
                    return Err(Error::invalid(
                        "direct_cumulative",
                        "final beta must equal total_beta",
                    ));
                }
                for p in points {
                    if !(0.0..=1.0).contains(&p.alpha) || !(0.0..=1.0).contains(&p.beta) {
                        return Err(Error::invalid(
                            "direct_cumulative",
                            "spends must be probabilities",
                        ));
                    }
                }
            }
            _ => {}
        }
        if let DesignAlternative::HazardRatio { hr } = self.alternative {
            if !(hr > 0.0 && hr.is_finite()) {
                return Err(Error::invalid("alternative.hr", "must be positive"));
            }
        }
        Ok(())
    }

    fn direct_at(&self, look: usize, n_looks: usize, fraction: f64) -> Result<DirectSpend> {
        let points = self.direct_cumulative.as_ref().ok_or_else(|| {
            Error::invalid("direct_cumulative", "required by the direct spending rule")
        })?;
        if points[0].fraction.is_none() {
            if points.len() != n_looks {
                return Err(Error::invalid(
                    "direct_cumulative",
                    format!("{} entries for {} looks", points.len(), n_looks),
                ));
            }
            return Ok(points[look]);
        }
        // linear interpolation in fraction from an implicit origin
        let mut prev = DirectSpend {
            fraction: Some(0.0),
            alpha: 0.0,
            beta: 0.0,
        };
        for &p in points {
            let pf = p.fraction.unwrap();
            if (fraction - pf).abs() < 1e-12 {
                return Ok(p);
            }
            if fraction < pf {
                let f0 = prev.fraction.unwrap();
                let w = (fraction - f0) / (pf - f0);
                return Ok(DirectSpend {
                    fraction: Some(fraction),
                    alpha: prev.alpha + w * (p.alpha - prev.alpha),
                    beta: prev.beta + w * (p.beta - prev.beta),
                });
            }
            prev = p;
        }
        Ok(prev)
    }

    /// Cumulative alpha and beta spent by look `look` (0-based).
    pub fn cumulative_at(&self, look: usize, fractions: &[f64]) -> Result<(f64, f64)> {
        let t = fractions[look];
        let final_look = look + 1 == fractions.len();
        let direct = || self.direct_at(look, fractions.len(), t);
        let alpha = if final_look {
            self.total_alpha
        } else if self.alpha_rule == SpendingRule::Direct {
            direct()?.alpha
        } else {
            spend(self.alpha_rule, self.total_alpha, t)?
        };
        let beta = if !self.futility_enabled() {
            0.0
        } else if final_look {
            self.total_beta
        } else if self.beta_rule == SpendingRule::Direct {
            direct()?.beta
        } else {
            spend(self.beta_rule, self.total_beta, t)?
        };
        Ok((alpha, beta))
    }
}

/// Cumulative error spent by information fraction `fraction` under a
/// functional rule. The direct rule needs a table and is rejected here.
pub fn spend(rule: SpendingRule, total: f64, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain {
            what: "information fraction",
            value: fraction,
        });
    }
    if fraction == 1.0 {
        return Ok(total);
    }
    match rule {
        SpendingRule::ObfType => {
            let z = normal::quantile(1.0 - total / 2.0);
            Ok(2.0 * normal::sf(z / fraction.sqrt()))
        }
        SpendingRule::PocockType => Ok(total * (1.0 + (std::f64::consts::E - 1.0) * fraction).ln()),
        SpendingRule::Direct => Err(Error::invalid(
            "rule",
            "direct spending requires a cumulative table",
        )),
    }
}

/// Expected final-look log-rank statistic under a design hazard ratio,
/// `-ln(hr) sqrt(E r / (1 + r)^2)` with allocation ratio `r = n_e / n_c`.
/// The drift at fraction `t` is `sqrt(t)` times this.
pub fn drift_for_alternative(
    total_events: usize,
    n_control: usize,
    n_experimental: usize,
    hr_design: f64,
) -> f64 {
    let r = n_experimental as f64 / n_control as f64;
    -hr_design.ln() * (total_events as f64 * r / ((1.0 + r) * (1.0 + r))).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Simpson nodes per look (forced odd).
    pub nodes: usize,
    /// Half-width of the integration range in standard deviations.
    pub width_sd: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nodes: 301,
            width_sd: 8.0,
        }
    }
}

impl GridConfig {
    pub fn doubled(self) -> Self {
        Self {
            nodes: 2 * self.nodes - 1,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    pub fractions: Vec<f64>,
    pub efficacy: Vec<f64>,
    /// `-inf` where futility stopping is disabled.
    pub futility: Vec<f64>,
    pub cumulative_alpha: Vec<f64>,
    pub cumulative_beta: Vec<f64>,
    /// Final-look drift used to calibrate futility, if any.
    pub drift: Option<f64>,
    pub binding_futility: bool,
}

impl BoundarySet {
    /// Single analysis at full information with critical value `z_{1-alpha}`.
    pub fn fixed(alpha: f64) -> Self {
        let b = normal::quantile(1.0 - alpha);
        Self {
            fractions: vec![1.0],
            efficacy: vec![b],
            futility: vec![b],
            cumulative_alpha: vec![alpha],
            cumulative_beta: vec![0.0],
            drift: None,
            binding_futility: true,
        }
    }

    pub fn n_looks(&self) -> usize {
        self.fractions.len()
    }

    pub fn final_critical(&self) -> f64 {
        *self.efficacy.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        validate_fractions(&self.fractions)?;
        let l = self.fractions.len();
        if self.efficacy.len() != l || self.futility.len() != l {
            return Err(Error::invalid("boundaries", "one bound per look required"));
        }
        for k in 0..l - 1 {
            if !(self.futility[k] < self.efficacy[k]) {
                return Err(Error::InfeasibleBoundary {
                    look: k + 1,
                    futility: self.futility[k],
                    efficacy: self.efficacy[k],
                });
            }
        }
        if self.futility[l - 1] != self.efficacy[l - 1] {
            return Err(Error::invalid(
                "boundaries",
                "final futility and efficacy bounds must coincide",
            ));
        }
        Ok(())
    }
}

pub fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::invalid("fractions", "at least one look required"));
    }
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::invalid("fractions", "must lie in (0, 1]"));
    }
    if fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("fractions", "must be strictly increasing"));
    }
    if *fractions.last().unwrap() != 1.0 {
        return Err(Error::invalid(
            "fractions",
            "final look must be at fraction 1",
        ));
    }
    Ok(())
}

/// Quadrature representation of the sub-density of paths still running
/// after a look: `mass[i]` is the Simpson weight times the density at `z[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationDensity {
    pub fraction: f64,
    pub z: Vec<f64>,
    pub mass: Vec<f64>,
}

impl ContinuationDensity {
    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// State of the recursion before a look.
#[derive(Debug, Clone, PartialEq)]
pub enum PathState {
    /// Nothing observed yet.
    Start,
    Running(ContinuationDensity),
}

impl PathState {
    fn fraction(&self) -> f64 {
        match self {
            PathState::Start => 0.0,
            PathState::Running(d) => d.fraction,
        }
    }

    /// Probability of reaching the next look.
    pub fn reach_probability(&self) -> f64 {
        match self {
            PathState::Start => 1.0,
            PathState::Running(d) => d.total(),
        }
    }

    /// Sum over grid nodes of `mass * kernel(mean, sd)` where the next-look
    /// statistic given node `z` is normal with the returned moments.
    fn integrate(&self, t: f64, drift: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
        let t_prev = self.fraction();
        let delta = t - t_prev;
        let sd = (delta / t).sqrt();
        match self {
            PathState::Start => f(drift * t.sqrt(), 1.0),
            PathState::Running(d) => {
                d.z.iter()
                    .zip(&d.mass)
                    .map(|(&z, &m)| {
                        let mean = (z * t_prev.sqrt() + drift * delta) / t.sqrt();
                        m * f(mean, sd)
                    })
                    .sum()
            }
        }
    }

    /// P(continue so far and `Z_t > b`).
    pub fn upper_crossing(&self, t: f64, b: f64, drift: f64) -> f64 {
        if b == f64::INFINITY {
            return 0.0;
        }
        self.integrate(t, drift, |mean, sd| normal::sf((b - mean) / sd))
    }

    /// P(continue so far and `Z_t < a`).
    pub fn lower_crossing(&self, t: f64, a: f64, drift: f64) -> f64 {
        if a == f64::NEG_INFINITY {
            return 0.0;
        }
        self.integrate(t, drift, |mean, sd| normal::cdf((a - mean) / sd))
    }

    /// Propagate to look `t` and keep the paths with `a < Z_t < b`.
    pub fn advance(&self, t: f64, a: f64, b: f64, drift: f64, grid: GridConfig) -> PathState {
        let centre = drift * t.sqrt();
        let lo = a.max(centre - grid.width_sd);
        let hi = b.min(centre + grid.width_sd);
        let nodes = grid.nodes.max(3) | 1;
        if hi <= lo {
            return PathState::Running(ContinuationDensity {
                fraction: t,
                z: vec![lo],
                mass: vec![0.0],
            });
        }
        let h = (hi - lo) / (nodes - 1) as f64;
        let t_prev = self.fraction();
        let delta = t - t_prev;
        let sd = (delta / t).sqrt();
        let mut z = Vec::with_capacity(nodes);
        let mut mass = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let zi = lo + h * i as f64;
            let w = if i == 0 || i == nodes - 1 {
                h / 3.0
            } else if i % 2 == 1 {
                4.0 * h / 3.0
            } else {
                2.0 * h / 3.0
            };
            let density = match self {
                PathState::Start => normal::pdf(zi - centre),
                PathState::Running(d) => {
                    d.z.iter()
                        .zip(&d.mass)
                        .map(|(&u, &m)| {
                            let mean = (u * t_prev.sqrt() + drift * delta) / t.sqrt();
                            m * normal::pdf((zi - mean) / sd) / sd
                        })
                        .sum()
                }
            };
            z.push(zi);
            mass.push(w * density);
        }
        PathState::Running(ContinuationDensity {
            fraction: t,
            z,
            mass,
        })
    }
}

/// Continuation sub-densities after each look for fixed boundaries; the
/// building block behind [`compute_boundaries`], exposed for checking.
pub fn boundary_recursion_density(
    fractions: &[f64],
    futility: &[f64],
    efficacy: &[f64],
    drift: f64,
    grid: GridConfig,
) -> Vec<PathState> {
    let mut state = PathState::Start;
    let mut out = Vec::with_capacity(fractions.len());
    for k in 0..fractions.len() {
        state = state.advance(fractions[k], futility[k], efficacy[k], drift, grid);
        out.push(state.clone());
    }
    out
}

fn solve_monotone(f: impl Fn(f64) -> f64, target: f64, decreasing: bool) -> Result<f64> {
    // bracket then bisect on x in [lo, hi]
    let g = |x: f64| {
        if decreasing {
            f(x) - target
        } else {
            target - f(x)
        }
    };
    let (mut lo, mut hi) = (-12.0, 12.0);
    let mut expand = 0;
    while g(lo) < 0.0 {
        lo -= 12.0;
        expand += 1;
        if expand > 20 {
            return Err(Error::NonConvergence {
                routine: "boundary bracket",
                iterations: expand,
            });
        }
    }
    while g(hi) > 0.0 {
        hi += 12.0;
        expand += 1;
        if expand > 40 {
            return Err(Error::NonConvergence {
                routine: "boundary bracket",
                iterations: expand,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

struct Pass {
    efficacy: Vec<f64>,
    futility: Vec<f64>,
    /// Futility bounds before clamping to the efficacy bound.
    raw_futility: Vec<f64>,
    beta_total: f64,
}

fn run_pass(
    fractions: &[f64],
    alpha: &[f64],
    beta: &[f64],
    drift: f64,
    futility_on: bool,
    binding: bool,
    grid: GridConfig,
) -> Result<Pass> {
    let l = fractions.len();
    let mut null_state = PathState::Start;
    let mut alt_state = PathState::Start;
    let mut efficacy = Vec::with_capacity(l);
    let mut futility = Vec::with_capacity(l);
    let mut raw_futility = Vec::with_capacity(l);
    let mut beta_total = 0.0;
    let mut alpha_prev = 0.0;
    let mut beta_prev = 0.0;
    for k in 0..l {
        let t = fractions[k];
        let alpha_inc = alpha[k] - alpha_prev;
        // a narrow continuation region at the previous look can leave too
        // little probability to spend here
        let narrow = |state: &PathState, inc: f64| k > 0 && inc >= state.reach_probability();
        if narrow(&null_state, alpha_inc)
            || (futility_on && k + 1 < l && narrow(&alt_state, beta[k] - beta_prev))
        {
            return Err(Error::InfeasibleBoundary {
                look: k,
                futility: futility[k - 1],
                efficacy: efficacy[k - 1],
            });
        }
        let b = if alpha_inc <= 0.0 {
            f64::INFINITY
        } else {
            solve_monotone(|b| null_state.upper_crossing(t, b, 0.0), alpha_inc, true)?
        };
        let (a, raw) = if k + 1 == l {
            (b, b)
        } else if !futility_on || beta[k] - beta_prev <= 0.0 {
            (f64::NEG_INFINITY, f64::NEG_INFINITY)
        } else {
            let target = beta[k] - beta_prev;
            let a = solve_monotone(|a| alt_state.lower_crossing(t, a, drift), target, false)?;
            if a >= b {
                return Err(Error::InfeasibleBoundary {
                    look: k + 1,
                    futility: a,
                    efficacy: b,
                });
            }
            (a, a)
        };
        if futility_on {
            beta_total += alt_state.lower_crossing(t, a, drift);
        }
        efficacy.push(b);
        futility.push(a);
        raw_futility.push(raw);
        alpha_prev = alpha[k];
        beta_prev = beta[k];
        if k + 1 < l {
            let null_lower = if binding { a } else { f64::NEG_INFINITY };
            null_state = null_state.advance(t, null_lower, b, 0.0, grid);
            if futility_on {
                alt_state = alt_state.advance(t, a, b, drift, grid);
            }
        }
    }
    Ok(Pass {
        efficacy,
        futility,
        raw_futility,
        beta_total,
    })
}

/// Efficacy and futility boundaries for `fractions` under `spec`.
///
/// Efficacy bounds spend alpha under the null. Futility bounds spend beta
/// under the design alternative; with [`DesignAlternative::PowerTarget`] the
/// drift is solved jointly so the total type-II error equals `total_beta`.
pub fn compute_boundaries(spec: &SpendingSpec, fractions: &[f64]) -> Result<BoundarySet> {
    compute_boundaries_with_grid(spec, fractions, GridConfig::default())
}

pub fn compute_boundaries_with_grid(
    spec: &SpendingSpec,
    fractions: &[f64],
    grid: GridConfig,
) -> Result<BoundarySet> {
    spec.validate()?;
    validate_fractions(fractions)?;
    let l = fractions.len();
    let mut alpha = Vec::with_capacity(l);
    let mut beta = Vec::with_capacity(l);
    for k in 0..l {
        let (a, b) = spec.cumulative_at(k, fractions)?;
        alpha.push(a);
        beta.push(b);
    }
    if alpha.windows(2).any(|w| w[1] < w[0]) || beta.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid(
            "spending",
            "cumulative spends must be nondecreasing",
        ));
    }
    let futility_on = spec.futility_enabled();

    let (pass, drift) = if !futility_on {
        (
            run_pass(
                fractions,
                &alpha,
                &beta,
                0.0,
                false,
                spec.binding_futility,
                grid,
            )?,
            None,
        )
    } else {
        match spec.alternative {
            DesignAlternative::HazardRatio { .. } => return Err(Error::invalid(
                "alternative",
                "hazard-ratio alternatives need the trial size; use compute_boundaries_for_drift",
            )),
            DesignAlternative::PowerTarget => {
                let target = spec.total_beta;
                // infeasible passes count as missing the target
                let beta_at = |d: f64| match run_pass(
                    fractions,
                    &alpha,
                    &beta,
                    d,
                    true,
                    spec.binding_futility,
                    grid,
                ) {
                    Ok(p) => Ok(p.beta_total),
                    Err(Error::InfeasibleBoundary { .. }) => Ok(f64::INFINITY),
                    Err(e) => Err(e),
                };
                // infeasible drifts occur at both ends when the interim is
                // late, so scan for the first drift meeting the target
                let step = 0.25;
                let mut lo = 0.0;
                let mut hi = step;
                while beta_at(hi)? > target {
                    lo = hi;
                    hi += step;
                    if hi > 100.0 {
                        return Err(Error::NonConvergence {
                            routine: "drift search",
                            iterations: 400,
                        });
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if beta_at(mid)? > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-12 {
                        break;
                    }
                }
                let d = 0.5 * (lo + hi);
                (
                    run_pass(
                        fractions,
                        &alpha,
                        &beta,
                        d,
                        true,
                        spec.binding_futility,
                        grid,
                    )?,
                    Some(d),
                )
            }
        }
    };
    finish(
        fractions,
        alpha,
        beta,
        pass,
        drift,
        spec.binding_futility,
        grid,
    )
}

/// Boundaries with futility calibrated at a fixed final-look drift
/// (e.g. from [`drift_for_alternative`]). The total type-II error is then
/// whatever the final look leaves.
pub fn compute_boundaries_for_drift(
    spec: &SpendingSpec,
    fractions: &[f64],
    drift: f64,
    grid: GridConfig,
) -> Result<BoundarySet> {
    spec.validate()?;
    validate_fractions(fractions)?;
    let l = fractions.len();
    let mut alpha = Vec::with_capacity(l);
    let mut beta = Vec::with_capacity(l);
    for k in 0..l {
        let (a, b) = spec.cumulative_at(k, fractions)?;
        alpha.push(a);
        beta.push(b);
    }
    let futility_on = spec.futility_enabled();
    let pass = run_pass(
        fractions,
        &alpha,
        &beta,
        drift,
        futility_on,
        spec.binding_futility,
        grid,
    )?;
    finish(
        fractions,
        alpha,
        beta,
        pass,
        futility_on.then_some(drift),
        spec.binding_futility,
        grid,
    )
}

fn finish(
    fractions: &[f64],
    alpha: Vec<f64>,
    beta: Vec<f64>,
    pass: Pass,
    drift: Option<f64>,
    binding: bool,
    grid: GridConfig,
) -> Result<BoundarySet> {
    let l = fractions.len();
    for k in 0..l.saturating_sub(1) {
        if pass.raw_futility[k] >= pass.efficacy[k] {
            return Err(Error::InfeasibleBoundary {
                look: k + 1,
                futility: pass.raw_futility[k],
                efficacy: pass.efficacy[k],
            });
        }
    }
    // integration drift: reach probability + stopped mass must equal one
    let null_lower: Vec<f64> = if binding {
        pass.futility.clone()
    } else {
        vec![f64::NEG_INFINITY; l]
    };
    let states = boundary_recursion_density(fractions, &null_lower, &pass.efficacy, 0.0, grid);
    let mut prev = PathState::Start;
    let mut stopped = 0.0;
    for (k, state) in states.iter().enumerate().take(l - 1) {
        let t = fractions[k];
        stopped += prev.upper_crossing(t, pass.efficacy[k], 0.0)
            + prev.lower_crossing(t, null_lower[k], 0.0);
        let drift_err = (state.reach_probability() + stopped - 1.0).abs();
        if drift_err > 1e-4 {
            return Err(Error::GridResolution {
                look: k + 1,
                drift: drift_err,
            });
        }
        prev = state.clone();
    }
    Ok(BoundarySet {
        fractions: fractions.to_vec(),
        efficacy: pass.efficacy,
        futility: pass.futility,
        cumulative_alpha: alpha,
        cumulative_beta: beta,
        drift,
        binding_futility: binding,
    })
}

/// Cumulative upper- and lower-crossing probabilities of fixed boundaries
/// at the given drift (binding futility).
pub fn crossing_probabilities(
    set: &BoundarySet,
    drift: f64,
    grid: GridConfig,
) -> (Vec<f64>, Vec<f64>) {
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    let (mut cu, mut cl) = (0.0, 0.0);
    let mut state = PathState::Start;
    for k in 0..set.n_looks() {
        let t = set.fractions[k];
        let b = set.efficacy[k];
        let a = set.futility[k];
        cu += state.upper_crossing(t, b, drift);
        cl += state.lower_crossing(t, a, drift);
        upper.push(cu);
        lower.push(cl);
        state = state.advance(t, a, b, drift, grid);
    }
    (upper, lower)
}
