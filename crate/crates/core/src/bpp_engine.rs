//! Bayesian predictive probability at an interim analysis.
//!
//! The posterior over `(lambda, gamma, T, HR*)` is built per mixture
//! component: each component's marginal likelihood is estimated from prior
//! draws (exactly, for atoms), giving the posterior component weights, and
//! the draws within a component are resampled by likelihood. Each posterior
//! draw then completes the trial: censored patients get a residual survival
//! time, unrecruited patients are recruited over the rest of the window, and
//! the final log-rank analysis at `E` events is compared with the final
//! critical value.

use rand::{Rng, RngExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dte_model::{
    cumulative_hazard, hazard_control, hazard_experimental, sample_arm, sample_conditional, Arm,
    ControlParams, ScenarioDraw,
};
use crate::error::{Error, Result};
use crate::oc_engine::replicate_scenario;
use crate::priors::{prior_density, Component, PriorSpec};
use crate::rng::{derive_seed, open_unit, stream, Purpose};
use crate::trial_engine::{LatentTrial, PatientRecord, TrialDesign};

/// Data available at an interim cut. Only `arm`, `recruit_time`,
/// `observed_time` and `event` are used for inference and projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterimDataset {
    pub records: Vec<PatientRecord>,
    pub fraction: f64,
    pub events_observed: usize,
    /// Calendar month of the cut.
    pub calendar_time: f64,
}

impl InterimDataset {
    /// Truncate a simulated trial at `fraction` of the design's events.
    pub fn from_trial(trial: &LatentTrial, design: &TrialDesign, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid("fraction", "must lie in (0, 1]"));
        }
        let events = design.events_at_fraction(fraction);
        let cut = trial.cut_time(events)?;
        Ok(Self {
            records: trial.snapshot(cut),
            fraction,
            events_observed: events,
            calendar_time: cut,
        })
    }

    pub fn empty() -> Self {
        Self {
            records: Vec::new(),
            fraction: 0.0,
            events_observed: 0,
            calendar_time: 0.0,
        }
    }

    pub fn recruited(&self, arm: Arm) -> usize {
        self.records.iter().filter(|r| r.arm == arm).count()
    }
}

fn record_ll(arm: Arm, t: f64, event: bool, s: &ScenarioDraw<f64>) -> Result<f64> {
    let h = cumulative_hazard(arm, t, s)?;
    if !event {
        return Ok(-h);
    }
    let rate = match arm {
        Arm::Control => hazard_control(t, &s.control)?,
        Arm::Experimental => hazard_experimental(t, s)?,
    };
    Ok(rate.ln() - h)
}

/// Censored-data log-likelihood of the interim data under `s`, summed record
/// by record.
pub fn log_likelihood(data: &InterimDataset, s: &ScenarioDraw<f64>) -> Result<f64> {
    s.validate()?;
    let mut ll = 0.0;
    for r in &data.records {
        ll += record_ll(r.arm, r.observed_time, r.event, s)?;
    }
    if ll.is_nan() {
        return Err(Error::Domain {
            what: "log-likelihood",
            value: ll,
        });
    }
    Ok(ll)
}

/// Sufficient statistics of one arm for a fixed Weibull shape.
#[derive(Debug, Clone)]
struct ArmStats {
    times: Vec<f64>,
    events: Vec<bool>,
    /// Prefix sums over sorted times: `t^gamma`, event count, `ln t` over events.
    pow: Vec<f64>,
    count: Vec<f64>,
    log_t: Vec<f64>,
}

impl ArmStats {
    fn new(mut rows: Vec<(f64, bool)>, gamma: f64) -> Self {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = rows.len();
        let mut pow = vec![0.0; n + 1];
        let mut count = vec![0.0; n + 1];
        let mut log_t = vec![0.0; n + 1];
        for (i, &(t, e)) in rows.iter().enumerate() {
            pow[i + 1] = pow[i] + t.powf(gamma);
            count[i + 1] = count[i] + if e { 1.0 } else { 0.0 };
            log_t[i + 1] = log_t[i] + if e { t.ln() } else { 0.0 };
        }
        Self {
            times: rows.iter().map(|r| r.0).collect(),
            events: rows.iter().map(|r| r.1).collect(),
            pow,
            count,
            log_t,
        }
    }

    fn n(&self) -> usize {
        self.times.len()
    }
}

/// Likelihood evaluator with prefix sums: `O(log n)` per draw when the
/// draw's shape equals the kernel's, `O(n)` otherwise.
#[derive(Debug, Clone)]
pub struct LikelihoodKernel {
    gamma: f64,
    control: ArmStats,
    experimental: ArmStats,
}

impl LikelihoodKernel {
    pub fn new(data: &InterimDataset, gamma: f64) -> Self {
        let rows = |arm| {
            data.records
                .iter()
                .filter(|r| r.arm == arm)
                .map(|r| (r.observed_time, r.event))
                .collect::<Vec<_>>()
        };
        Self {
            gamma,
            control: ArmStats::new(rows(Arm::Control), gamma),
            experimental: ArmStats::new(rows(Arm::Experimental), gamma),
        }
    }

    pub fn log_likelihood(&self, s: &ScenarioDraw<f64>) -> f64 {
        if s.control.gamma != self.gamma {
            return self.direct(s);
        }
        let g = self.gamma;
        let ControlParams { lambda, .. } = s.control;
        let lam_g = lambda.powf(g);
        let log_rate = g.ln() + g * lambda.ln();
        let c = &self.control;
        let nc = c.n();
        let ll_c = c.count[nc] * log_rate + (g - 1.0) * c.log_t[nc] - lam_g * c.pow[nc];

        let e = &self.experimental;
        let ne = e.n();
        let k = e.times.partition_point(|&t| t <= s.delay);
        let t_g = s.delay.powf(g);
        let n_post = (ne - k) as f64;
        let d_post = e.count[ne] - e.count[k];
        let s_pre = e.pow[k];
        let s_post = e.pow[ne] - e.pow[k];
        let mut ll_e = e.count[ne] * log_rate + (g - 1.0) * e.log_t[ne]
            - lam_g * (s_pre + n_post * t_g + s.post_hr * (s_post - n_post * t_g));
        if d_post > 0.0 {
            ll_e += d_post * s.post_hr.ln();
        }
        ll_c + ll_e
    }

    fn direct(&self, s: &ScenarioDraw<f64>) -> f64 {
        let mut ll = 0.0;
        for (arm, st) in [
            (Arm::Control, &self.control),
            (Arm::Experimental, &self.experimental),
        ] {
            for (&t, &e) in st.times.iter().zip(&st.events) {
                ll += record_ll(arm, t, e, s).unwrap_or(f64::NEG_INFINITY);
            }
        }
        ll
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorMethod {
    /// Sampling-importance-resampling from the prior.
    Sir,
    /// Random-walk Metropolis within each continuous component.
    Metropolis,
    /// SIR, switching to Metropolis when the effective sample size is low.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorConfig {
    #[serde(default)]
    pub method: PosteriorMethod,
    /// Prior draws per continuous component, as a multiple of `M`.
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    /// Effective-sample-size floor as a fraction of `M`.
    #[serde(default = "default_ess_fraction")]
    pub ess_floor_fraction: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
}

fn default_oversample() -> usize {
    20
}
fn default_ess_fraction() -> f64 {
    0.05
}
fn default_burn_in() -> usize {
    500
}
fn default_thin() -> usize {
    5
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self {
            method: PosteriorMethod::default(),
            oversample: default_oversample(),
            ess_floor_fraction: default_ess_fraction(),
            burn_in: default_burn_in(),
            thin: default_thin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    /// Equally weighted draws.
    pub draws: Vec<ScenarioDraw<f64>>,
    pub components: Vec<Component>,
    /// Posterior mass of each mixture component, in [`Component::ALL`] order.
    pub component_weights: [f64; 3],
    pub effective_sample_size: f64,
    pub occupancy: [usize; 3],
    pub method: PosteriorMethod,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.draws.len() as f64; self.draws.len()]
    }
}

fn component_is_atom(priors: &PriorSpec, c: Component) -> bool {
    let control = priors.control.is_degenerate();
    match c {
        Component::NoSeparation => control,
        Component::Immediate => control && priors.post_hr.is_point_mass(),
        Component::Delayed => {
            control && priors.post_hr.is_point_mass() && priors.delay_months.is_point_mass()
        }
    }
}

struct Particles {
    draws: Vec<(Component, ScenarioDraw<f64>)>,
    /// Normalised resampling weights.
    weights: Vec<f64>,
    component_weights: [f64; 3],
    ess: f64,
}

fn weigh_prior_draws<R: Rng + ?Sized>(
    data: &InterimDataset,
    priors: &PriorSpec,
    per_component: usize,
    rng: &mut R,
) -> Result<Particles> {
    let gamma_hint = match priors.control.gamma {
        crate::priors::Distribution::PointMass { value } => value,
        d => d.median(),
    };
    let kernel = LikelihoodKernel::new(data, gamma_hint);
    let mut draws = Vec::new();
    let mut ll = Vec::new();
    let mut counts = [0usize; 3];
    for c in Component::ALL {
        if priors.component_mass(c) <= 0.0 {
            continue;
        }
        let k = if component_is_atom(priors, c) {
            1
        } else {
            per_component
        };
        counts[c.index()] = k;
        for _ in 0..k {
            let s = priors.sample_component(c, rng);
            let l = kernel.log_likelihood(&s);
            draws.push((c, s));
            ll.push(if l.is_nan() { f64::NEG_INFINITY } else { l });
        }
    }
    let top = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Domain {
            what: "posterior normalising constant",
            value: top,
        });
    }
    let rel: Vec<f64> = ll.iter().map(|l| (l - top).exp()).collect();
    let mut sums = [0.0; 3];
    for ((c, _), r) in draws.iter().zip(&rel) {
        sums[c.index()] += r;
    }
    // component evidence, up to the common factor exp(top)
    let mut cw = [0.0; 3];
    for c in Component::ALL {
        let k = counts[c.index()];
        if k > 0 {
            cw[c.index()] = priors.component_mass(c) * sums[c.index()] / k as f64;
        }
    }
    let total: f64 = cw.iter().sum();
    cw.iter_mut().for_each(|w| *w /= total);
    let weights: Vec<f64> = draws
        .iter()
        .zip(&rel)
        .map(|((c, _), r)| {
            let i = c.index();
            if sums[i] > 0.0 {
                cw[i] * r / sums[i]
            } else {
                0.0
            }
        })
        .collect();
    // an atom stands for `per_component` identical particles
    let mut sq = 0.0;
    for ((c, _), w) in draws.iter().zip(&weights) {
        if component_is_atom(priors, *c) {
            sq += w * w / per_component as f64;
        } else {
            sq += w * w;
        }
    }
    Ok(Particles {
        draws,
        weights,
        component_weights: cw,
        ess: 1.0 / sq,
    })
}

/// Systematic resampling of `m` indices from normalised `weights`.
fn systematic<R: Rng + ?Sized>(weights: &[f64], m: usize, rng: &mut R) -> Vec<usize> {
    let u0: f64 = rng.random::<f64>() / m as f64;
    let mut out = Vec::with_capacity(m);
    let mut cum = 0.0;
    let mut i = 0;
    for j in 0..m {
        let u = u0 + j as f64 / m as f64;
        while i + 1 < weights.len() && cum + weights[i] <= u {
            cum += weights[i];
            i += 1;
        }
        // skip trailing zero-weight particles
        while weights[i] == 0.0 && i + 1 < weights.len() {
            i += 1;
        }
        out.push(i);
    }
    out
}

pub fn posterior_sample<R: Rng + ?Sized>(
    data: &InterimDataset,
    priors: &PriorSpec,
    m: usize,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    posterior_sample_with(data, priors, m, &PosteriorConfig::default(), rng)
}

pub fn posterior_sample_with<R: Rng + ?Sized>(
    data: &InterimDataset,
    priors: &PriorSpec,
    m: usize,
    config: &PosteriorConfig,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    if m < 100 {
        return Err(Error::invalid("M", "at least 100 posterior draws required"));
    }
    priors.validate()?;
    let per_component = (config.oversample * m).max(m);
    let particles = weigh_prior_draws(data, priors, per_component, rng)?;
    let floor = config.ess_floor_fraction * m as f64;
    let method = match config.method {
        PosteriorMethod::Auto if particles.ess < floor => PosteriorMethod::Metropolis,
        PosteriorMethod::Auto => PosteriorMethod::Sir,
        other => other,
    };
    let (draws, components) = match method {
        PosteriorMethod::Metropolis => metropolis(data, priors, m, &particles, config, rng)?,
        _ => {
            if particles.ess < floor {
                return Err(Error::EffectiveSampleSize {
                    ess: particles.ess,
                    floor,
                    occupancy: occupancy_of(
                        particles
                            .draws
                            .iter()
                            .zip(&particles.weights)
                            .filter(|(_, w)| **w > 0.0)
                            .map(|((c, _), _)| *c),
                    ),
                });
            }
            let idx = systematic(&particles.weights, m, rng);
            idx.iter()
                .map(|&i| (particles.draws[i].1, particles.draws[i].0))
                .unzip()
        }
    };
    Ok(PosteriorDraws {
        occupancy: occupancy_of(components.iter().copied()),
        draws,
        components,
        component_weights: particles.component_weights,
        effective_sample_size: particles.ess,
        method,
    })
}

fn occupancy_of(it: impl Iterator<Item = Component>) -> [usize; 3] {
    let mut o = [0; 3];
    for c in it {
        o[c.index()] += 1;
    }
    o
}

/// Log-scale coordinates of the free parameters of a component.
#[derive(Clone, Copy)]
struct Coordinates {
    hr: bool,
    delay: bool,
    lambda: bool,
    gamma: bool,
}

impl Coordinates {
    fn of(priors: &PriorSpec, c: Component) -> Self {
        let sep = c != Component::NoSeparation;
        Self {
            hr: sep && !priors.post_hr.is_point_mass(),
            delay: c == Component::Delayed && !priors.delay_months.is_point_mass(),
            lambda: !priors.control.lambda_per_month.is_point_mass(),
            gamma: !priors.control.gamma.is_point_mass(),
        }
    }

    fn flags(&self) -> [bool; 4] {
        [self.hr, self.delay, self.lambda, self.gamma]
    }

    fn get(&self, s: &ScenarioDraw<f64>) -> [f64; 4] {
        [
            s.post_hr.ln(),
            s.delay.max(f64::MIN_POSITIVE).ln(),
            s.control.lambda.ln(),
            s.control.gamma.ln(),
        ]
    }

    fn set(&self, base: &ScenarioDraw<f64>, x: &[f64; 4]) -> ScenarioDraw<f64> {
        let mut s = *base;
        if self.hr {
            s.post_hr = x[0].exp();
        }
        if self.delay {
            s.delay = x[1].exp();
        }
        if self.lambda {
            s.control.lambda = x[2].exp();
        }
        if self.gamma {
            s.control.gamma = x[3].exp();
        }
        s
    }
}

fn log_target(
    kernel: &LikelihoodKernel,
    priors: &PriorSpec,
    coords: &Coordinates,
    s: &ScenarioDraw<f64>,
) -> f64 {
    let d = prior_density(priors, s).density;
    if !(d > 0.0) {
        return f64::NEG_INFINITY;
    }
    // Jacobian of the log transform for each free coordinate
    let x = coords.get(s);
    let jac: f64 = coords
        .flags()
        .iter()
        .zip(x)
        .filter(|(f, _)| **f)
        .map(|(_, v)| v)
        .sum();
    d.ln() + jac + kernel.log_likelihood(s)
}

fn metropolis<R: Rng + ?Sized>(
    data: &InterimDataset,
    priors: &PriorSpec,
    m: usize,
    particles: &Particles,
    config: &PosteriorConfig,
    rng: &mut R,
) -> Result<(Vec<ScenarioDraw<f64>>, Vec<Component>)> {
    // largest-remainder allocation of the M draws to components
    let cw = particles.component_weights;
    let mut alloc = [0usize; 3];
    let mut rem: Vec<(usize, f64)> = Vec::new();
    for i in 0..3 {
        let x = cw[i] * m as f64;
        alloc[i] = x.floor() as usize;
        rem.push((i, x - x.floor()));
    }
    rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let short = m - alloc.iter().sum::<usize>();
    for &(i, _) in rem.iter().take(short) {
        alloc[i] += 1;
    }

    let gamma_hint = particles
        .draws
        .first()
        .map(|d| d.1.control.gamma)
        .unwrap_or(1.0);
    let kernel = LikelihoodKernel::new(data, gamma_hint);
    let mut draws = Vec::with_capacity(m);
    let mut comps = Vec::with_capacity(m);
    for c in Component::ALL {
        let n = alloc[c.index()];
        if n == 0 {
            continue;
        }
        let members: Vec<(ScenarioDraw<f64>, f64)> = particles
            .draws
            .iter()
            .zip(&particles.weights)
            .filter(|((cc, _), _)| *cc == c)
            .map(|((_, s), w)| (*s, *w))
            .collect();
        let coords = Coordinates::of(priors, c);
        let free = coords.flags().iter().filter(|f| **f).count();
        let start = members
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|m| m.0)
            .ok_or(Error::NonConvergence {
                routine: "metropolis start",
                iterations: 0,
            })?;
        if free == 0 {
            draws.extend(std::iter::repeat_n(start, n));
            comps.extend(std::iter::repeat_n(c, n));
            continue;
        }
        // proposal scale from the prior draws' spread on the log scale
        let mut scale = [0.0; 4];
        let k = members.len() as f64;
        for (j, sj) in scale.iter_mut().enumerate() {
            let xs: Vec<f64> = members.iter().map(|m| coords.get(&m.0)[j]).collect();
            let mean = xs.iter().sum::<f64>() / k;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k.max(2.0);
            *sj = 0.5 * var.sqrt().max(1e-3) * 2.38 / (free as f64).sqrt();
        }
        let mut cur = start;
        let mut cur_lp = log_target(&kernel, priors, &coords, &cur);
        let steps = config.burn_in + n * config.thin.max(1);
        let normal = rand_distr::StandardNormal;
        for step in 0..steps {
            let mut x = coords.get(&cur);
            for j in 0..4 {
                if coords.flags()[j] {
                    let z: f64 = rng.sample(normal);
                    x[j] += scale[j] * z;
                }
            }
            let prop = coords.set(&cur, &x);
            let lp = log_target(&kernel, priors, &coords, &prop);
            if open_unit(rng).ln() < lp - cur_lp {
                cur = prop;
                cur_lp = lp;
            }
            if step >= config.burn_in && (step - config.burn_in).is_multiple_of(config.thin.max(1))
            {
                draws.push(cur);
                comps.push(c);
            }
        }
    }
    Ok((draws, comps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BPPResult {
    pub bpp: f64,
    pub successes: Vec<bool>,
    pub mc_se: f64,
}

/// Complete the trial once under `s` and report final-analysis success.
fn project_once<R: Rng + ?Sized>(
    data: &InterimDataset,
    design: &TrialDesign,
    s: &ScenarioDraw<f64>,
    critical: f64,
    rng: &mut R,
) -> Result<bool> {
    let n = design.n_total();
    let mut arm = Vec::with_capacity(n);
    let mut recruit = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for r in &data.records {
        arm.push(r.arm);
        recruit.push(r.recruit_time);
        latent.push(if r.event {
            r.observed_time
        } else {
            sample_conditional(r.arm, r.observed_time, s, rng)?
        });
    }
    let start = data.calendar_time.min(design.recruitment_months);
    let span = design.recruitment_months - start;
    for (a, planned) in [
        (Arm::Control, design.n_control),
        (Arm::Experimental, design.n_experimental),
    ] {
        let missing = planned.saturating_sub(data.recruited(a));
        let times = sample_arm(a, missing, s, rng)?;
        for t in times {
            let u: f64 = rng.random();
            arm.push(a);
            recruit.push(start + u * span);
            latent.push(t);
        }
    }
    let trial = LatentTrial::from_parts(arm, recruit, latent);
    let mut scratch = Vec::with_capacity(n);
    let cut = trial.analyse(design.total_events, &mut scratch)?;
    Ok(cut.z > critical)
}

/// Predictive probability that the final analysis at `E` events exceeds the
/// design's final critical value.
pub fn predictive_probability<R: Rng + ?Sized>(
    data: &InterimDataset,
    draws: &PosteriorDraws,
    design: &TrialDesign,
    rng: &mut R,
) -> Result<BPPResult> {
    design.validate()?;
    if draws.is_empty() {
        return Err(Error::invalid("draws", "posterior sample is empty"));
    }
    let critical = design.boundaries.final_critical();
    let mut successes = Vec::with_capacity(draws.len());
    for (j, s) in draws.draws.iter().enumerate() {
        let u = project_once(data, design, s, critical, rng).map_err(|e| Error::Replicate {
            index: j,
            seed: 0,
            source: Box::new(e),
        })?;
        successes.push(u);
    }
    let m = successes.len() as f64;
    let bpp = successes.iter().filter(|&&u| u).count() as f64 / m;
    Ok(BPPResult {
        bpp,
        successes,
        mc_se: (bpp * (1.0 - bpp) / m).sqrt(),
    })
}

/// Stop for futility iff `bpp < threshold`.
pub fn futility_rule(bpp: f64, threshold: f64) -> Result<bool> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("threshold", "must lie in (0, 1)"));
    }
    Ok(bpp < threshold)
}

/// Proportion of BPP values strictly outside `(lower, upper)`.
pub fn informativeness(bpps: &[f64], lower: f64, upper: f64) -> f64 {
    if bpps.is_empty() {
        return 0.0;
    }
    bpps.iter().filter(|&&b| b > upper || b < lower).count() as f64 / bpps.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignStageBpp {
    pub fraction: f64,
    pub bpp: Vec<f64>,
    pub informativeness: f64,
    /// Mean BPP; estimates the no-interim probability of success.
    pub mean_bpp: f64,
    /// Standard error of `mean_bpp` across trials.
    pub mean_bpp_se: f64,
}

/// BPP at `fraction` for `n_trials` trials simulated from the prior.
/// Trial `i` shares its scenario and latent data with OC replicate `i`
/// under the same seed.
pub fn design_stage_bpp(
    design: &TrialDesign,
    priors: &PriorSpec,
    fraction: f64,
    n_trials: usize,
    m: usize,
    master_seed: u64,
) -> Result<DesignStageBpp> {
    design_stage_bpp_with(
        design,
        priors,
        fraction,
        n_trials,
        m,
        master_seed,
        &PosteriorConfig::default(),
        None,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn design_stage_bpp_with(
    design: &TrialDesign,
    priors: &PriorSpec,
    fraction: f64,
    n_trials: usize,
    m: usize,
    master_seed: u64,
    config: &PosteriorConfig,
    progress: Option<&std::sync::atomic::AtomicUsize>,
) -> Result<DesignStageBpp> {
    if n_trials == 0 {
        return Err(Error::invalid("N", "must be at least 1"));
    }
    design.validate()?;
    priors.validate()?;
    let bpp: Vec<Result<f64>> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let r = (|| {
                let scenario = replicate_scenario(priors, master_seed, i);
                let mut data_rng = stream(master_seed, Purpose::TrialData, i as u64);
                let trial = LatentTrial::generate(design, &scenario, &mut data_rng)?;
                let data = InterimDataset::from_trial(&trial, design, fraction)?;
                let mut post_rng = stream(master_seed, Purpose::Posterior, i as u64);
                let draws = posterior_sample_with(&data, priors, m, config, &mut post_rng)?;
                let mut proj_rng = stream(master_seed, Purpose::Projection, i as u64);
                Ok(predictive_probability(&data, &draws, design, &mut proj_rng)?.bpp)
            })()
            .map_err(|e| Error::Replicate {
                index: i,
                seed: derive_seed(master_seed, Purpose::TrialData, i as u64),
                source: Box::new(e),
            });
            if let Some(p) = progress {
                p.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            }
            r
        })
        .collect();
    let bpp: Vec<f64> = bpp.into_iter().collect::<Result<_>>()?;
    let n = bpp.len() as f64;
    let mean = bpp.iter().sum::<f64>() / n;
    let var = if n > 1.0 {
        bpp.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(DesignStageBpp {
        fraction,
        informativeness: informativeness(&bpp, 0.05, 0.95),
        mean_bpp: mean,
        mean_bpp_se: (var / n).sqrt(),
        bpp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundaries::BoundarySet;
    use crate::priors::{worked_example, ControlPrior, Distribution};
    use crate::rng::{stream, Purpose};

    fn control() -> ControlParams<f64> {
        ControlParams::new(0.08, 1.0).unwrap()
    }

    fn record(arm: Arm, t: f64, event: bool) -> PatientRecord {
        PatientRecord {
            arm,
            recruit_time: 0.0,
            latent_survival: t,
            pseudo_event_time: t,
            observed_time: t,
            event,
        }
    }

    fn dataset(records: Vec<PatientRecord>) -> InterimDataset {
        let events = records.iter().filter(|r| r.event).count();
        InterimDataset {
            records,
            fraction: 0.5,
            events_observed: events,
            calendar_time: 10.0,
        }
    }

    fn simulated_interim(s: &ScenarioDraw<f64>, seed: u64) -> (InterimDataset, TrialDesign) {
        let design = TrialDesign::new(300, 300, 450, 12.0, BoundarySet::fixed(0.025)).unwrap();
        let trial =
            LatentTrial::generate(&design, s, &mut stream(seed, Purpose::TrialData, 0)).unwrap();
        (
            InterimDataset::from_trial(&trial, &design, 0.5).unwrap(),
            design,
        )
    }

    #[test]
    fn single_exponential_event() {
        let d = dataset(vec![record(Arm::Control, 7.0, true)]);
        let s = ScenarioDraw::null(control());
        let expected = 0.08f64.ln() - 0.08 * 7.0;
        assert!((log_likelihood(&d, &s).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn unit_hazard_ratio_collapses_to_control_formula() {
        let recs = vec![
            record(Arm::Experimental, 2.0, true),
            record(Arm::Experimental, 9.0, false),
            record(Arm::Experimental, 5.5, true),
        ];
        let as_control: Vec<_> = recs
            .iter()
            .map(|r| PatientRecord {
                arm: Arm::Control,
                ..*r
            })
            .collect();
        let s = ScenarioDraw::new(ControlParams::new(0.1, 1.3).unwrap(), 3.0, 1.0).unwrap();
        let a = log_likelihood(&dataset(recs), &s).unwrap();
        let b = log_likelihood(&dataset(as_control), &s).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn single_record_density_integrates_to_one() {
        // Simpson on each side of the knot plus the analytic tail
        let s = ScenarioDraw::new(ControlParams::new(0.08, 1.4).unwrap(), 4.0, 0.6).unwrap();
        let upper = 300.0;
        let f = |t: f64| {
            if t == 0.0 {
                return 0.0;
            }
            log_likelihood(&dataset(vec![record(Arm::Experimental, t, true)]), &s)
                .unwrap()
                .exp()
        };
        let simpson = |lo: f64, hi: f64, f_lo: f64, n: usize| {
            let h = (hi - lo) / n as f64;
            let mut acc = f_lo + f(hi);
            for i in 1..n {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
            }
            acc * h / 3.0
        };
        // the density jumps by the factor 0.6 across the knot
        let total = simpson(0.0, 4.0, f(0.0), 20_000) + simpson(4.0, upper, 0.6 * f(4.0), 200_000);
        let tail = log_likelihood(&dataset(vec![record(Arm::Experimental, upper, false)]), &s)
            .unwrap()
            .exp();
        assert!((total + tail - 1.0).abs() < 1e-6, "{}", total + tail);
    }

    #[test]
    fn fast_kernel_matches_direct_sum() {
        let s = ScenarioDraw::new(ControlParams::new(0.08, 1.0).unwrap(), 4.0, 0.6).unwrap();
        let (data, _) = simulated_interim(&s, 3);
        let kernel = LikelihoodKernel::new(&data, 1.0);
        for (delay, hr, lambda) in [
            (0.0, 0.7, 0.08),
            (3.3, 0.5, 0.07),
            (40.0, 0.2, 0.1),
            (2.0, 1.0, 0.08),
        ] {
            let q = ScenarioDraw::new(ControlParams::new(lambda, 1.0).unwrap(), delay, hr).unwrap();
            let a = kernel.log_likelihood(&q);
            let b = log_likelihood(&data, &q).unwrap();
            assert!((a - b).abs() < 1e-8 * b.abs(), "{a} {b}");
        }
        // shape mismatch falls back to the direct route
        let q = ScenarioDraw::new(ControlParams::new(0.08, 1.2).unwrap(), 4.0, 0.6).unwrap();
        assert!((kernel.log_likelihood(&q) - log_likelihood(&data, &q).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn knot_tie_belongs_to_pre_delay_branch() {
        let s = ScenarioDraw::new(control(), 4.0, 0.5).unwrap();
        let d = dataset(vec![record(Arm::Experimental, 4.0, true)]);
        let expected = 0.08f64.ln() - 0.32;
        assert!((log_likelihood(&d, &s).unwrap() - expected).abs() < 1e-14);
        let k = LikelihoodKernel::new(&d, 1.0);
        assert!((k.log_likelihood(&s) - expected).abs() < 1e-14);
    }

    fn two_atom_prior() -> PriorSpec {
        PriorSpec {
            p_separate: 0.5,
            p_dte: 1.0,
            post_hr: Distribution::PointMass { value: 0.6 },
            delay_months: Distribution::PointMass { value: 4.0 },
            control: ControlPrior::fixed(0.08, 1.0),
        }
    }

    #[test]
    fn two_atom_posterior_is_exact_bayes() {
        let truth = ScenarioDraw::new(control(), 4.0, 0.6).unwrap();
        let (data, _) = simulated_interim(&truth, 17);
        // hand Bayes from the two likelihood values
        let l1 = log_likelihood(&data, &ScenarioDraw::null(control())).unwrap();
        let l2 = log_likelihood(&data, &truth).unwrap();
        let top = l1.max(l2);
        let (w1, w2) = (0.5 * (l1 - top).exp(), 0.5 * (l2 - top).exp());
        let p2 = w2 / (w1 + w2);
        let post = posterior_sample(
            &data,
            &two_atom_prior(),
            500,
            &mut stream(1, Purpose::Posterior, 0),
        )
        .unwrap();
        assert!((post.component_weights[Component::Delayed.index()] - p2).abs() < 1e-10);
        assert!(
            (post.component_weights[Component::NoSeparation.index()] - (1.0 - p2)).abs() < 1e-10
        );
        assert_eq!(post.component_weights[Component::Immediate.index()], 0.0);
        let share = post.occupancy[Component::Delayed.index()] as f64 / 500.0;
        assert!((share - p2).abs() <= 1.0 / 500.0 + 1e-12);
    }

    #[test]
    fn empty_data_posterior_is_the_prior() {
        let p = worked_example();
        let post = posterior_sample(
            &InterimDataset::empty(),
            &p,
            2000,
            &mut stream(2, Purpose::Posterior, 0),
        )
        .unwrap();
        let w = post.component_weights;
        for c in Component::ALL {
            assert!((w[c.index()] - p.component_mass(c)).abs() < 1e-12);
        }
        // separated draws carry the continuous HR prior
        let mut hrs: Vec<f64> = post
            .draws
            .iter()
            .zip(&post.components)
            .filter(|(_, c)| **c != Component::NoSeparation)
            .map(|(s, _)| s.post_hr)
            .collect();
        hrs.sort_by(f64::total_cmp);
        let n = hrs.len() as f64;
        let ks = hrs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = p.post_hr.cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.04, "{ks}");
    }

    #[test]
    fn zero_likelihood_regions_are_never_drawn() {
        // with shape 2 the hazard vanishes at t = 0, so an event there has
        // zero likelihood under every draw
        let mut p = two_atom_prior();
        p.control = ControlPrior::fixed(0.08, 2.0);
        let data = dataset(vec![record(Arm::Control, 0.0, true)]);
        assert!(posterior_sample(&data, &p, 200, &mut stream(3, Purpose::Posterior, 0)).is_err());
        let w = systematic(
            &[0.0, 0.5, 0.0, 0.5, 0.0],
            1000,
            &mut stream(3, Purpose::General, 0),
        );
        assert!(w.iter().all(|&i| i == 1 || i == 3));
        let w = systematic(&[0.0, 0.0, 1.0], 10, &mut stream(4, Purpose::General, 0));
        assert!(w.iter().all(|&i| i == 2));
    }

    #[test]
    fn ess_floor_is_enforced() {
        let truth = ScenarioDraw::new(control(), 0.0, 0.5).unwrap();
        let (data, _) = simulated_interim(&truth, 5);
        let config = PosteriorConfig {
            oversample: 1,
            ess_floor_fraction: 0.99,
            ..Default::default()
        };
        let strict = PosteriorConfig {
            method: PosteriorMethod::Sir,
            ..config
        };
        let err = posterior_sample_with(
            &data,
            &worked_example(),
            100,
            &strict,
            &mut stream(4, Purpose::Posterior, 0),
        );
        assert!(matches!(err, Err(Error::EffectiveSampleSize { .. })));
        let auto = PosteriorConfig {
            method: PosteriorMethod::Auto,
            ..config
        };
        let post = posterior_sample_with(
            &data,
            &worked_example(),
            100,
            &auto,
            &mut stream(4, Purpose::Posterior, 0),
        )
        .unwrap();
        assert_eq!(post.method, PosteriorMethod::Metropolis);
        assert_eq!(post.len(), 100);
    }

    #[test]
    fn metropolis_agrees_with_sir() {
        let truth = ScenarioDraw::new(control(), 3.0, 0.55).unwrap();
        let (data, _) = simulated_interim(&truth, 8);
        let p = worked_example();
        let mean_hr = |post: &PosteriorDraws| {
            let v: Vec<f64> = post
                .draws
                .iter()
                .zip(&post.components)
                .filter(|(_, c)| **c == Component::Delayed)
                .map(|(s, _)| s.post_hr)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let sir = posterior_sample(&data, &p, 1000, &mut stream(6, Purpose::Posterior, 0)).unwrap();
        let mh = posterior_sample_with(
            &data,
            &p,
            1000,
            &PosteriorConfig {
                method: PosteriorMethod::Metropolis,
                ..Default::default()
            },
            &mut stream(6, Purpose::Posterior, 0),
        )
        .unwrap();
        assert!(
            (mean_hr(&sir) - mean_hr(&mh)).abs() < 0.03,
            "{} {}",
            mean_hr(&sir),
            mean_hr(&mh)
        );
    }

    #[test]
    fn small_m_rejected() {
        assert!(posterior_sample(
            &InterimDataset::empty(),
            &worked_example(),
            99,
            &mut stream(0, Purpose::Posterior, 0)
        )
        .is_err());
    }

    #[test]
    fn futility_rule_is_strict() {
        assert!(futility_rule(0.09, 0.10).unwrap());
        assert!(!futility_rule(0.10, 0.10).unwrap());
        assert!(!futility_rule(0.5, 0.10).unwrap());
        assert!(futility_rule(0.5, 1.0).is_err());
    }

    #[test]
    fn informativeness_counts_strictly_outside() {
        assert_eq!(informativeness(&[0.05, 0.95, 0.5], 0.05, 0.95), 0.0);
        assert_eq!(informativeness(&[0.01, 0.99, 0.5, 0.7], 0.05, 0.95), 0.5);
        assert_eq!(informativeness(&[0.2, 0.7], 0.5, 0.5), 1.0);
    }

    #[test]
    fn near_complete_trial_with_strong_signal() {
        let truth = ScenarioDraw::new(control(), 0.0, 0.4).unwrap();
        let design = TrialDesign::new(300, 300, 450, 12.0, BoundarySet::fixed(0.025)).unwrap();
        let trial =
            LatentTrial::generate(&design, &truth, &mut stream(1, Purpose::TrialData, 0)).unwrap();
        let data = InterimDataset::from_trial(&trial, &design, 0.999).unwrap();
        let mut rng = stream(1, Purpose::Posterior, 0);
        let post = posterior_sample(&data, &worked_example(), 200, &mut rng).unwrap();
        let r = predictive_probability(&data, &post, &design, &mut rng).unwrap();
        assert!(r.bpp >= 0.99, "{}", r.bpp);
        let k = r.successes.iter().filter(|&&u| u).count();
        assert_eq!(r.bpp, k as f64 / 200.0);
        assert!((r.mc_se - (r.bpp * (1.0 - r.bpp) / 200.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn null_projection_is_rarely_successful() {
        let mut p = worked_example();
        p.p_separate = 0.0;
        let null = ScenarioDraw::null(control());
        let design = TrialDesign::new(300, 300, 450, 12.0, BoundarySet::fixed(0.025)).unwrap();
        // find a trial whose interim Z at 20% is near zero
        let mut scratch = Vec::new();
        let mut seed = 0;
        let trial = loop {
            let t = LatentTrial::generate(&design, &null, &mut stream(seed, Purpose::TrialData, 0))
                .unwrap();
            if t.analyse(90, &mut scratch).unwrap().z.abs() < 0.3 {
                break t;
            }
            seed += 1;
        };
        let data = InterimDataset::from_trial(&trial, &design, 0.2).unwrap();
        let mut rng = stream(seed, Purpose::Posterior, 0);
        let post = posterior_sample(&data, &p, 500, &mut rng).unwrap();
        let r = predictive_probability(&data, &post, &design, &mut rng).unwrap();
        assert!(r.bpp <= 0.05, "{}", r.bpp);
    }

    #[test]
    fn single_trial_design_stage() {
        let design = TrialDesign::new(60, 60, 90, 12.0, BoundarySet::fixed(0.025)).unwrap();
        let r = design_stage_bpp(&design, &worked_example(), 0.5, 1, 100, 4).unwrap();
        assert_eq!(r.bpp.len(), 1);
        assert!(r.informativeness == 0.0 || r.informativeness == 1.0);
        let again = design_stage_bpp(&design, &worked_example(), 0.5, 1, 100, 4).unwrap();
        assert_eq!(r, again);
    }
}
