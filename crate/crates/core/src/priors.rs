//! Elicited joint prior over the true state of nature.
//!
//! Separation happens with probability `p_separate`; given separation the
//! post-delay hazard ratio comes from `post_hr`, and with probability
//! `p_dte` there is a delay drawn from `delay_months` (otherwise zero).
//! Without separation the draw is canonicalised to `post_hr = 1, delay = 0`.

use rand::Rng;
use rand_distr::Distribution as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF};

use crate::dte_model::{ControlParams, ScenarioDraw};
use crate::error::{Error, Result};
use crate::normal;
use crate::rng::open_unit;

/// Parametric distribution descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    PointMass {
        value: f64,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    /// Beta law stretched onto `[lower, upper]`.
    ScaledBeta {
        alpha: f64,
        beta: f64,
        lower: f64,
        upper: f64,
    },
}

impl Distribution {
    pub fn validate(&self, field: &str) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        let valid = match *self {
            Distribution::PointMass { value } => value.is_finite(),
            Distribution::Gamma { shape, rate } => ok(shape) && ok(rate),
            Distribution::Lognormal { mu, sigma } => mu.is_finite() && ok(sigma),
            Distribution::ScaledBeta {
                alpha,
                beta,
                lower,
                upper,
            } => ok(alpha) && ok(beta) && lower.is_finite() && upper.is_finite() && upper > lower,
        };
        if valid {
            Ok(())
        } else {
            Err(Error::invalid(
                field,
                format!("invalid parameters for {self:?}"),
            ))
        }
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(self, Distribution::PointMass { .. })
    }

    /// Lower end of the support.
    pub fn support_min(&self) -> f64 {
        match *self {
            Distribution::PointMass { value } => value,
            Distribution::Gamma { .. } | Distribution::Lognormal { .. } => 0.0,
            Distribution::ScaledBeta { lower, .. } => lower,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::PointMass { value } => value,
            Distribution::Gamma { shape, rate } => rand_distr::Gamma::new(shape, 1.0 / rate)
                .expect("validated gamma")
                .sample(rng),
            Distribution::Lognormal { mu, sigma } => {
                (mu + sigma * normal::quantile(open_unit(rng))).exp()
            }
            Distribution::ScaledBeta {
                alpha,
                beta,
                lower,
                upper,
            } => {
                let x: f64 = rand_distr::Beta::new(alpha, beta)
                    .expect("validated beta")
                    .sample(rng);
                lower + (upper - lower) * x
            }
        }
    }

    /// Density; zero for a point mass (it has no continuous part).
    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Distribution::PointMass { .. } => 0.0,
            Distribution::Gamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    statrs::distribution::Gamma::new(shape, rate)
                        .unwrap()
                        .pdf(x)
                }
            }
            Distribution::Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    let z = (x.ln() - mu) / sigma;
                    normal::pdf(z) / (sigma * x)
                }
            }
            Distribution::ScaledBeta {
                alpha,
                beta,
                lower,
                upper,
            } => {
                if x <= lower || x >= upper {
                    0.0
                } else {
                    let w = upper - lower;
                    statrs::distribution::Beta::new(alpha, beta)
                        .unwrap()
                        .pdf((x - lower) / w)
                        / w
                }
            }
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.pdf(x).ln()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Distribution::PointMass { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
            Distribution::Gamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    statrs::distribution::Gamma::new(shape, rate)
                        .unwrap()
                        .cdf(x)
                }
            }
            Distribution::Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    normal::cdf((x.ln() - mu) / sigma)
                }
            }
            Distribution::ScaledBeta {
                alpha,
                beta,
                lower,
                upper,
            } => {
                if x <= lower {
                    0.0
                } else if x >= upper {
                    1.0
                } else {
                    statrs::distribution::Beta::new(alpha, beta)
                        .unwrap()
                        .cdf((x - lower) / (upper - lower))
                }
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Distribution::PointMass { value } => value,
            Distribution::Lognormal { mu, sigma } => (mu + sigma * normal::quantile(p)).exp(),
            _ => self.invert_cdf(p),
        }
    }

    /// Safeguarded Newton on the CDF inside a maintained bracket.
    fn invert_cdf(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = match *self {
            Distribution::ScaledBeta { lower, upper, .. } => (lower, upper),
            _ => {
                let mut hi = 1.0;
                while self.cdf(hi) < p {
                    hi *= 2.0;
                }
                (0.0, hi)
            }
        };
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.cdf(x) - p;
            if f == 0.0 {
                return x;
            }
            if f < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.pdf(x);
            let newton = x - f / d;
            x = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (hi - lo) <= 1e-15 * hi.abs().max(1e-300) {
                break;
            }
        }
        x
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::PointMass { value } => value,
            Distribution::Gamma { shape, rate } => shape / rate,
            Distribution::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Distribution::ScaledBeta {
                alpha,
                beta,
                lower,
                upper,
            } => lower + (upper - lower) * alpha / (alpha + beta),
        }
    }
}

/// Point mass mixed with a continuous component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    pub point_mass_value: f64,
    pub point_mass_prob: f64,
    pub continuous: Distribution,
}

impl MixturePrior {
    pub fn validate(&self, field: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.point_mass_prob) {
            return Err(Error::invalid(
                field,
                "point mass probability must lie in [0, 1]",
            ));
        }
        self.continuous.validate(field)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = open_unit(rng);
        let x = self.continuous.sample(rng);
        if u < self.point_mass_prob {
            self.point_mass_value
        } else {
            x
        }
    }
}

/// Prior for the control-arm Weibull parameters given historical data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPrior {
    pub lambda_per_month: Distribution,
    pub gamma: Distribution,
}

impl ControlPrior {
    pub fn fixed(lambda: f64, gamma: f64) -> Self {
        Self {
            lambda_per_month: Distribution::PointMass { value: lambda },
            gamma: Distribution::PointMass { value: gamma },
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.lambda_per_month.is_point_mass() && self.gamma.is_point_mass()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ControlParams<f64> {
        loop {
            let lambda = self.lambda_per_month.sample(rng);
            let gamma = self.gamma.sample(rng);
            if let Ok(p) = ControlParams::new(lambda, gamma) {
                return p;
            }
        }
    }

    /// Density factor of the non-degenerate parameters.
    pub fn density(&self, p: &ControlParams<f64>) -> f64 {
        let factor = |d: &Distribution, x: f64| match d {
            Distribution::PointMass { value } => {
                if *value == x {
                    1.0
                } else {
                    0.0
                }
            }
            _ => d.pdf(x),
        };
        factor(&self.lambda_per_month, p.lambda) * factor(&self.gamma, p.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Probability the survival curves separate.
    pub p_separate: f64,
    /// Probability of a delay, given separation.
    pub p_dte: f64,
    /// Post-delay hazard ratio given separation.
    pub post_hr: Distribution,
    /// Delay length given a delayed effect.
    pub delay_months: Distribution,
    pub control: ControlPrior,
}

/// Mixture branch of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// Curves never separate: `post_hr = 1`, `delay = 0`.
    NoSeparation,
    /// Separation from time zero.
    Immediate,
    /// Separation after a positive delay.
    Delayed,
}

impl Component {
    pub const ALL: [Component; 3] = [
        Component::NoSeparation,
        Component::Immediate,
        Component::Delayed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Prior weight of a draw: the point-mass branch it falls in and the
/// density of its continuous coordinates within that branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorDensity {
    pub component: Component,
    /// Prior probability of the branch.
    pub mass: f64,
    /// Product of the continuous densities active in the branch.
    pub density: f64,
}

impl PriorDensity {
    pub fn weight(&self) -> f64 {
        self.mass * self.density
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_separate) {
            return Err(Error::invalid("p_separate", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_dte) {
            return Err(Error::invalid("p_dte", "must lie in [0, 1]"));
        }
        self.post_hr.validate("post_hr")?;
        self.delay_months.validate("delay_months")?;
        self.control
            .lambda_per_month
            .validate("control.lambda_per_month")?;
        self.control.gamma.validate("control.gamma")?;
        if self.post_hr.support_min() < 0.0
            || matches!(self.post_hr, Distribution::PointMass { value } if value <= 0.0)
        {
            return Err(Error::invalid("post_hr", "support must lie in (0, inf)"));
        }
        if self.delay_months.support_min() < 0.0 {
            return Err(Error::invalid(
                "delay_months",
                "support must lie in [0, inf)",
            ));
        }
        for (name, d) in [
            ("control.lambda_per_month", self.control.lambda_per_month),
            ("control.gamma", self.control.gamma),
        ] {
            if d.support_min() < 0.0
                || matches!(d, Distribution::PointMass { value } if value <= 0.0)
            {
                return Err(Error::invalid(name, "support must lie in (0, inf)"));
            }
        }
        Ok(())
    }

    /// The hazard-ratio prior as a mixture with the no-separation atom at 1.
    pub fn hr_mixture(&self) -> MixturePrior {
        MixturePrior {
            point_mass_value: 1.0,
            point_mass_prob: 1.0 - self.p_separate,
            continuous: self.post_hr,
        }
    }

    /// The delay prior given separation, with the no-delay atom at 0.
    pub fn delay_mixture(&self) -> MixturePrior {
        MixturePrior {
            point_mass_value: 0.0,
            point_mass_prob: 1.0 - self.p_dte,
            continuous: self.delay_months,
        }
    }

    pub fn component_mass(&self, c: Component) -> f64 {
        match c {
            Component::NoSeparation => 1.0 - self.p_separate,
            Component::Immediate => self.p_separate * (1.0 - self.p_dte),
            Component::Delayed => self.p_separate * self.p_dte,
        }
    }

    pub fn component_of(&self, s: &ScenarioDraw<f64>) -> Component {
        if s.post_hr == 1.0 && s.delay == 0.0 {
            Component::NoSeparation
        } else if s.delay == 0.0 {
            Component::Immediate
        } else {
            Component::Delayed
        }
    }

    /// Draw the continuous coordinates of one branch.
    pub fn sample_component<R: Rng + ?Sized>(
        &self,
        c: Component,
        rng: &mut R,
    ) -> ScenarioDraw<f64> {
        let control = self.control.sample(rng);
        match c {
            Component::NoSeparation => ScenarioDraw::null(control),
            Component::Immediate => ScenarioDraw {
                control,
                delay: 0.0,
                post_hr: self.post_hr.sample(rng),
            },
            Component::Delayed => ScenarioDraw {
                control,
                delay: self.delay_months.sample(rng),
                post_hr: self.post_hr.sample(rng),
            },
        }
    }
}

/// One draw from the joint prior.
///
/// Every coordinate is drawn unconditionally and in a fixed order, so two
/// specs differing only in mixture weights stay coupled on a shared stream.
pub fn sample_scenario<R: Rng + ?Sized>(spec: &PriorSpec, rng: &mut R) -> ScenarioDraw<f64> {
    let u_separate = open_unit(rng);
    let u_delay = open_unit(rng);
    let hr = spec.post_hr.sample(rng);
    let delay = spec.delay_months.sample(rng);
    let control = spec.control.sample(rng);
    if u_separate < spec.p_separate {
        ScenarioDraw {
            control,
            delay: if u_delay < spec.p_dte { delay } else { 0.0 },
            post_hr: hr,
        }
    } else {
        ScenarioDraw::null(control)
    }
}

fn atom_or_density(d: &Distribution, x: f64) -> f64 {
    match d {
        Distribution::PointMass { value } => {
            if *value == x {
                1.0
            } else {
                0.0
            }
        }
        _ => d.pdf(x),
    }
}

pub fn prior_density(spec: &PriorSpec, s: &ScenarioDraw<f64>) -> PriorDensity {
    let component = spec.component_of(s);
    let control = spec.control.density(&s.control);
    let density = match component {
        Component::NoSeparation => control,
        Component::Immediate => control * atom_or_density(&spec.post_hr, s.post_hr),
        Component::Delayed => {
            control
                * atom_or_density(&spec.post_hr, s.post_hr)
                * atom_or_density(&spec.delay_months, s.delay)
        }
    };
    PriorDensity {
        component,
        mass: spec.component_mass(component),
        density,
    }
}

// ---------------------------------------------------------------------------
// Fitting to elicited quantiles

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Gamma,
    Lognormal,
    ScaledBeta { lower: f64, upper: f64 },
}

/// Least-squares scale on which elicited and fitted quantiles are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitScale {
    /// `sum (F(v_i) - p_i)^2`.
    #[default]
    Probability,
    /// `sum (Q(p_i) - v_i)^2`.
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub probability: f64,
    pub value: f64,
}

fn build(family: Family, x: &[f64; 2]) -> Distribution {
    match family {
        // (log shape, log mean) keeps the valley of the objective well conditioned
        Family::Gamma => Distribution::Gamma {
            shape: x[0].exp(),
            rate: (x[0] - x[1]).exp(),
        },
        Family::Lognormal => Distribution::Lognormal {
            mu: x[0],
            sigma: x[1].exp(),
        },
        Family::ScaledBeta { lower, upper } => Distribution::ScaledBeta {
            alpha: x[0].exp(),
            beta: x[1].exp(),
            lower,
            upper,
        },
    }
}

fn residuals(family: Family, scale: FitScale, pts: &[QuantilePoint], x: &[f64; 2]) -> Vec<f64> {
    let d = build(family, x);
    pts.iter()
        .map(|q| match scale {
            FitScale::Probability => d.cdf(q.value) - q.probability,
            FitScale::Quantile => d.quantile(q.probability) - q.value,
        })
        .collect()
}

fn objective(family: Family, scale: FitScale, pts: &[QuantilePoint], x: &[f64; 2]) -> f64 {
    let r = residuals(family, scale, pts, x);
    if r.iter().all(|v| v.is_finite()) {
        r.iter().map(|v| v * v).sum()
    } else {
        f64::INFINITY
    }
}

fn jacobian(family: Family, scale: FitScale, pts: &[QuantilePoint], x: &[f64; 2]) -> Vec<[f64; 2]> {
    let mut jac = vec![[0.0; 2]; pts.len()];
    for j in 0..2 {
        let h = 1e-6 * (1.0 + x[j].abs());
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        let rp = residuals(family, scale, pts, &xp);
        let rm = residuals(family, scale, pts, &xm);
        for i in 0..pts.len() {
            jac[i][j] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

fn gradient(family: Family, scale: FitScale, pts: &[QuantilePoint], x: &[f64; 2]) -> [f64; 2] {
    let r = residuals(family, scale, pts, x);
    let jac = jacobian(family, scale, pts, x);
    let mut g = [0.0; 2];
    for i in 0..pts.len() {
        g[0] += 2.0 * jac[i][0] * r[i];
        g[1] += 2.0 * jac[i][1] * r[i];
    }
    g
}

fn initial_guess(family: Family, pts: &[QuantilePoint]) -> [f64; 2] {
    let first = pts[0];
    let last = pts[pts.len() - 1];
    let (zl, zh) = (
        normal::quantile(first.probability),
        normal::quantile(last.probability),
    );
    match family {
        Family::Lognormal => {
            let sigma = ((last.value.ln() - first.value.ln()) / (zh - zl)).max(1e-3);
            [first.value.ln() - zl * sigma, sigma.ln()]
        }
        Family::Gamma => {
            let sd = ((last.value - first.value) / (zh - zl)).max(1e-12);
            let mean = (first.value - zl * sd).max(sd);
            let shape = (mean / sd).powi(2);
            [shape.ln(), mean.ln()]
        }
        Family::ScaledBeta { lower, upper } => {
            let (lo, hi) = (lower, upper);
            let w = hi - lo;
            let sd = ((last.value - first.value) / (zh - zl) / w).clamp(1e-3, 0.28);
            let mean = ((first.value - lo) / w - zl * sd).clamp(0.02, 0.98);
            let nu = (mean * (1.0 - mean) / (sd * sd) - 1.0).max(0.5);
            [(mean * nu).ln(), ((1.0 - mean) * nu).ln()]
        }
    }
}

fn levenberg_marquardt(
    family: Family,
    scale: FitScale,
    pts: &[QuantilePoint],
    mut x: [f64; 2],
) -> Option<[f64; 2]> {
    let mut mu = 1e-3;
    let mut f = objective(family, scale, pts, &x);
    for _ in 0..500 {
        let r = residuals(family, scale, pts, &x);
        let jac = jacobian(family, scale, pts, &x);
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for i in 0..pts.len() {
            for a in 0..2 {
                jtr[a] += jac[i][a] * r[i];
                for b in 0..2 {
                    jtj[a][b] += jac[i][a] * jac[i][b];
                }
            }
        }
        if (2.0 * jtr[0]).hypot(2.0 * jtr[1]) < 1e-10 {
            return Some(x);
        }
        let mut improved = false;
        for _ in 0..60 {
            let a00 = jtj[0][0] * (1.0 + mu);
            let a11 = jtj[1][1] * (1.0 + mu);
            let a01 = jtj[0][1];
            let det = a00 * a11 - a01 * a01;
            if det.abs() < 1e-300 {
                mu *= 10.0;
                continue;
            }
            let step = [
                -(a11 * jtr[0] - a01 * jtr[1]) / det,
                -(a00 * jtr[1] - a01 * jtr[0]) / det,
            ];
            let cand = [x[0] + step[0], x[1] + step[1]];
            let fc = objective(family, scale, pts, &cand);
            if fc < f {
                x = cand;
                f = fc;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            // no descent direction left at working precision
            let g = gradient(family, scale, pts, &x);
            return (g[0].hypot(g[1]) < 1e-8).then_some(x);
        }
    }
    None
}

fn nelder_mead(
    family: Family,
    scale: FitScale,
    pts: &[QuantilePoint],
    start: [f64; 2],
) -> [f64; 2] {
    let f = |x: &[f64; 2]| objective(family, scale, pts, x);
    let mut simplex = [
        start,
        [start[0] + 0.5, start[1]],
        [start[0], start[1] + 0.5],
    ];
    let mut values = simplex.map(|x| f(&x));
    for _ in 0..20_000 {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (best, mid, worst) = (idx[0], idx[1], idx[2]);
        if (values[worst] - values[best]).abs() < 1e-30 {
            break;
        }
        let c = [
            0.5 * (simplex[best][0] + simplex[mid][0]),
            0.5 * (simplex[best][1] + simplex[mid][1]),
        ];
        let along = |t: f64| {
            [
                c[0] + t * (simplex[worst][0] - c[0]),
                c[1] + t * (simplex[worst][1] - c[1]),
            ]
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < values[best] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
        } else if fr < values[mid] {
            simplex[worst] = xr;
            values[worst] = fr;
        } else {
            let xc = along(0.5);
            let fc = f(&xc);
            if fc < values[worst] {
                simplex[worst] = xc;
                values[worst] = fc;
            } else {
                for &i in &[mid, worst] {
                    simplex[i] = [
                        0.5 * (simplex[i][0] + simplex[best][0]),
                        0.5 * (simplex[i][1] + simplex[best][1]),
                    ];
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..3)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    simplex[best]
}

/// Fit a two-parameter family to elicited `(probability, value)` pairs by
/// least squares on the chosen scale.
pub fn fit_from_quantiles(
    family: Family,
    quantiles: &[(f64, f64)],
    scale: FitScale,
) -> Result<Distribution> {
    if quantiles.len() < 2 {
        return Err(Error::invalid("quantiles", "at least two pairs required"));
    }
    let mut pts: Vec<QuantilePoint> = quantiles
        .iter()
        .map(|&(probability, value)| QuantilePoint { probability, value })
        .collect();
    pts.sort_by(|a, b| a.probability.total_cmp(&b.probability));
    for q in &pts {
        if !(q.probability > 0.0 && q.probability < 1.0) || !q.value.is_finite() {
            return Err(Error::invalid(
                "quantiles",
                "probabilities must lie in (0, 1)",
            ));
        }
    }
    if pts
        .windows(2)
        .any(|w| w[1].probability <= w[0].probability || w[1].value <= w[0].value)
    {
        return Err(Error::invalid(
            "quantiles",
            "must be strictly increasing in probability and value",
        ));
    }
    let support_ok = match family {
        Family::Gamma | Family::Lognormal => pts[0].value > 0.0,
        Family::ScaledBeta { lower, upper } => {
            let (lo, hi) = (lower, upper);
            hi > lo && pts[0].value > lo && pts[pts.len() - 1].value < hi
        }
    };
    if !support_ok {
        return Err(Error::invalid(
            "quantiles",
            "values outside the family's support",
        ));
    }

    let start = initial_guess(family, &pts);
    let x = match levenberg_marquardt(family, scale, &pts, start) {
        Some(x) => x,
        None => {
            let polished = nelder_mead(family, scale, &pts, start);
            levenberg_marquardt(family, scale, &pts, polished).ok_or(Error::NonConvergence {
                routine: "quantile fit",
                iterations: 500,
            })?
        }
    };
    let g = gradient(family, scale, &pts, &x);
    if g[0].hypot(g[1]) >= 1e-8 {
        return Err(Error::NonConvergence {
            routine: "quantile fit",
            iterations: 500,
        });
    }
    Ok(build(family, &x))
}

/// Prior used in the worked example: exponential control with rate 0.08,
/// 90% chance of separation, 70% chance of a delay given separation.
pub fn worked_example() -> PriorSpec {
    PriorSpec {
        p_separate: 0.9,
        p_dte: 0.7,
        post_hr: Distribution::Gamma {
            shape: 29.6,
            rate: 47.8,
        },
        delay_months: Distribution::Gamma {
            shape: 7.29,
            rate: 1.76,
        },
        control: ControlPrior::fixed(0.08, 1.0),
    }
}
