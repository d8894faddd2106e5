//! Piecewise-Weibull survival model with a delayed treatment effect.
//!
//! The control arm follows a Weibull law with cumulative hazard
//! `(lambda_c * t)^gamma_c`. The experimental arm shares that hazard up to
//! the delay `T`, after which its hazard is the control hazard scaled by a
//! constant `post_hr`. The experimental shape is tied to the control shape,
//! so the experimental rate is implied: `lambda_e^gamma = post_hr * lambda_c^gamma`.
//!
//! Times are in months. A time equal to the delay belongs to the pre-delay
//! branch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::open_unit;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Experimental,
}

/// Weibull parameters of the control arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams<F> {
    /// Rate, per month.
    pub lambda: F,
    /// Shape; 1 gives an exponential law.
    pub gamma: F,
}

impl<F: Scalar> ControlParams<F> {
    pub fn new(lambda: F, gamma: F) -> Result<Self> {
        let p = Self { lambda, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn exponential(lambda: F) -> Result<Self> {
        Self::new(lambda, F::one())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > F::zero() && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda_c", "must be positive and finite"));
        }
        if !(self.gamma > F::zero() && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma_c", "must be positive and finite"));
        }
        Ok(())
    }

    /// `lambda^gamma`, the multiplier of `t^gamma` in the cumulative hazard.
    #[inline]
    pub fn scale_pow(&self) -> F {
        self.lambda.powf(self.gamma)
    }
}

/// One sampled true state of nature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDraw<F> {
    pub control: ControlParams<F>,
    /// Delay before separation, months.
    pub delay: F,
    /// Hazard ratio after the delay.
    pub post_hr: F,
}

impl<F: Scalar> ScenarioDraw<F> {
    pub fn new(control: ControlParams<F>, delay: F, post_hr: F) -> Result<Self> {
        let s = Self {
            control,
            delay,
            post_hr,
        };
        s.validate()?;
        Ok(s)
    }

    /// No separation: `post_hr = 1`, `delay = 0`.
    pub fn null(control: ControlParams<F>) -> Self {
        Self {
            control,
            delay: F::zero(),
            post_hr: F::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.control.validate()?;
        if !(self.delay >= F::zero() && self.delay.is_finite()) {
            return Err(Error::invalid(
                "delay_months",
                "must be nonnegative and finite",
            ));
        }
        if !(self.post_hr > F::zero() && self.post_hr.is_finite()) {
            return Err(Error::invalid("post_hr", "must be positive and finite"));
        }
        Ok(())
    }

    pub fn separates(&self) -> bool {
        self.post_hr != F::one()
    }

    /// Implied experimental Weibull rate after the delay.
    pub fn lambda_experimental(&self) -> F {
        self.control.lambda * self.post_hr.powf(F::one() / self.control.gamma)
    }

    /// Cumulative hazard accumulated up to the delay.
    #[inline]
    fn knot_hazard(&self) -> F {
        (self.control.lambda * self.delay).powf(self.control.gamma)
    }
}

fn check_time<F: Scalar>(t: F, what: &'static str) -> Result<()> {
    if t >= F::zero() {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value: t.as_f64(),
        })
    }
}

pub fn cumulative_hazard_control<F: Scalar>(t: F, p: &ControlParams<F>) -> Result<F> {
    check_time(t, "time")?;
    Ok((p.lambda * t).powf(p.gamma))
}

pub fn cumulative_hazard_experimental<F: Scalar>(t: F, s: &ScenarioDraw<F>) -> Result<F> {
    check_time(t, "time")?;
    Ok(if t <= s.delay {
        (s.control.lambda * t).powf(s.control.gamma)
    } else {
        let g = s.control.gamma;
        s.knot_hazard() + s.post_hr * s.control.scale_pow() * (t.powf(g) - s.delay.powf(g))
    })
}

pub fn cumulative_hazard<F: Scalar>(arm: Arm, t: F, s: &ScenarioDraw<F>) -> Result<F> {
    match arm {
        Arm::Control => cumulative_hazard_control(t, &s.control),
        Arm::Experimental => cumulative_hazard_experimental(t, s),
    }
}

/// `exp{-(lambda_c t)^gamma_c}`.
pub fn survival_control<F: Scalar>(t: F, p: &ControlParams<F>) -> Result<F> {
    Ok((-cumulative_hazard_control(t, p)?).exp())
}

pub fn survival_experimental<F: Scalar>(t: F, s: &ScenarioDraw<F>) -> Result<F> {
    Ok((-cumulative_hazard_experimental(t, s)?).exp())
}

pub fn survival<F: Scalar>(arm: Arm, t: F, s: &ScenarioDraw<F>) -> Result<F> {
    Ok((-cumulative_hazard(arm, t, s)?).exp())
}

pub fn hazard_control<F: Scalar>(t: F, p: &ControlParams<F>) -> Result<F> {
    check_time(t, "time")?;
    Ok(p.gamma * p.scale_pow() * t.powf(p.gamma - F::one()))
}

pub fn hazard_experimental<F: Scalar>(t: F, s: &ScenarioDraw<F>) -> Result<F> {
    Ok(hazard_control(t, &s.control)? * hazard_ratio(t, s)?)
}

/// Piecewise-constant hazard ratio: 1 up to the delay, `post_hr` after.
pub fn hazard_ratio<F: Scalar>(t: F, s: &ScenarioDraw<F>) -> Result<F> {
    check_time(t, "time")?;
    Ok(if t <= s.delay { F::one() } else { s.post_hr })
}

/// Time at which the control cumulative hazard reaches `h`.
#[inline]
fn invert_control_hazard<F: Scalar>(h: F, p: &ControlParams<F>) -> F {
    h.powf(F::one() / p.gamma) / p.lambda
}

/// Time at which the arm's cumulative hazard reaches `h >= 0`.
pub fn invert_cumulative_hazard<F: Scalar>(arm: Arm, h: F, s: &ScenarioDraw<F>) -> F {
    let p = &s.control;
    match arm {
        Arm::Control => invert_control_hazard(h, p),
        Arm::Experimental => {
            let knot = s.knot_hazard();
            if h <= knot {
                invert_control_hazard(h, p)
            } else {
                let g = p.gamma;
                (s.delay.powf(g) + (h - knot) / (s.post_hr * p.scale_pow())).powf(F::one() / g)
            }
        }
    }
}

/// Quantile at survival probability `u`, i.e. the `t` with `S(t) = u`.
pub fn inverse_survival<F: Scalar>(arm: Arm, u: F, s: &ScenarioDraw<F>) -> Result<F> {
    if !(u > F::zero() && u < F::one()) {
        return Err(Error::Domain {
            what: "survival probability",
            value: u.as_f64(),
        });
    }
    Ok(invert_cumulative_hazard(arm, -u.ln(), s))
}

fn draw_hazard<F: Scalar, R: Rng + ?Sized>(rng: &mut R) -> F {
    F::lit(-open_unit(rng).ln())
}

pub fn sample_control<F: Scalar, R: Rng + ?Sized>(
    n: usize,
    p: &ControlParams<F>,
    rng: &mut R,
) -> Result<Vec<F>> {
    p.validate()?;
    Ok((0..n)
        .map(|_| invert_control_hazard(draw_hazard(rng), p))
        .collect())
}

pub fn sample_experimental<F: Scalar, R: Rng + ?Sized>(
    n: usize,
    s: &ScenarioDraw<F>,
    rng: &mut R,
) -> Result<Vec<F>> {
    s.validate()?;
    Ok((0..n)
        .map(|_| invert_cumulative_hazard(Arm::Experimental, draw_hazard(rng), s))
        .collect())
}

pub fn sample_arm<F: Scalar, R: Rng + ?Sized>(
    arm: Arm,
    n: usize,
    s: &ScenarioDraw<F>,
    rng: &mut R,
) -> Result<Vec<F>> {
    match arm {
        Arm::Control => sample_control(n, &s.control, rng),
        Arm::Experimental => sample_experimental(n, s, rng),
    }
}

/// Residual draw given survival past `elapsed`: the returned time `t`
/// satisfies `P(T > t | T > elapsed) = S(t) / S(elapsed)` and `t > elapsed`.
///
/// Works on the cumulative-hazard scale, `H(t) = H(elapsed) - ln u`, which is
/// the inverse transform on `u * S(elapsed)` without underflow.
pub fn sample_conditional<F: Scalar, R: Rng + ?Sized>(
    arm: Arm,
    elapsed: F,
    s: &ScenarioDraw<F>,
    rng: &mut R,
) -> Result<F> {
    check_time(elapsed, "elapsed time")?;
    let base = cumulative_hazard(arm, elapsed, s)?;
    loop {
        let t = invert_cumulative_hazard(arm, base + draw_hazard::<F, R>(rng), s);
        if t > elapsed {
            return Ok(t);
        }
    }
}
