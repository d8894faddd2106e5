//! Simulation of one event-driven group-sequential trial.
//!
//! All latent survival and recruitment times are generated up front. Each
//! look is a data cut at the calendar time of the `ceil(F_j E)`-th pseudo
//! event: later recruits are excluded, everyone else is administratively
//! censored at the cut. The log-rank statistic is oriented so that positive
//! values favour the experimental arm (`Z > b` stops for efficacy,
//! `Z < a` for futility).

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::boundaries::BoundarySet;
use crate::dte_model::{sample_control, sample_experimental, Arm, ScenarioDraw};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDesign {
    pub n_control: usize,
    pub n_experimental: usize,
    pub total_events: usize,
    /// Uniform recruitment over this many months.
    pub recruitment_months: f64,
    pub boundaries: BoundarySet,
}

impl TrialDesign {
    pub fn new(
        n_control: usize,
        n_experimental: usize,
        total_events: usize,
        recruitment_months: f64,
        boundaries: BoundarySet,
    ) -> Result<Self> {
        let d = Self {
            n_control,
            n_experimental,
            total_events,
            recruitment_months,
            boundaries,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_control == 0 || self.n_experimental == 0 {
            return Err(Error::invalid(
                "n_control/n_experimental",
                "each arm needs a patient",
            ));
        }
        if self.total_events == 0 || self.total_events > self.n_control + self.n_experimental {
            return Err(Error::invalid(
                "total_events",
                "must lie between 1 and the total sample size",
            ));
        }
        if !(self.recruitment_months >= 0.0 && self.recruitment_months.is_finite()) {
            return Err(Error::invalid(
                "recruitment_months",
                "must be nonnegative and finite",
            ));
        }
        self.boundaries.validate()
    }

    pub fn n_total(&self) -> usize {
        self.n_control + self.n_experimental
    }

    pub fn fractions(&self) -> &[f64] {
        &self.boundaries.fractions
    }

    pub fn n_looks(&self) -> usize {
        self.boundaries.n_looks()
    }

    /// Events required at `fraction` of the information: `ceil(fraction * E)`.
    pub fn events_at_fraction(&self, fraction: f64) -> usize {
        events_for(fraction, self.total_events)
    }

    pub fn events_at_look(&self, look: usize) -> usize {
        self.events_at_fraction(self.boundaries.fractions[look])
    }
}

pub(crate) fn events_for(fraction: f64, total_events: usize) -> usize {
    // guard against 0.1 * 450 = 45.000000000000007
    let x = fraction * total_events as f64;
    ((x - 1e-9).ceil() as usize).clamp(1, total_events)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub arm: Arm,
    /// Calendar month of randomisation.
    pub recruit_time: f64,
    /// Months from randomisation to the event.
    pub latent_survival: f64,
    /// Calendar month of the event: `recruit_time + latent_survival`.
    pub pseudo_event_time: f64,
    /// Follow-up at the cut, months.
    pub observed_time: f64,
    pub event: bool,
}

/// One row of a censored two-arm dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub arm: Arm,
    pub time: f64,
    pub event: bool,
}

impl From<&PatientRecord> for Observation {
    fn from(r: &PatientRecord) -> Self {
        Self {
            arm: r.arm,
            time: r.observed_time,
            event: r.event,
        }
    }
}

/// Log-rank statistic with hypergeometric variance, positive when the
/// control arm has more events than expected.
pub fn logrank_z(records: &[Observation]) -> Result<f64> {
    let mut buf = records.to_vec();
    logrank_in_place(&mut buf)
}

/// As [`logrank_z`], reordering `records` as scratch space.
pub fn logrank_in_place(records: &mut [Observation]) -> Result<f64> {
    records.sort_unstable_by(|a, b| a.time.total_cmp(&b.time));
    let mut at_risk = records.len() as f64;
    let mut at_risk_control = records.iter().filter(|r| r.arm == Arm::Control).count() as f64;
    let mut score = 0.0;
    let mut variance = 0.0;
    let mut i = 0;
    while i < records.len() {
        let t = records[i].time;
        let mut j = i;
        let (mut d, mut d_control, mut leaving, mut leaving_control) = (0.0, 0.0, 0.0, 0.0);
        while j < records.len() && records[j].time == t {
            let control = records[j].arm == Arm::Control;
            if records[j].event {
                d += 1.0;
                if control {
                    d_control += 1.0;
                }
            }
            leaving += 1.0;
            if control {
                leaving_control += 1.0;
            }
            j += 1;
        }
        if d > 0.0 {
            let share = at_risk_control / at_risk;
            score += d_control - d * share;
            if at_risk > 1.0 {
                variance += d * share * (1.0 - share) * (at_risk - d) / (at_risk - 1.0);
            }
        }
        at_risk -= leaving;
        at_risk_control -= leaving_control;
        i = j;
    }
    if variance <= 0.0 {
        return Err(Error::UndefinedStatistic("zero variance"));
    }
    Ok(score / variance.sqrt())
}

/// Recruitment calendar times, control patients first then experimental;
/// times are i.i.d. uniform so arms interleave at random in calendar time.
pub fn recruit<R: Rng + ?Sized>(design: &TrialDesign, rng: &mut R) -> Vec<(Arm, f64)> {
    let r = design.recruitment_months;
    (0..design.n_total())
        .map(|i| {
            let arm = if i < design.n_control {
                Arm::Control
            } else {
                Arm::Experimental
            };
            let u: f64 = rng.random();
            (arm, u * r)
        })
        .collect()
}

/// Full latent dataset of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrial {
    pub arm: Vec<Arm>,
    pub recruit: Vec<f64>,
    pub latent: Vec<f64>,
    pub pseudo: Vec<f64>,
    /// Pseudo event times in ascending order.
    sorted_pseudo: Vec<f64>,
}

/// Result of analysing a data cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutAnalysis {
    pub events: usize,
    pub calendar_time: f64,
    pub n_recruited: usize,
    pub z: f64,
}

impl LatentTrial {
    pub fn from_parts(arm: Vec<Arm>, recruit: Vec<f64>, latent: Vec<f64>) -> Self {
        let pseudo: Vec<f64> = recruit.iter().zip(&latent).map(|(r, t)| r + t).collect();
        let mut sorted_pseudo = pseudo.clone();
        sorted_pseudo.sort_unstable_by(f64::total_cmp);
        Self {
            arm,
            recruit,
            latent,
            pseudo,
            sorted_pseudo,
        }
    }

    pub fn generate<R: Rng + ?Sized>(
        design: &TrialDesign,
        scenario: &ScenarioDraw<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let control = sample_control(design.n_control, &scenario.control, rng)?;
        let experimental = sample_experimental(design.n_experimental, scenario, rng)?;
        let schedule = recruit(design, rng);
        let (arm, recruit): (Vec<Arm>, Vec<f64>) = schedule.into_iter().unzip();
        let mut latent = control;
        latent.extend(experimental);
        Ok(Self::from_parts(arm, recruit, latent))
    }

    pub fn len(&self) -> usize {
        self.arm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arm.is_empty()
    }

    /// Calendar time at which the `events`-th pseudo event occurs.
    pub fn cut_time(&self, events: usize) -> Result<f64> {
        if events == 0 || events > self.sorted_pseudo.len() {
            return Err(Error::InsufficientEvents {
                required: events,
                available: self.sorted_pseudo.len(),
            });
        }
        Ok(self.sorted_pseudo[events - 1])
    }

    /// Patients recruited by `cut`, censored at the cut.
    pub fn snapshot(&self, cut: f64) -> Vec<PatientRecord> {
        (0..self.len())
            .filter(|&i| self.recruit[i] <= cut)
            .map(|i| {
                let event = self.pseudo[i] <= cut;
                PatientRecord {
                    arm: self.arm[i],
                    recruit_time: self.recruit[i],
                    latent_survival: self.latent[i],
                    pseudo_event_time: self.pseudo[i],
                    observed_time: if event {
                        self.latent[i]
                    } else {
                        cut - self.recruit[i]
                    },
                    event,
                }
            })
            .collect()
    }

    /// Log-rank analysis at the cut where `events` events have occurred.
    pub fn analyse(&self, events: usize, scratch: &mut Vec<Observation>) -> Result<CutAnalysis> {
        let cut = self.cut_time(events)?;
        scratch.clear();
        for i in 0..self.len() {
            if self.recruit[i] <= cut {
                let event = self.pseudo[i] <= cut;
                scratch.push(Observation {
                    arm: self.arm[i],
                    time: if event {
                        self.latent[i]
                    } else {
                        cut - self.recruit[i]
                    },
                    event,
                });
            }
        }
        let n_recruited = scratch.len();
        let z = logrank_in_place(scratch)?;
        Ok(CutAnalysis {
            events,
            calendar_time: cut,
            n_recruited,
            z,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Futility,
    Efficacy,
    FinalSuccess,
    FinalFailure,
}

impl Decision {
    pub fn is_success(self) -> bool {
        matches!(self, Decision::Efficacy | Decision::FinalSuccess)
    }

    pub fn is_early(self) -> bool {
        matches!(self, Decision::Efficacy | Decision::Futility)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialOutcome {
    /// 0-based index of the look at which the trial ended.
    pub stop_look: usize,
    pub decision: Decision,
    /// Calendar month of the deciding data cut.
    pub stop_calendar_time: f64,
    pub n_recruited_at_stop: usize,
    pub z_path: Vec<f64>,
}

/// Apply the boundaries look by look to an already generated trial.
pub fn run_sequential(design: &TrialDesign, trial: &LatentTrial) -> Result<SequentialOutcome> {
    let mut scratch = Vec::with_capacity(trial.len());
    run_sequential_by(design, |events| trial.analyse(events, &mut scratch))
}

/// Sequential decision logic over an arbitrary source of cut analyses,
/// which lets callers share analyses between designs.
pub fn run_sequential_by<A>(design: &TrialDesign, mut analyse: A) -> Result<SequentialOutcome>
where
    A: FnMut(usize) -> Result<CutAnalysis>,
{
    let bounds = &design.boundaries;
    let last = bounds.n_looks() - 1;
    let mut z_path = Vec::with_capacity(bounds.n_looks());
    for look in 0..=last {
        let cut = analyse(design.events_at_look(look))?;
        z_path.push(cut.z);
        let decision = if look == last {
            if cut.z > bounds.efficacy[look] {
                Some(Decision::FinalSuccess)
            } else {
                Some(Decision::FinalFailure)
            }
        } else if cut.z < bounds.futility[look] {
            Some(Decision::Futility)
        } else if cut.z > bounds.efficacy[look] {
            Some(Decision::Efficacy)
        } else {
            None
        };
        if let Some(decision) = decision {
            return Ok(SequentialOutcome {
                stop_look: look,
                decision,
                stop_calendar_time: cut.calendar_time,
                n_recruited_at_stop: cut.n_recruited,
                z_path,
            });
        }
    }
    unreachable!("final look always decides")
}

/// Simulate one trial under `scenario`: generate the latent data, then run
/// the sequential analysis. The latent data are returned for counterfactual
/// re-analysis.
pub fn simulate_trial<R: Rng + ?Sized>(
    design: &TrialDesign,
    scenario: &ScenarioDraw<f64>,
    rng: &mut R,
) -> Result<(SequentialOutcome, LatentTrial)> {
    design.validate()?;
    let trial = LatentTrial::generate(design, scenario, rng)?;
    let outcome = run_sequential(design, &trial)?;
    Ok((outcome, trial))
}
