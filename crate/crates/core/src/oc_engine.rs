//! Operating characteristics by Monte Carlo over the prior.
//!
//! Replicate `i` draws its scenario from stream `(seed, Scenario, i)` and its
//! trial data from `(seed, TrialData, i)`. Every design in a sweep and every
//! prior override therefore sees the same random numbers for the same index.
//! Replicates run in parallel and are reduced in index order, so summaries
//! do not depend on the number of workers.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dte_model::ScenarioDraw;
use crate::error::{Error, Result};
use crate::priors::{sample_scenario, PriorSpec};
use crate::rng::{derive_seed, stream, Purpose};
use crate::trial_engine::{run_sequential_by, CutAnalysis, Decision, LatentTrial, TrialDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionCategory {
    FinalFailure,
    FutilityCorrect,
    FutilityIncorrect,
    EfficacyIncorrect,
    EfficacyCorrect,
    FinalSuccess,
}

impl DecisionCategory {
    pub const ALL: [DecisionCategory; 6] = [
        DecisionCategory::FinalFailure,
        DecisionCategory::FutilityCorrect,
        DecisionCategory::FutilityIncorrect,
        DecisionCategory::EfficacyIncorrect,
        DecisionCategory::EfficacyCorrect,
        DecisionCategory::FinalSuccess,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            DecisionCategory::FinalFailure => "final_failure",
            DecisionCategory::FutilityCorrect => "futility_correct",
            DecisionCategory::FutilityIncorrect => "futility_incorrect",
            DecisionCategory::EfficacyIncorrect => "efficacy_incorrect",
            DecisionCategory::EfficacyCorrect => "efficacy_correct",
            DecisionCategory::FinalSuccess => "final_success",
        }
    }

    /// Label a sequential decision using the counterfactual final verdict.
    /// An early stop is "correct" when it agrees with what the full trial
    /// would have concluded.
    pub fn classify(decision: Decision, final_success: bool) -> Self {
        match (decision, final_success) {
            (Decision::Futility, true) => DecisionCategory::FutilityIncorrect,
            (Decision::Futility, false) => DecisionCategory::FutilityCorrect,
            (Decision::Efficacy, true) => DecisionCategory::EfficacyCorrect,
            (Decision::Efficacy, false) => DecisionCategory::EfficacyIncorrect,
            (Decision::FinalSuccess, _) => DecisionCategory::FinalSuccess,
            (Decision::FinalFailure, _) => DecisionCategory::FinalFailure,
        }
    }

    pub fn is_success(self) -> bool {
        matches!(
            self,
            DecisionCategory::EfficacyCorrect
                | DecisionCategory::EfficacyIncorrect
                | DecisionCategory::FinalSuccess
        )
    }
}

/// Per-replicate record kept for aggregation and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub category: DecisionCategory,
    pub stop_look: usize,
    pub duration_months: f64,
    pub n_recruited: usize,
    /// Final-analysis statistic on the full latent data at `E` events.
    pub counterfactual_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStandardErrors {
    pub assurance: f64,
    pub expected_duration_months: f64,
    pub expected_sample_size: f64,
    pub category_proportions: BTreeMap<DecisionCategory, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OCSummary {
    pub n_sims: usize,
    pub assurance: f64,
    pub expected_duration_months: f64,
    pub expected_sample_size: f64,
    pub category_proportions: BTreeMap<DecisionCategory, f64>,
    /// Proportion of replicates stopping at each look.
    pub stop_proportions: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub informativeness: Option<f64>,
    pub mc_standard_errors: McStandardErrors,
}

impl OCSummary {
    pub fn proportion(&self, c: DecisionCategory) -> f64 {
        self.category_proportions.get(&c).copied().unwrap_or(0.0)
    }

    /// Aggregate replicates in the order given.
    pub fn from_replicates(outcomes: &[ReplicateOutcome], n_looks: usize) -> Self {
        let n = outcomes.len() as f64;
        let mut counts = [0usize; 6];
        let mut stops = vec![0usize; n_looks];
        let (mut dur, mut dur2, mut ss, mut ss2) = (0.0, 0.0, 0.0, 0.0);
        for o in outcomes {
            counts[o.category.index()] += 1;
            stops[o.stop_look] += 1;
            dur += o.duration_months;
            dur2 += o.duration_months * o.duration_months;
            let m = o.n_recruited as f64;
            ss += m;
            ss2 += m * m;
        }
        let mean_se = |s: f64, s2: f64| {
            let mean = s / n;
            let var = if n > 1.0 {
                ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            (mean, (var / n).sqrt())
        };
        let prop_se = |p: f64| (p * (1.0 - p) / n).sqrt();
        let mut props = BTreeMap::new();
        let mut prop_ses = BTreeMap::new();
        for c in DecisionCategory::ALL {
            let p = counts[c.index()] as f64 / n;
            props.insert(c, p);
            prop_ses.insert(c, prop_se(p));
        }
        let successes: usize = DecisionCategory::ALL
            .iter()
            .filter(|c| c.is_success())
            .map(|c| counts[c.index()])
            .sum();
        let assurance = successes as f64 / n;
        let (expected_duration_months, dur_se) = mean_se(dur, dur2);
        let (expected_sample_size, ss_se) = mean_se(ss, ss2);
        Self {
            n_sims: outcomes.len(),
            assurance,
            expected_duration_months,
            expected_sample_size,
            category_proportions: props,
            stop_proportions: stops.iter().map(|&s| s as f64 / n).collect(),
            informativeness: None,
            mc_standard_errors: McStandardErrors {
                assurance: prop_se(assurance),
                expected_duration_months: dur_se,
                expected_sample_size: ss_se,
                category_proportions: prop_ses,
            },
        }
    }
}

/// The scenario simulated for replicate `index`.
pub fn replicate_scenario(priors: &PriorSpec, master_seed: u64, index: usize) -> ScenarioDraw<f64> {
    sample_scenario(
        priors,
        &mut stream(master_seed, Purpose::Scenario, index as u64),
    )
}

type TrialKey = (usize, usize, u64);

fn trial_key(d: &TrialDesign) -> TrialKey {
    (
        d.n_control,
        d.n_experimental,
        d.recruitment_months.to_bits(),
    )
}

/// Evaluate every design on replicate `index`. Designs sharing sample sizes
/// and recruitment share one latent dataset and its cut analyses.
pub fn simulate_replicate(
    grid: &[TrialDesign],
    priors: &PriorSpec,
    master_seed: u64,
    index: usize,
) -> Result<Vec<ReplicateOutcome>> {
    let scenario = replicate_scenario(priors, master_seed, index);
    let mut trials: HashMap<TrialKey, LatentTrial> = HashMap::new();
    let mut cuts: HashMap<(TrialKey, usize), CutAnalysis> = HashMap::new();
    let mut scratch = Vec::new();
    let mut out = Vec::with_capacity(grid.len());
    for design in grid {
        let key = trial_key(design);
        if let std::collections::hash_map::Entry::Vacant(slot) = trials.entry(key) {
            let mut rng = stream(master_seed, Purpose::TrialData, index as u64);
            slot.insert(LatentTrial::generate(design, &scenario, &mut rng)?);
        }
        let trial = &trials[&key];
        let mut analyse = |events: usize| -> Result<CutAnalysis> {
            if let Some(c) = cuts.get(&(key, events)) {
                return Ok(*c);
            }
            let c = trial.analyse(events, &mut scratch)?;
            cuts.insert((key, events), c);
            Ok(c)
        };
        let outcome = run_sequential_by(design, &mut analyse)?;
        let final_cut = analyse(design.total_events)?;
        let final_success = final_cut.z > design.boundaries.final_critical();
        out.push(ReplicateOutcome {
            category: DecisionCategory::classify(outcome.decision, final_success),
            stop_look: outcome.stop_look,
            duration_months: outcome.stop_calendar_time,
            n_recruited: outcome.n_recruited_at_stop,
            counterfactual_z: final_cut.z,
        });
    }
    Ok(out)
}

/// All replicate outcomes, indexed `[replicate][design]`.
pub fn simulate_replicates(
    grid: &[TrialDesign],
    priors: &PriorSpec,
    n_sims: usize,
    master_seed: u64,
    progress: Option<&AtomicUsize>,
) -> Result<Vec<Vec<ReplicateOutcome>>> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "at least one design required"));
    }
    if n_sims == 0 {
        return Err(Error::invalid("n_sims", "must be at least 1"));
    }
    priors.validate()?;
    for d in grid {
        d.validate()?;
    }
    let results: Vec<Result<Vec<ReplicateOutcome>>> = (0..n_sims)
        .into_par_iter()
        .map(|i| {
            let r =
                simulate_replicate(grid, priors, master_seed, i).map_err(|e| Error::Replicate {
                    index: i,
                    seed: derive_seed(master_seed, Purpose::TrialData, i as u64),
                    source: Box::new(e),
                });
            if let Some(p) = progress {
                p.fetch_add(1, Ordering::Relaxed);
            }
            r
        })
        .collect();
    results.into_iter().collect()
}

/// One summary per design, with common random numbers across the grid.
pub fn sweep_designs(
    grid: &[TrialDesign],
    priors: &PriorSpec,
    n_sims: usize,
    master_seed: u64,
) -> Result<Vec<(TrialDesign, OCSummary)>> {
    sweep_designs_with_progress(grid, priors, n_sims, master_seed, None)
}

pub fn sweep_designs_with_progress(
    grid: &[TrialDesign],
    priors: &PriorSpec,
    n_sims: usize,
    master_seed: u64,
    progress: Option<&AtomicUsize>,
) -> Result<Vec<(TrialDesign, OCSummary)>> {
    let reps = simulate_replicates(grid, priors, n_sims, master_seed, progress)?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let column: Vec<ReplicateOutcome> = reps.iter().map(|r| r[k]).collect();
            (d.clone(), OCSummary::from_replicates(&column, d.n_looks()))
        })
        .collect())
}

pub fn run_oc(
    design: &TrialDesign,
    priors: &PriorSpec,
    n_sims: usize,
    master_seed: u64,
) -> Result<OCSummary> {
    let mut v = sweep_designs(std::slice::from_ref(design), priors, n_sims, master_seed)?;
    Ok(v.pop().unwrap().1)
}

/// Mixture-weight overrides for sensitivity runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_separate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_dte: Option<f64>,
}

impl PriorOverride {
    pub fn apply(&self, base: &PriorSpec) -> PriorSpec {
        let mut p = *base;
        if let Some(v) = self.p_separate {
            p.p_separate = v;
        }
        if let Some(v) = self.p_dte {
            p.p_dte = v;
        }
        p
    }
}

/// As [`run_oc`] under modified mixture weights, on the baseline's seeds.
pub fn run_sensitivity(
    design: &TrialDesign,
    priors: &PriorSpec,
    overrides: PriorOverride,
    n_sims: usize,
    master_seed: u64,
) -> Result<OCSummary> {
    run_oc(design, &overrides.apply(priors), n_sims, master_seed)
}

/// Linear utility weights; time, size and futility errors count against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub assurance: f64,
    pub expected_duration: f64,
    pub expected_sample_size: f64,
    pub futility_incorrect: f64,
}

impl UtilityWeights {
    pub fn utility(&self, s: &OCSummary) -> f64 {
        self.assurance * s.assurance
            - self.expected_duration * s.expected_duration_months
            - self.expected_sample_size * s.expected_sample_size
            - self.futility_incorrect * s.proportion(DecisionCategory::FutilityIncorrect)
    }
}

/// Indices of `results` by descending utility. Ties go to the earlier first
/// interim, then the smaller expected sample size, then input order.
pub fn rank_designs(
    results: &[(TrialDesign, OCSummary)],
    weights: &UtilityWeights,
) -> Result<Vec<usize>> {
    let w = [
        weights.assurance,
        weights.expected_duration,
        weights.expected_sample_size,
        weights.futility_incorrect,
    ];
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("utility", "weights must be finite"));
    }
    let u: Vec<f64> = results.iter().map(|(_, s)| weights.utility(s)).collect();
    let mut idx: Vec<usize> = (0..results.len()).collect();
    idx.sort_by(|&i, &j| {
        u[j].total_cmp(&u[i])
            .then(results[i].0.fractions()[0].total_cmp(&results[j].0.fractions()[0]))
            .then(
                results[i]
                    .1
                    .expected_sample_size
                    .total_cmp(&results[j].1.expected_sample_size),
            )
    });
    Ok(idx)
}

/// Plot-ready row: one design at its first-look fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionRow {
    pub fraction: f64,
    pub assurance: f64,
    pub expected_duration_months: f64,
    pub expected_sample_size: f64,
    pub category_proportions: BTreeMap<DecisionCategory, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub informativeness: Option<f64>,
}

/// Rows keyed by the first analysis fraction (1.0 for a design without
/// interims), in input order.
pub fn fraction_table(results: &[(TrialDesign, OCSummary)]) -> Vec<FractionRow> {
    results
        .iter()
        .map(|(d, s)| FractionRow {
            fraction: d.fractions()[0],
            assurance: s.assurance,
            expected_duration_months: s.expected_duration_months,
            expected_sample_size: s.expected_sample_size,
            category_proportions: s.category_proportions.clone(),
            informativeness: s.informativeness,
        })
        .collect()
}
