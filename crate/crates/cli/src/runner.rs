//! Command execution and the JSON result document.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use dtesim::boundaries::BoundarySet;
use dtesim::bpp_engine::design_stage_bpp_with;
use dtesim::oc_engine::{
    fraction_table, rank_designs, sweep_designs_with_progress, FractionRow, OCSummary,
    PriorOverride,
};
use dtesim::priors::PriorSpec;
use dtesim::trial_engine::TrialDesign;

use crate::config::{OutputConfig, OutputFormat, RunConfig};
use crate::error::{ConfigError, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Oc,
    Sweep,
    Bpp,
    Boundaries,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Oc => "oc",
            Command::Sweep => "sweep",
            Command::Bpp => "bpp",
            Command::Boundaries => "boundaries",
        }
    }
}

/// Work counter shared with observers. `done / total` never decreases.
#[derive(Debug, Default)]
pub struct Progress {
    total: AtomicUsize,
    done: AtomicUsize,
}

impl Progress {
    pub fn fraction(&self) -> f64 {
        let total = self.total.load(Ordering::Relaxed);
        if total == 0 {
            return 0.0;
        }
        (self.done.load(Ordering::Relaxed) as f64 / total as f64).min(1.0)
    }

    fn set_total(&self, total: usize) {
        self.total.store(total.max(1), Ordering::Relaxed);
    }

    fn counter(&self) -> &AtomicUsize {
        &self.done
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignResult {
    pub interim_fractions: Vec<f64>,
    pub boundaries: BoundarySet,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oc: Option<OCSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityResult {
    pub overrides: PriorOverride,
    pub priors: PriorSpec,
    pub designs: Vec<OCSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEntry {
    pub rank: usize,
    pub design_index: usize,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BppSummary {
    pub fraction: f64,
    pub boundaries: BoundarySet,
    pub n_trials: usize,
    pub m_draws: usize,
    pub informativeness: f64,
    pub lower_threshold: f64,
    pub upper_threshold: f64,
    pub mean_bpp: f64,
    pub mean_bpp_se: f64,
    pub histogram: Vec<HistogramBin>,
    pub bpp: Vec<f64>,
}

/// Everything needed to interpret a run without the original config file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultDocument {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Command,
    pub master_seed: u64,
    pub config: RunConfig,
    pub resolved_priors: PriorSpec,
    pub designs: Vec<DesignResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction_table: Option<Vec<FractionRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<RankEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bpp: Option<Vec<BppSummary>>,
}

impl ResultDocument {
    /// Serialized bytes with a trailing newline. Non-finite numbers become `null`.
    pub fn render(&self, format: OutputFormat) -> Vec<u8> {
        let mut out = match format {
            OutputFormat::Json => serde_json::to_vec(self),
            OutputFormat::JsonPretty => serde_json::to_vec_pretty(self),
        }
        .expect("result document serializes");
        out.push(b'\n');
        out
    }
}

pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let width = 1.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = ((v / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            lower: k as f64 * width,
            upper: (k + 1) as f64 * width,
            count,
        })
        .collect()
}

fn design_grid(cfg: &RunConfig, command: Command) -> Result<Vec<TrialDesign>, ConfigError> {
    match command {
        Command::Sweep => cfg.sweep_grid(),
        Command::Bpp => cfg
            .bpp_fractions()
            .iter()
            .map(|&f| cfg.design.build(&cfg.spending, &[f]))
            .collect(),
        Command::Oc | Command::Boundaries => Ok(vec![cfg
            .design
            .build(&cfg.spending, &cfg.design.interim_fractions)?]),
    }
}

/// Execute `command` on the calling thread's rayon pool.
pub fn run(
    cfg: &RunConfig,
    command: Command,
    progress: Option<&Progress>,
) -> Result<ResultDocument, RunError> {
    cfg.check()?;
    let priors = cfg.priors.resolve()?;
    let grid = design_grid(cfg, command)?;
    let counter = progress.map(Progress::counter);

    let mut designs: Vec<DesignResult> = grid
        .iter()
        .map(|d| DesignResult {
            interim_fractions: d.fractions()[..d.n_looks() - 1].to_vec(),
            boundaries: d.boundaries.clone(),
            oc: None,
        })
        .collect();
    let mut doc = ResultDocument {
        tool: "dtesim",
        version: env!("CARGO_PKG_VERSION"),
        command,
        master_seed: cfg.master_seed,
        config: RunConfig {
            output: OutputConfig::default(),
            ..cfg.clone()
        },
        resolved_priors: priors,
        designs: Vec::new(),
        fraction_table: None,
        sensitivity: None,
        ranking: None,
        bpp: None,
    };

    match command {
        Command::Boundaries => {}
        Command::Oc | Command::Sweep => {
            let passes = 1 + usize::from(cfg.sensitivity.is_some());
            if let Some(p) = progress {
                p.set_total(cfg.n_sims * passes);
            }
            let results =
                sweep_designs_with_progress(&grid, &priors, cfg.n_sims, cfg.master_seed, counter)?;
            if let Some(w) = &cfg.ranking {
                let order = rank_designs(&results, w)?;
                doc.ranking = Some(
                    order
                        .into_iter()
                        .enumerate()
                        .map(|(rank, k)| RankEntry {
                            rank: rank + 1,
                            design_index: k,
                            utility: w.utility(&results[k].1),
                        })
                        .collect(),
                );
            }
            if command == Command::Sweep {
                doc.fraction_table = Some(fraction_table(&results));
            }
            if let Some(o) = cfg.sensitivity {
                let alt = o.apply(&priors);
                alt.validate()
                    .map_err(|e| ConfigError::from_core("sensitivity", e))?;
                let rerun =
                    sweep_designs_with_progress(&grid, &alt, cfg.n_sims, cfg.master_seed, counter)?;
                doc.sensitivity = Some(SensitivityResult {
                    overrides: o,
                    priors: alt,
                    designs: rerun.into_iter().map(|(_, s)| s).collect(),
                });
            }
            for (d, (_, s)) in designs.iter_mut().zip(results) {
                d.oc = Some(s);
            }
        }
        Command::Bpp => {
            let b = &cfg.bpp;
            if let Some(p) = progress {
                p.set_total(b.n_trials * grid.len());
            }
            let mut out = Vec::with_capacity(grid.len());
            for design in &grid {
                let fraction = design.fractions()[0];
                let r = design_stage_bpp_with(
                    design,
                    &priors,
                    fraction,
                    b.n_trials,
                    b.m_draws,
                    cfg.master_seed,
                    &b.posterior,
                    counter,
                )?;
                out.push(BppSummary {
                    fraction,
                    boundaries: design.boundaries.clone(),
                    n_trials: b.n_trials,
                    m_draws: b.m_draws,
                    informativeness: dtesim::bpp_engine::informativeness(
                        &r.bpp,
                        b.lower_threshold,
                        b.upper_threshold,
                    ),
                    lower_threshold: b.lower_threshold,
                    upper_threshold: b.upper_threshold,
                    mean_bpp: r.mean_bpp,
                    mean_bpp_se: r.mean_bpp_se,
                    histogram: histogram(&r.bpp, b.histogram_bins),
                    bpp: r.bpp,
                });
            }
            doc.bpp = Some(out);
        }
    }
    doc.designs = designs;
    Ok(doc)
}

/// Run on a dedicated pool of `jobs` workers; `None` uses the global pool.
pub fn run_with_jobs(
    cfg: &RunConfig,
    command: Command,
    jobs: Option<usize>,
    progress: Option<&Progress>,
) -> anyhow::Result<ResultDocument> {
    match jobs {
        None => Ok(run(cfg, command, progress)?),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(|| run(cfg, command, progress))?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_value_once() {
        let v = [0.0, 0.04, 0.05, 0.5, 0.999, 1.0];
        let h = histogram(&v, 20);
        assert_eq!(h.len(), 20);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), v.len());
        assert_eq!(h[0].count, 2);
        assert_eq!(h[1].count, 1);
        assert_eq!(h[19].count, 2);
    }

    #[test]
    fn progress_is_clamped() {
        let p = Progress::default();
        assert_eq!(p.fraction(), 0.0);
        p.set_total(4);
        p.counter().fetch_add(6, Ordering::Relaxed);
        assert_eq!(p.fraction(), 1.0);
    }
}
