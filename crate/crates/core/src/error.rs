use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} is outside its domain (got {value})")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("{routine} did not converge after {iterations} iterations")]
    NonConvergence {
        routine: &'static str,
        iterations: usize,
    },

    #[error("infeasible spending at look {look}: futility bound {futility} exceeds efficacy bound {efficacy}")]
    InfeasibleBoundary {
        look: usize,
        futility: f64,
        efficacy: f64,
    },

    #[error("integration grid too coarse: probability drift {drift:e} at look {look}")]
    GridResolution { look: usize, drift: f64 },

    #[error("only {available} pseudo events available, {required} required")]
    InsufficientEvents { required: usize, available: usize },

    #[error("log-rank statistic undefined: {0}")]
    UndefinedStatistic(&'static str),

    #[error(
        "effective sample size {ess:.1} below floor {floor:.1} (component occupancy {occupancy:?})"
    )]
    EffectiveSampleSize {
        ess: f64,
        floor: f64,
        occupancy: [usize; 3],
    },

    #[error("replicate {index} (seed {seed}) failed: {source}")]
    Replicate {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
