use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("could not parse configuration: {0}")]
    Parse(String),

    #[error("`{field}`: {message}")]
    Field { field: String, message: String },
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Attach a config path to a core error, nesting parameter names under it.
    pub fn from_core(prefix: &str, e: dtesim::Error) -> Self {
        match e {
            dtesim::Error::InvalidParameter { field, reason } => {
                let path = if field.starts_with(prefix) {
                    field
                } else {
                    format!("{prefix}.{field}")
                };
                ConfigError::Field {
                    field: path,
                    message: reason,
                }
            }
            other => ConfigError::Field {
                field: prefix.to_string(),
                message: other.to_string(),
            },
        }
    }

    pub fn field_name(&self) -> Option<&str> {
        match self {
            ConfigError::Parse(_) => None,
            ConfigError::Field { field, .. } => Some(field),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Engine(#[from] dtesim::Error),
}
