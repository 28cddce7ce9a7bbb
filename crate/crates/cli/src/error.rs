use std::fmt;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad configuration, arguments or input data.
    Usage = 1,
    /// Non-convergence, separation, singular systems, positivity failures.
    Numerical = 2,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    /// Module that raised the error.
    pub module: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(module: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Usage,
            module,
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        CliError::usage("output", format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error [{}]: {}", self.module, self.message)
    }
}

impl From<transport_core::Error> for CliError {
    fn from(e: transport_core::Error) -> Self {
        use transport_core::Error::*;
        let module = match &e {
            Data(_) => "data",
            Nuisance(_) | Glm(_) => "glm",
            Bias(_) => "bias",
            Estimate(_) => "estimators",
            Inference(_) => "inference",
            Positivity(_) => "positivity",
            Sensitivity(_) => "sensitivity",
            Simulate(_) => "simulate",
        };
        let kind = if e.is_numerical() {
            ExitKind::Numerical
        } else {
            ExitKind::Usage
        };
        let message = match &e {
            Data(inner) => inner.to_string(),
            Nuisance(inner) => inner.to_string(),
            Glm(inner) => inner.to_string(),
            Bias(inner) => inner.to_string(),
            Estimate(inner) => inner.to_string(),
            Inference(inner) => inner.to_string(),
            Positivity(inner) => inner.to_string(),
            Sensitivity(inner) => inner.to_string(),
            Simulate(inner) => inner.to_string(),
        };
        CliError { kind, module, message }
    }
}

/// Converts any core module error.
pub fn core<E: Into<transport_core::Error>>(e: E) -> CliError {
    CliError::from(e.into())
}
