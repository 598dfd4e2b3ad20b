use nowcast_core::NowcastError;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
/// Computation failed on valid input (a model that cannot be fitted, say).
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;

/// Machine-readable error record, printed as one JSON line on stderr.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<String>,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: "validation".into(),
            message: message.into(),
            exit_code: EXIT_VALIDATION,
            features: Vec::new(),
        }
    }

    pub fn io(what: &str, e: std::io::Error) -> Self {
        Self {
            kind: "io".into(),
            message: format!("{what}: {e}"),
            exit_code: EXIT_FAILURE,
            features: Vec::new(),
        }
    }

    pub fn leakage(features: Vec<String>) -> Self {
        Self {
            kind: "leakage_refused".into(),
            message: format!("leakage detected in {features:?}"),
            exit_code: EXIT_REFUSED,
            features,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error record serializes")
    }
}

impl From<NowcastError> for CliError {
    fn from(e: NowcastError) -> Self {
        use NowcastError::*;
        match e {
            LeakageRefused(features) => CliError::leakage(features),
            MalformedPeriod(_) | MalformedDate(_) | UnknownSeries(_) | MissingTarget(_) | InvalidRecipe(_)
            | InvalidSpec(_) | InvalidBootstrap(_) | InvalidPlan(_) | InvalidTolerance(_) | InvalidDgp(_)
            | Unsupported(_) | UnsupportedFamily { .. } | Parse(_) | EmptyLog | MissingBenchmark
            | IncompleteRelease(_) | NonAdditive(_) | IdMismatch(_) => CliError::validation(e.to_string()),
            other => CliError {
                kind: "failure".into(),
                message: other.to_string(),
                exit_code: EXIT_FAILURE,
                features: Vec::new(),
            },
        }
    }
}
