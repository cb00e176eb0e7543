use std::fmt;
use std::path::Path;

use beamsense::codec::CodecError;
use beamsense::learner::LearnerError;
use beamsense::pipeline::PipelineError;
use beamsense::sim::SimError;
use serde::Serialize;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Error reported as `{"error": class, "message": ...}` on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    #[serde(rename = "error")]
    pub class: &'static str,
    pub message: String,
    #[serde(skip)]
    pub code: i32,
}

impl CliError {
    pub fn config(class: &'static str, message: impl Into<String>) -> Self {
        Self { class, message: message.into(), code: EXIT_CONFIG }
    }

    pub fn data(class: &'static str, message: impl Into<String>) -> Self {
        Self { class, message: message.into(), code: EXIT_DATA }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { class: "numeric_failure", message: message.into(), code: EXIT_NUMERIC }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.class))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.class, self.message)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Json(_) => Self::config("config_invalid", e.to_string()),
            SimError::Codec(inner) => inner.into(),
            SimError::Io(inner) => inner.into(),
            other => Self::data("simulation_failed", other.to_string()),
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Io(inner) => inner.into(),
            CodecError::NonFinite | CodecError::SvdNoConvergence | CodecError::NotOrthonormal(_) => Self::numeric(e.to_string()),
            other => Self::data("data_invalid", other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Selection(_) | PipelineError::BadWindow(_) | PipelineError::Split(_) => {
                Self::config("config_invalid", e.to_string())
            }
            PipelineError::Codec(inner) => inner.into(),
            PipelineError::Io(inner) => inner.into(),
            other => Self::data("data_invalid", other.to_string()),
        }
    }
}

impl From<LearnerError> for CliError {
    fn from(e: LearnerError) -> Self {
        match e {
            LearnerError::EmptyMicroDataset => Self::data("empty_micro_dataset", e.to_string()),
            LearnerError::NonFinite(_) => Self::numeric(e.to_string()),
            LearnerError::Config(_) | LearnerError::Spec(_) => Self::config("config_invalid", e.to_string()),
            LearnerError::Io(inner) => inner.into(),
            other => Self::data("data_invalid", other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data("io_error", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data("data_invalid", e.to_string())
    }
}

/// Reads an input file, mapping a missing file to `missing_class`.
pub fn read_input(path: &Path, missing_class: &'static str, code: i32) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError { class: missing_class, message: format!("{} not found", path.display()), code }
        } else {
            e.into()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let e = CliError::config("config_not_found", "x not found");
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v, serde_json::json!({"error": "config_not_found", "message": "x not found"}));
    }

    #[test]
    fn class_mapping() {
        let e: CliError = LearnerError::EmptyMicroDataset.into();
        assert_eq!((e.class, e.code), ("empty_micro_dataset", EXIT_DATA));
        let e: CliError = LearnerError::NonFinite("loss").into();
        assert_eq!(e.code, EXIT_NUMERIC);
        let e: CliError = CodecError::NonFinite.into();
        assert_eq!(e.code, EXIT_NUMERIC);
    }

    #[test]
    fn missing_input_uses_given_class() {
        let e = read_input(Path::new("/nonexistent/beamsense"), "config_not_found", EXIT_CONFIG).unwrap_err();
        assert_eq!((e.class, e.code), ("config_not_found", EXIT_CONFIG));
    }
}
