use meanfield_core::Error;
use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(Error),
    /// Names of the checks whose verdict was fail.
    ChecksFailed(Vec<String>),
    Output(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 4,
            CliError::ChecksFailed(_) => 3,
            CliError::Output(_) => 1,
            CliError::Core(e) => match e {
                Error::InvalidInput(_)
                | Error::DimensionMismatch(_)
                | Error::DimensionUnsupported(_)
                | Error::UnsupportedWeighting(_)
                | Error::MissingConstant(_)
                | Error::MissingDerivative(_) => 4,
                Error::Io(_) => 1,
                _ => 2,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            4 => "config",
            3 => "check_failed",
            2 => "solver",
            _ => "io",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Output(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
            CliError::ChecksFailed(names) => format!("failed checks: {}", names.join(", ")),
        }
    }

    /// One line of JSON for stderr.
    pub fn to_json_line(&self) -> String {
        let mut v = json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.message(),
        });
        if let CliError::ChecksFailed(names) = self {
            v["checks"] = json!(names);
        }
        if let CliError::Core(Error::StageFailure {
            gamma_reached,
            gamma_failed,
            ..
        }) = self
        {
            v["gamma_reached"] = json!(gamma_reached);
            v["gamma_failed"] = json!(gamma_failed);
        }
        v.to_string()
    }
}
