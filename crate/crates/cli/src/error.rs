use roi_core::composition::CompositionError;
use roi_core::fields::FieldError;
use roi_core::grouping::GroupingError;
use roi_core::harness::HarnessError;
use roi_core::rendering::RenderError;
use roi_core::sfm::SfmError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Validation(_) => 4,
            CliError::Numeric(_) => 5,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Validation(_) => "validation",
            CliError::Numeric(_) => "numeric",
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let body = ErrorBody { error: self.kind(), exit_code: self.exit_code(), message: self.to_string() };
        serde_json::to_string(&body).expect("error body serializes")
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<SfmError> for CliError {
    fn from(e: SfmError) -> Self {
        match e {
            SfmError::MissingFile(_) | SfmError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Io(_) => CliError::Io(e.to_string()),
            FieldError::DivergedLoss(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::Io(_) => CliError::Io(e.to_string()),
            RenderError::NumericalDomain(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GroupingError> for CliError {
    fn from(e: GroupingError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CompositionError> for CliError {
    fn from(e: CompositionError) -> Self {
        match e {
            CompositionError::Render(r) => r.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Sfm(e) => e.into(),
            HarnessError::Field(e) => e.into(),
            HarnessError::Render(e) => e.into(),
            HarnessError::Grouping(e) => e.into(),
            HarnessError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        let cases: Vec<(CliError, i32)> = vec![
            (SfmError::MissingFile("x".into()).into(), 3),
            (SfmError::MalformedJson("x".into()).into(), 4),
            (FieldError::DivergedLoss(f64::NAN).into(), 5),
            (FieldError::Io(std::io::Error::other("x")).into(), 3),
            (FieldError::ChecksumMismatch { stored: 1, computed: 2 }.into(), 4),
            (RenderError::NumericalDomain("x".into()).into(), 5),
            (CompositionError::Render(RenderError::NumericalDomain("x".into())).into(), 5),
            (CompositionError::MultiRoiWithoutDrf(2).into(), 4),
            (HarnessError::Render(RenderError::NumericalDomain("x".into())).into(), 5),
            (HarnessError::UnknownFixture("x".into()).into(), 4),
            (GroupingError::EmptyRoi("x".into()).into(), 4),
        ];
        for (err, code) in cases {
            assert_eq!(err.exit_code(), code, "{err}");
            let v: serde_json::Value = serde_json::from_str(&err.to_json()).unwrap();
            assert_eq!(v["exit_code"], code);
        }
    }
}
