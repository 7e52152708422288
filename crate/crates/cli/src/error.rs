use bbs_core::camera::CameraError;
use bbs_core::dataset::DatasetError;
use bbs_core::distill::DistillError;
use bbs_core::render::export::ExportError;
use bbs_core::render::RenderError;
use bbs_core::scene::{SceneError, ValidationReport};
use bbs_core::voxel::VoxelError;
use serde::{Deserialize, Serialize};

/// Error shared by the CLI and the service: a stable code plus a message.
/// Validation failures carry the full report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ValidationReport>,
}

impl ApiError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            code: code.into(),
            message: message.into(),
            report: None,
        }
    }

    pub fn invalid(report: ValidationReport) -> Self {
        ApiError {
            code: "INVALID_SCENE".into(),
            message: format!("scene failed validation: {}", report.summary()),
            report: Some(report),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new("BAD_REQUEST", message)
    }

    pub fn io(path: impl std::fmt::Display, e: std::io::Error) -> Self {
        ApiError::new("IO_ERROR", format!("{path}: {e}"))
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<SceneError> for ApiError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Invalid(report) => ApiError::invalid(report),
            e => ApiError::new(e.code(), e.to_string()),
        }
    }
}

impl From<VoxelError> for ApiError {
    fn from(e: VoxelError) -> Self {
        match e {
            VoxelError::Scene(s) => s.into(),
            e => ApiError::new(e.code(), e.to_string()),
        }
    }
}

macro_rules! coded {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                ApiError::new(e.code(), e.to_string())
            }
        }
    )*};
}

coded!(CameraError, DatasetError, DistillError, ExportError, RenderError);

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        ApiError::new("MALFORMED_JSON", e.to_string())
    }
}
