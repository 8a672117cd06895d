use thiserror::Error;

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    BadData { shape: Vec<usize>, len: usize },
    #[error("negative time gap {0}")]
    NegativeGap(f64),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("class index {class} out of range for {classes} classes")]
    BadClass { class: usize, classes: usize },
}
