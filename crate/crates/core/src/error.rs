use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error at t={t}: {detail}")]
    Numeric { t: usize, detail: String },

    #[error("rectification error: marginal probability of category {category} is {value}; rectification requires p(c) != 0")]
    Rectification { category: usize, value: f64 },

    #[error("segmentation error: {0}")]
    Segmentation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{method} diverged at iteration {iter} (t={t}): |theta| = {norm:e}")]
    Divergence {
        method: String,
        iter: usize,
        t: usize,
        norm: f64,
    },

    #[error("distillation failed at iteration {iter} (t={t}): {source}")]
    Step {
        iter: usize,
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
