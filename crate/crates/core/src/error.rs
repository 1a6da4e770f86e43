use thiserror::Error;

/// Crate-wide error type. Variants map to the failure classes surfaced by the
/// public API: bad configuration, shape mismatches, numeric blow-ups with
/// their location, and infeasible requests.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-finite value in flow layer {layer}, variable {variable}")]
    NonFinite { layer: usize, variable: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error(
        "ordering search over {d} variables needs {d}! fits, above the limit for max_d = {max_d}; \
         exhaustive search grows factorially"
    )]
    Infeasible { d: usize, max_d: usize },

    #[error("invalid query: {0}")]
    Query(String),

    #[error("invalid model state: {0}")]
    State(String),

    #[error("fit failed for direction {direction}: {source}")]
    DirectionFit {
        direction: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
