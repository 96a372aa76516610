use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Parameters outside the model's domain (r <= 0, mu1 >= mu2, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Evaluation point outside the window where the exponentials stay finite.
    #[error("x = {x} is outside the evaluation window |x| <= {limit}")]
    Range { x: f64, limit: f64 },

    #[error("no sign change of {what} in [{lo}, {hi}]")]
    NoBracket { what: &'static str, lo: f64, hi: f64 },

    #[error("not in the bubble regime: {0}")]
    NotInBubbleRegime(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// The majorant gap changed sign more than once along the rate bracket.
    #[error("majorant predicate is not monotone in r; sign changes in {brackets:?}")]
    NonMonotone { brackets: Vec<(f64, f64)> },

    #[error("singular linear system: {0}")]
    Singular(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Error::Domain(_) | Error::Range { .. })
    }
}
