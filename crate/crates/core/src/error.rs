use thiserror::Error;

/// Errors raised by pricing, differentiation and calibration routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum HestonError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation overflow at u = {u_re} + {u_im}i, t = {t}")]
    Overflow { u_re: f64, u_im: f64, t: f64 },

    #[error("non-finite integrand at node {node} (u = {u})")]
    Integration { node: usize, u: f64 },

    #[error("quote {index}: {source}")]
    Quote {
        index: usize,
        #[source]
        source: Box<HestonError>,
    },

    #[error("price {price} violates no-arbitrage bounds [{lower}, {upper}]")]
    NoSolution { price: f64, lower: f64, upper: f64 },

    #[error("singular linear system")]
    Singular,
}

impl HestonError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        HestonError::Domain(msg.into())
    }

    pub(crate) fn at_quote(self, index: usize) -> Self {
        HestonError::Quote {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, HestonError>;
