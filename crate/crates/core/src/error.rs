use thiserror::Error;

/// Failures raised by the identification, safety and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("signal error: {0}")]
    Signal(String),

    #[error("dimension error: expected {expected}, got {got} ({context})")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("constraint infeasible in u at this state (a = 0, b = {b})")]
    InfeasibleInInput { b: f64 },

    #[error("simulation fault at t = {t}: {reason}; state = {state:?}")]
    SimulationFault {
        t: f64,
        reason: String,
        state: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(ctx: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Signal(format!("non-finite value in {ctx}")))
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
