use thiserror::Error;

use crate::{concentration, dynamics, geometry, gravity, lipschitz, observables};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error, one variant per module.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(#[from] geometry::GeometryError),
    #[error("dynamics: {0}")]
    Dynamics(#[from] dynamics::FlowError),
    #[error("lipschitz: {0}")]
    Lipschitz(#[from] lipschitz::LipschitzError),
    #[error("concentration: {0}")]
    Concentration(#[from] concentration::ConcentrationError),
    #[error("observables: {0}")]
    Observables(#[from] observables::ObservableError),
    #[error("gravity: {0}")]
    Gravity(#[from] gravity::GravityError),
}

impl Error {
    /// True for failures of the numerics themselves (blow-up, unavailable fit) as
    /// opposed to malformed inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Dynamics(e) => matches!(e, dynamics::FlowError::BlowUp { .. }),
            Error::Concentration(e) => matches!(
                e,
                concentration::ConcentrationError::FitUnavailable { .. }
                    | concentration::ConcentrationError::DegenerateFit
            ),
            Error::Lipschitz(e) => matches!(e, lipschitz::LipschitzError::AllPairsDegenerate),
            Error::Geometry(e) => matches!(e, geometry::GeometryError::NonFinite { .. }),
            Error::Observables(e) => matches!(e, observables::ObservableError::Flow(_)),
            Error::Gravity(_) => false,
        }
    }
}
