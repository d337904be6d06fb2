//! Rational transfer functions, companion-form realization, fixed-step RK4
//! integration and frequency response.

mod companion;
pub mod polynomial;
mod rk4;
mod state_space;
mod transfer_function;

pub use companion::Companion;
pub use polynomial::C64;
pub use rk4::{rk4_step_fixed, Rk4Workspace};
pub use state_space::{realize, step_rk4, StateSpace};
pub use transfer_function::TransferFunction;

use crate::error::Result;

/// Complex gain `G(jw)` of a SISO system.
pub trait FrequencyResponse {
    fn freq_response(&self, omega: f64) -> Result<C64>;
}

/// Free-function form of [`FrequencyResponse::freq_response`].
pub fn freq_response<S: FrequencyResponse + ?Sized>(system: &S, omega: f64) -> Result<C64> {
    system.freq_response(omega)
}
