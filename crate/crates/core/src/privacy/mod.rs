//! zCDP accounting and the Gaussian, correlated-Gaussian and exponential
//! mechanisms.

mod accountant;
mod conversion;
mod mechanisms;

pub use accountant::{PrivacyAccountant, Spend, BUDGET_SLACK};
pub use conversion::{solve_rho, zcdp_to_eps_delta};
pub use mechanisms::{
    add_residual_noise, exponential_cost, exponential_select, gaussian_cost, gaussian_measure,
    residual_cov_cost, residual_cov_measure, residual_cov_sigma2_for, residual_projection_diag_max,
    NoiseDescriptor,
};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Counter-based generator for measurement `stream` under a 64-bit seed.
/// Distinct streams are independent and can be sampled concurrently.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
