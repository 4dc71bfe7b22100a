//! User-level differential privacy: clipping, Gaussian noise and RDP accounting.

mod accountant;
mod mechanism;
mod params;

pub use accountant::{
    compose_rounds, default_orders, privacy_spend, rdp_subsampled_gaussian, rdp_to_eps,
    refined_orders, PrivacySpend, RdpCurve,
};
pub use mechanism::{clip_update, gaussianize, noise_stddev, DpSpec};
pub use params::ParamVector;
