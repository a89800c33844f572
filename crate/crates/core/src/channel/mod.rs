//! Fading free-space channel: turbulence sampler, ensembles and their
//! reduction to an effective Gaussian channel.

pub mod beam;
pub mod ensemble;
pub mod moments;

pub use beam::{
    centred_transmissivity, elliptic_beam_transmissivity, turbulence_statistics, BeamSample,
    TurbulenceParams, TurbulenceStatistics,
};
pub use ensemble::{describe, sample_ensemble, ChannelEnsemble, ExcessNoise};
pub use moments::{
    effective_params, moments, moments_masked, moments_where, ChannelMoments, EffectiveChannel,
};
