//! vMF and diagonal-Gaussian latent machinery.

pub mod bessel;
mod gauss;
mod noise;
mod vmf;

pub use gauss::{
    gauss_sample, kl_gauss_standard, standard_normal, variance, GaussParams, VARIANCE_FLOOR,
};
pub use noise::NoiseSource;
pub use vmf::{
    householder_apply, kl_vmf_uniform, sample_frame, sample_polar, vmf_sample_rows, VmfParams,
};
