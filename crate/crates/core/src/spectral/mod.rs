//! Pixel space ⇄ hybrid spectral state.
//!
//! An image is split by a Haar pyramid into a low band and detail planes; the
//! low band is then taken to the Fourier domain. [`decompose`] and
//! [`reconstruct`] are exact inverses of each other.

mod fourier;
mod image;
mod radial;
mod state;
mod wavelet;

pub use fourier::{
    dft2_reference, fft2, hermitian_symmetrize, ifft2, ComplexPlane, InverseFft, REFERENCE_DFT_MAX,
};
pub use image::{ImageTensor, Plane};
pub use radial::{max_radius, radial_distance_grid, signed_index};
pub use state::{decompose, reconstruct, SpectralState, StateMeta, SYMMETRY_TOLERANCE};
pub use wavelet::{check_dyadic, dwt2_haar, idwt2_haar, WaveletPyramid};
