pub mod denoise;
pub mod error;
pub mod io;
pub mod metrics;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod stack;
pub mod registration;
pub mod render;
pub mod subspace;
pub mod sweep;
pub mod xanes;

pub use denoise::{denoise_coefficient, denoise_image, medfilt3, DenoiserSpec};
pub use error::{Error, Result};
pub use io::{load_stack, save_stack};
pub use stack::{estimate_noise_sigma, from_matrix, to_matrix, ImageStack, NoiseModel, NoiseSource, StackMatrix};
pub use pipeline::{sum_denoise, sum_denoise_streaming, Factorization, SumConfig, SumReport};
pub use xanes::{chemical_map, ChemicalMap, MapMode, NormWindows, SpectrumLibrary};
pub use phantom::{generate, PhantomSpec, PhantomTruth};
pub use metrics::{fpsnr, map_correlation, spsnr};
pub use registration::{correct_jitter, estimate_shift, RegistrationOptions};
