//! Thin-cloud and resolution degradation for building training pairs.

mod dataset;
mod field;
pub mod noise;
mod sample;
mod scattering;
pub mod scene;
mod wald;

pub use dataset::{
    synth_dataset, Manifest, ManifestEntry, SourceRegion, SourceScene, SplitCounts, SynthConfig,
    MANIFEST_FILE, MANIFEST_VERSION, SPLITS,
};
pub use field::{generate_cloud_field, Airlight, CloudField, ExtinctionLaw, Morphology};
pub use sample::{make_sample, CloudSpec, SamplePair};
pub use scattering::{apply_scattering, scatter_value};
pub use wald::{gaussian_decimate_plane, wald_degrade, wald_sigma};

/// Centre wavelength used for the panchromatic band's cloud response.
pub const PAN_WAVELENGTH_NM: f64 = 675.0;
