use serde::{Deserialize, Serialize};

use super::field::{generate_cloud_field, Morphology};
use super::scattering::apply_scattering;
use super::wald::wald_degrade;
use crate::error::{Error, Result};
use crate::raster::MultiBandRaster;

/// Parameters of the cloud laid over one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudSpec {
    pub seed: u64,
    pub morphology: Morphology,
    pub thickness: f64,
}

/// Network inputs, target and optional clean diagnostics for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub scale_ratio: usize,
    pub cloudy_lrmsi: MultiBandRaster,
    pub cloudy_pan: MultiBandRaster,
    pub clean_hrmsi: MultiBandRaster,
    pub clean_lrmsi: Option<MultiBandRaster>,
    pub clean_pan: Option<MultiBandRaster>,
}

impl SamplePair {
    /// Checks the spatial and spectral alignment of all members.
    pub fn validate(&self) -> Result<()> {
        let r = self.scale_ratio;
        if r == 0 {
            return Err(Error::Validation("scale ratio must be positive".into()));
        }
        let (lh, lw, lc) = self.cloudy_lrmsi.dims();
        let (ph, pw, pc) = self.cloudy_pan.dims();
        if pc != 1 {
            return Err(Error::Validation(format!("PAN has {pc} bands")));
        }
        if ph != r * lh || pw != r * lw {
            return Err(Error::Validation(format!(
                "PAN {ph}x{pw} is not {r}x the LR-MSI {lh}x{lw}"
            )));
        }
        if self.clean_hrmsi.dims() != (ph, pw, lc) {
            return Err(Error::Validation(format!(
                "target {:?} does not match ({ph}, {pw}, {lc})",
                self.clean_hrmsi.dims()
            )));
        }
        if let Some(lr) = &self.clean_lrmsi {
            if lr.dims() != self.cloudy_lrmsi.dims() {
                return Err(Error::Validation(
                    "clean LR-MSI shape differs from cloudy".into(),
                ));
            }
        }
        if let Some(pan) = &self.clean_pan {
            if pan.dims() != self.cloudy_pan.dims() {
                return Err(Error::Validation(
                    "clean PAN shape differs from cloudy".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Degrades an aligned clean HR-MSI/PAN pair into a cloudy training sample.
///
/// The same physical cloud is seen by both sensors: the PAN receives the
/// full-resolution depth map, the LR-MSI its `r×r` block mean.
pub fn make_sample(
    id: impl Into<String>,
    clean_hrmsi: &MultiBandRaster,
    clean_pan: &MultiBandRaster,
    cloud: &CloudSpec,
    r: usize,
) -> Result<SamplePair> {
    let (h, w, _) = clean_hrmsi.dims();
    if clean_pan.dims() != (h, w, 1) {
        return Err(Error::Validation(format!(
            "PAN {:?} not aligned with HR-MSI {h}x{w}",
            clean_pan.dims()
        )));
    }
    let (clean_lrmsi, _) = wald_degrade(clean_hrmsi, clean_pan, r)?;
    let field = generate_cloud_field(cloud.seed, cloud.morphology, cloud.thickness, (h, w))?;
    let cloudy_pan = apply_scattering(clean_pan, &field)?;
    let cloudy_lrmsi = apply_scattering(&clean_lrmsi, &field.downsample(r)?)?;
    let pair = SamplePair {
        id: id.into(),
        scale_ratio: r,
        cloudy_lrmsi,
        cloudy_pan,
        clean_hrmsi: clean_hrmsi.clone(),
        clean_lrmsi: Some(clean_lrmsi),
        clean_pan: Some(clean_pan.clone()),
    };
    pair.validate()?;
    Ok(pair)
}
