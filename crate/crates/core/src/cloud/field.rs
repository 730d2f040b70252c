use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::noise::{derive_seed, fbm, mix64};
use crate::error::{Error, Result};

/// Ångström-type extinction `k(λ) = k0·(λ/λ0)^(−q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionLaw {
    pub k0: f64,
    pub lambda0_nm: f64,
    pub q: f64,
}

impl Default for ExtinctionLaw {
    fn default() -> Self {
        Self {
            k0: 1.0,
            lambda0_nm: 550.0,
            q: 1.3,
        }
    }
}

impl ExtinctionLaw {
    pub fn validate(&self) -> Result<()> {
        if !(self.k0 > 0.0 && self.lambda0_nm > 0.0 && self.q >= 0.0) {
            return Err(Error::Argument(format!("invalid extinction law {self:?}")));
        }
        Ok(())
    }

    pub fn k(&self, wavelength_nm: f64) -> f64 {
        self.k0 * (wavelength_nm / self.lambda0_nm).powf(-self.q)
    }
}

/// Asymptotic path radiance, flat by default with an optional blue tilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Airlight {
    pub level: f64,
    pub blue_tilt: f64,
}

impl Default for Airlight {
    fn default() -> Self {
        Self {
            level: 0.85,
            blue_tilt: 0.0,
        }
    }
}

impl Airlight {
    pub fn at(&self, wavelength_nm: f64) -> f64 {
        (self.level * (1.0 + self.blue_tilt * (550.0 / wavelength_nm - 1.0))).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Morphology {
    Stratiform,
    Cumuliform,
    Wispy,
    Banded,
}

impl Morphology {
    pub const ALL: [Morphology; 4] = [
        Self::Stratiform,
        Self::Cumuliform,
        Self::Wispy,
        Self::Banded,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Stratiform => "stratiform",
            Self::Cumuliform => "cumuliform",
            Self::Wispy => "wispy",
            Self::Banded => "banded",
        }
    }

    fn preset(&self) -> Preset {
        match self {
            Self::Stratiform => Preset {
                scale_px: 160.0,
                octaves: 5,
                persistence: 0.5,
                anisotropy: 1.0,
                lo: 0.2,
                hi: 0.75,
                gamma: 1.0,
            },
            Self::Cumuliform => Preset {
                scale_px: 40.0,
                octaves: 4,
                persistence: 0.5,
                anisotropy: 1.0,
                lo: 0.4,
                hi: 0.7,
                gamma: 1.0,
            },
            Self::Wispy => Preset {
                scale_px: 80.0,
                octaves: 6,
                persistence: 0.65,
                anisotropy: 5.0,
                lo: 0.35,
                hi: 0.7,
                gamma: 1.5,
            },
            Self::Banded => Preset {
                scale_px: 96.0,
                octaves: 3,
                persistence: 0.5,
                anisotropy: 1.0,
                lo: 0.2,
                hi: 1.0,
                gamma: 1.2,
            },
        }
    }
}

impl fmt::Display for Morphology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Morphology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Argument(format!("unknown morphology `{s}`")))
    }
}

/// Octave weights, anisotropy and contrast window of one morphology.
struct Preset {
    scale_px: f64,
    octaves: u32,
    persistence: f64,
    anisotropy: f64,
    lo: f64,
    hi: f64,
    gamma: f64,
}

/// Optical path map plus the spectral law that turns it into transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudField {
    pub depth_map: Array2<f64>,
    pub extinction: ExtinctionLaw,
    pub airlight: Airlight,
    pub morphology: Morphology,
    pub thickness_scale: f64,
}

impl CloudField {
    pub fn dims(&self) -> (usize, usize) {
        self.depth_map.dim()
    }

    pub fn transmittance(&self, wavelength_nm: f64) -> Array2<f64> {
        let k = self.extinction.k(wavelength_nm);
        self.depth_map.mapv(|d| (-k * d).exp())
    }

    /// Block-mean reduction of the depth map by an integer factor.
    pub fn downsample(&self, r: usize) -> Result<Self> {
        let (h, w) = self.dims();
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::Argument(format!(
                "cannot reduce {h}x{w} cloud field by {r}"
            )));
        }
        let inv = 1.0 / (r * r) as f64;
        let depth = Array2::from_shape_fn((h / r, w / r), |(y, x)| {
            let mut s = 0.0;
            for dy in 0..r {
                for dx in 0..r {
                    s += self.depth_map[[y * r + dy, x * r + dx]];
                }
            }
            s * inv
        });
        Ok(Self {
            depth_map: depth,
            ..self.clone()
        })
    }
}

/// Builds a deterministic depth map in `[0, thickness_scale]`.
pub fn generate_cloud_field(
    seed: u64,
    morphology: Morphology,
    thickness_scale: f64,
    dims: (usize, usize),
) -> Result<CloudField> {
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return Err(Error::Argument("cloud field dims must be positive".into()));
    }
    if !(thickness_scale.is_finite() && thickness_scale >= 0.0) {
        return Err(Error::Argument(format!(
            "invalid thickness {thickness_scale}"
        )));
    }
    let p = morphology.preset();
    let noise_seed = derive_seed(seed, morphology.name());
    let angle = (mix64(noise_seed ^ 0xA5A5) >> 11) as f64 / (1u64 << 53) as f64 * PI;
    let (sin, cos) = angle.sin_cos();
    // Offset so neighbouring seeds do not share the lattice origin.
    let ox = (mix64(noise_seed) % 4096) as f64;
    let oy = (mix64(noise_seed ^ 1) % 4096) as f64;

    let depth = Array2::from_shape_fn((h, w), |(y, x)| {
        let (xf, yf) = (x as f64, y as f64);
        let u = (xf * cos + yf * sin) / p.scale_px;
        let v = (-xf * sin + yf * cos) / p.scale_px * p.anisotropy;
        let n = fbm(noise_seed, u + ox, v + oy, p.octaves, p.persistence);
        let n = match morphology {
            Morphology::Banded => 0.5 + 0.5 * (2.0 * PI * u + 6.0 * (n - 0.5)).sin(),
            _ => n,
        };
        let shaped = ((n - p.lo) / (p.hi - p.lo)).clamp(0.0, 1.0).powf(p.gamma);
        thickness_scale * shaped
    });
    Ok(CloudField {
        depth_map: depth,
        extinction: ExtinctionLaw::default(),
        airlight: Airlight::default(),
        morphology,
        thickness_scale,
    })
}
