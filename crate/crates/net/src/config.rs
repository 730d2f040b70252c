//! Network hyper-parameters and the ablation switchboard.

use std::fmt;
use std::str::FromStr;

use pantcr_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchTopology {
    Parallel,
    Series,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMode {
    Swt,
    ChannelAttention,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdrMode {
    Fdr,
    SpatialAttention,
    Off,
}

/// How the consistency unit derives its modulation weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IfcMode {
    /// Amplitude statistics modulate phase and vice versa.
    Cross,
    /// Each component gates itself (plain channel attention).
    ChannelAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub use_dam: bool,
    pub use_pan_prompt: bool,
    pub use_nir_prompt: bool,
    pub use_highpass: bool,
    pub use_phase_branch: bool,
    pub use_amp_branch: bool,
    pub use_mafg: bool,
    pub use_ifc: bool,
    pub ifc_mode: IfcMode,
    pub branch_topology: BranchTopology,
    pub se_mode: SeMode,
    pub fdr_mode: FdrMode,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_dam: true,
            use_pan_prompt: true,
            use_nir_prompt: true,
            use_highpass: true,
            use_phase_branch: true,
            use_amp_branch: true,
            use_mafg: true,
            use_ifc: true,
            ifc_mode: IfcMode::Cross,
            branch_topology: BranchTopology::Parallel,
            se_mode: SeMode::Swt,
            fdr_mode: FdrMode::Fdr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub bands: usize,
    pub scale_ratio: usize,
    pub base_width: usize,
    pub stage_widths: [usize; 3],
    pub dam_depth: usize,
    pub pool_radius: usize,
    pub se_heads: usize,
    pub ablation: Ablation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            bands: 4,
            scale_ratio: 4,
            base_width: 16,
            stage_widths: [16, 32, 48],
            dam_depth: 3,
            pool_radius: 3,
            se_heads: 2,
            ablation: Ablation::default(),
        }
    }
}

impl NetworkConfig {
    /// Small widths for fast verification and smoke training.
    pub fn tiny() -> Self {
        Self {
            base_width: 4,
            stage_widths: [4, 6, 8],
            ..Self::default()
        }
    }

    pub fn with_ablation(mut self, row: AblationRow) -> Result<Self> {
        self.ablation = row.apply(self.ablation)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.bands == 0 || self.scale_ratio == 0 || self.base_width == 0 {
            return bad("bands, scale_ratio and base_width must be positive".into());
        }
        if self.dam_depth == 0 {
            return bad("dam_depth must be at least 1".into());
        }
        if self.pool_radius == 0 {
            return bad("pool_radius must be at least 1".into());
        }
        if self.se_heads == 0 {
            return bad("se_heads must be at least 1".into());
        }
        for (i, &w) in self.stage_widths.iter().enumerate() {
            if w < 2 {
                return bad(format!("stage width {i} must be at least 2"));
            }
            if self.ablation.se_mode == SeMode::Swt && w % self.se_heads != 0 {
                return bad(format!(
                    "stage width {w} is not divisible by se_heads {}",
                    self.se_heads
                ));
            }
        }
        Ok(())
    }
}

/// Named ablation variants, one per row of the component study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationRow {
    Full,
    WithoutDegAware,
    WithoutPan,
    WithoutNir,
    WithoutPanNir,
    WithoutHighpass,
    WithoutPhaseBranch,
    WithoutAmpBranch,
    FdrToSpatialAttention,
    WithoutFdr,
    WithoutMafg,
    WithoutIfc,
    IfcToChannelAttention,
    ParallelToSeries,
    WithoutSe,
    SeToChannelAttention,
    UnifiedToTwoStage,
}

impl AblationRow {
    pub const ALL: [AblationRow; 17] = [
        AblationRow::WithoutDegAware,
        AblationRow::WithoutPan,
        AblationRow::WithoutNir,
        AblationRow::WithoutPanNir,
        AblationRow::WithoutHighpass,
        AblationRow::WithoutPhaseBranch,
        AblationRow::WithoutAmpBranch,
        AblationRow::FdrToSpatialAttention,
        AblationRow::WithoutFdr,
        AblationRow::WithoutMafg,
        AblationRow::WithoutIfc,
        AblationRow::IfcToChannelAttention,
        AblationRow::ParallelToSeries,
        AblationRow::WithoutSe,
        AblationRow::SeToChannelAttention,
        AblationRow::UnifiedToTwoStage,
        AblationRow::Full,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationRow::Full => "full",
            AblationRow::WithoutDegAware => "w/o-Deg-Aware",
            AblationRow::WithoutPan => "w/o-Pan",
            AblationRow::WithoutNir => "w/o-NIR",
            AblationRow::WithoutPanNir => "w/o-Pan&NIR",
            AblationRow::WithoutHighpass => "w/o-H",
            AblationRow::WithoutPhaseBranch => "w/o-Pha-Branch",
            AblationRow::WithoutAmpBranch => "w/o-Amp-Branch",
            AblationRow::FdrToSpatialAttention => "FDR->Spa-Atten",
            AblationRow::WithoutFdr => "w/o-FDR",
            AblationRow::WithoutMafg => "w/o-MAFG",
            AblationRow::WithoutIfc => "w/o-IFC",
            AblationRow::IfcToChannelAttention => "IFC->Cha-Atten",
            AblationRow::ParallelToSeries => "Parallel->Series",
            AblationRow::WithoutSe => "w/o-SE",
            AblationRow::SeToChannelAttention => "SE->Cha-Atten",
            AblationRow::UnifiedToTwoStage => "Unified->Two-stage",
        }
    }

    /// Applies this row's switches on top of `base`.
    pub fn apply(&self, base: Ablation) -> Result<Ablation> {
        let mut a = base;
        match self {
            AblationRow::Full => {}
            AblationRow::WithoutDegAware => a.use_dam = false,
            AblationRow::WithoutPan => a.use_pan_prompt = false,
            AblationRow::WithoutNir => a.use_nir_prompt = false,
            AblationRow::WithoutPanNir => {
                a.use_pan_prompt = false;
                a.use_nir_prompt = false;
            }
            AblationRow::WithoutHighpass => a.use_highpass = false,
            AblationRow::WithoutPhaseBranch => a.use_phase_branch = false,
            AblationRow::WithoutAmpBranch => a.use_amp_branch = false,
            AblationRow::FdrToSpatialAttention => a.fdr_mode = FdrMode::SpatialAttention,
            AblationRow::WithoutFdr => a.fdr_mode = FdrMode::Off,
            AblationRow::WithoutMafg => a.use_mafg = false,
            AblationRow::WithoutIfc => a.use_ifc = false,
            AblationRow::IfcToChannelAttention => a.ifc_mode = IfcMode::ChannelAttention,
            AblationRow::ParallelToSeries => a.branch_topology = BranchTopology::Series,
            AblationRow::WithoutSe => a.se_mode = SeMode::Off,
            AblationRow::SeToChannelAttention => a.se_mode = SeMode::ChannelAttention,
            AblationRow::UnifiedToTwoStage => {
                return Err(Error::Argument(
                    "out of scope: requires external decloud model".into(),
                ))
            }
        }
        Ok(a)
    }
}

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationRow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim();
        AblationRow::ALL
            .iter()
            .copied()
            .find(|r| r.name().eq_ignore_ascii_case(key))
            .ok_or_else(|| {
                let known: Vec<&str> = AblationRow::ALL.iter().map(|r| r.name()).collect();
                Error::Argument(format!(
                    "unknown ablation row {key:?}; expected one of {}",
                    known.join(", ")
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_names_round_trip() {
        for row in AblationRow::ALL {
            assert_eq!(row.name().parse::<AblationRow>().unwrap(), row);
        }
        assert!("w/o-everything".parse::<AblationRow>().is_err());
    }

    #[test]
    fn two_stage_row_is_an_explicit_error() {
        let err = AblationRow::UnifiedToTwoStage
            .apply(Ablation::default())
            .unwrap_err();
        assert!(err
            .to_string()
            .contains("out of scope: requires external decloud model"));
    }

    #[test]
    fn every_in_scope_row_changes_the_switches() {
        let base = Ablation::default();
        for row in AblationRow::ALL {
            match row {
                AblationRow::Full => assert_eq!(row.apply(base.clone()).unwrap(), base),
                AblationRow::UnifiedToTwoStage => {}
                _ => assert_ne!(row.apply(base.clone()).unwrap(), base, "{row}"),
            }
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = serde_json::from_str::<NetworkConfig>(r#"{"base_widht": 8}"#);
        assert!(err.is_err());
        let cfg: NetworkConfig =
            serde_json::from_str(r#"{"ablation": {"use_ifc": false}}"#).unwrap();
        assert!(!cfg.ablation.use_ifc && cfg.ablation.use_dam);
    }

    #[test]
    fn heads_must_divide_widths() {
        let cfg = NetworkConfig {
            stage_widths: [5, 6, 8],
            ..NetworkConfig::tiny()
        };
        assert!(cfg.validate().is_err());
        assert!(NetworkConfig::tiny().validate().is_ok());
    }
}
