use crate::error::{Error, Result};
use crate::hsi::{make_band_groups, BandGroupingSpec, BandGroups};

/// Where ReLU sits among the two trunk convolutions of the cross attention
/// module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrunkActivation {
    /// conv → ReLU → conv
    #[default]
    Between,
    /// conv → ReLU → conv → ReLU
    After,
    /// conv → conv
    None,
}

impl TrunkActivation {
    pub fn code(self) -> u8 {
        match self {
            TrunkActivation::Between => 0,
            TrunkActivation::After => 1,
            TrunkActivation::None => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(TrunkActivation::Between),
            1 => Ok(TrunkActivation::After),
            2 => Ok(TrunkActivation::None),
            other => Err(Error::Unsupported {
                what: "trunk activation code",
                value: other.to_string(),
            }),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Bands per group.
    pub group_size: usize,
    /// Bands shared by neighbouring groups.
    pub overlap: usize,
    /// Attention blocks in the per-group branch cascade.
    pub n_ssab: usize,
    /// Attention blocks in the cascade after group fusion.
    pub fusion_ssab: usize,
    pub trunk_channels: usize,
    pub group_channels: usize,
    /// Bottleneck ratio of the channel attention MLP.
    pub reduction: usize,
    pub spatial_kernel: usize,
    pub bands: usize,
    pub seed: u64,
    pub trunk_activation: TrunkActivation,
    /// Whether each attention block starts with a 3×3 conv + ReLU.
    pub ssab_trunk: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            overlap: 2,
            n_ssab: 10,
            fusion_ssab: 10,
            trunk_channels: 64,
            group_channels: 16,
            reduction: 4,
            spatial_kernel: 7,
            bands: 191,
            seed: 0,
            trunk_activation: TrunkActivation::Between,
            ssab_trunk: true,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by gradient checks: 6 bands, two blocks,
    /// eight trunk channels.
    pub fn tiny() -> Self {
        Self {
            group_size: 4,
            overlap: 2,
            n_ssab: 2,
            fusion_ssab: 2,
            trunk_channels: 8,
            group_channels: 4,
            reduction: 4,
            spatial_kernel: 3,
            bands: 6,
            seed: 7,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.group_size),
            ("trunk_channels", self.trunk_channels),
            ("group_channels", self.group_channels),
            ("reduction", self.reduction),
            ("spatial_kernel", self.spatial_kernel),
            ("bands", self.bands),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if self.overlap >= self.group_size {
            return Err(Error::invalid("overlap", format!("{} must be below k = {}", self.overlap, self.group_size)));
        }
        for (name, width) in [("trunk_channels", self.trunk_channels), ("group_channels", self.group_channels)] {
            if width % self.reduction != 0 {
                return Err(Error::invalid(
                    "reduction",
                    format!("{} does not divide {name} {width}", self.reduction),
                ));
            }
        }
        if self.spatial_kernel.is_multiple_of(2) {
            return Err(Error::invalid("spatial_kernel", "must be odd"));
        }
        if self.bands < self.group_size {
            return Err(Error::invalid(
                "bands",
                format!("{} bands cannot fill a group of {}", self.bands, self.group_size),
            ));
        }
        Ok(())
    }

    pub fn band_groups(&self) -> Result<BandGroups> {
        make_band_groups(self.bands, BandGroupingSpec { group_size: self.group_size, overlap: self.overlap })
    }
}
