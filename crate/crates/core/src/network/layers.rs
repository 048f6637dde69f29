//! Building blocks: convolution, channel and spatial attention, the
//! spectral-spatial attention block and its cascade, and the grouped cross
//! attention module.

use rand::distr::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use super::config::TrunkActivation;
use crate::error::{Error, Result};
use crate::tensor::{Backend, ParamId, ParamStore, PoolMode, Tensor};

/// Registers parameters in a fixed order and draws their initial values
/// from one seeded stream.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    /// He-uniform over fan-in, zero bias.
    pub(crate) fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize) -> Result<Conv2d> {
        let fan_in = (cin * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound)
            .map_err(|e| Error::invalid("init", e.to_string()))?;
        let shape = [cout, cin, kernel, kernel];
        let weight = Tensor::from_fn(&shape, |_| dist.sample(&mut self.rng));
        self.register_conv(name, weight, kernel)
    }

    pub(crate) fn zero_conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize) -> Result<Conv2d> {
        self.register_conv(name, Tensor::zeros(&[cout, cin, kernel, kernel]), kernel)
    }

    fn register_conv(&mut self, name: &str, weight: Tensor, kernel: usize) -> Result<Conv2d> {
        let cout = weight.shape()[0];
        Ok(Conv2d {
            weight: self.store.register(format!("{name}.weight"), weight)?,
            bias: self.store.register(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
            pad: kernel / 2,
        })
    }
}

/// Same-padded, unit-stride convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: usize,
}

impl Conv2d {
    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::Value) -> Result<B::Value> {
        let (w, bias) = (b.param(self.weight), b.param(self.bias));
        b.conv2d(x, &w, &bias, self.pad, 1)
    }
}

/// Per-channel mask from global max and average pooling. Both pooled
/// descriptors go through one shared bottleneck (C → C/r → C with ReLU);
/// the two results are concatenated and fused back to C by a 1×1 map
/// before the sigmoid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelAttention {
    pub down: Conv2d,
    pub up: Conv2d,
    pub fuse: Conv2d,
}

impl ChannelAttention {
    pub(crate) fn new(init: &mut Init, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = channels / reduction;
        Ok(Self {
            down: init.conv(&format!("{name}.down"), channels, hidden, 1)?,
            up: init.conv(&format!("{name}.up"), hidden, channels, 1)?,
            fuse: init.conv(&format!("{name}.fuse"), 2 * channels, channels, 1)?,
        })
    }

    fn bottleneck<B: Backend>(&self, b: &mut B, d: &B::Value) -> Result<B::Value> {
        let h = self.down.forward(b, d)?;
        let h = b.relu(&h);
        self.up.forward(b, &h)
    }

    /// `[N, C, 1, 1]` mask in `(0, 1)`.
    pub fn mask<B: Backend>(&self, b: &mut B, x: &B::Value) -> Result<B::Value> {
        let max = b.pool_spatial(x, PoolMode::Max)?;
        let avg = b.pool_spatial(x, PoolMode::Avg)?;
        let dm = self.bottleneck(b, &max)?;
        let da = self.bottleneck(b, &avg)?;
        let cat = b.concat_channels(&dm, &da)?;
        let fused = self.fuse.forward(b, &cat)?;
        Ok(b.sigmoid(&fused))
    }
}

/// Per-pixel mask from channel-wise max and average pooling followed by a
/// `k × k` convolution and a sigmoid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub(crate) fn new(init: &mut Init, name: &str, kernel: usize) -> Result<Self> {
        Ok(Self {
            conv: init.conv(&format!("{name}.conv"), 2, 1, kernel)?,
        })
    }

    /// `[N, 1, H, W]` mask in `(0, 1)`.
    pub fn mask<B: Backend>(&self, b: &mut B, x: &B::Value) -> Result<B::Value> {
        let max = b.pool_channel(x, PoolMode::Max)?;
        let avg = b.pool_channel(x, PoolMode::Avg)?;
        let cat = b.concat_channels(&max, &avg)?;
        let logits = self.conv.forward(b, &cat)?;
        Ok(b.sigmoid(&logits))
    }
}

fn check_channels<B: Backend>(
    b: &B,
    x: &B::Value,
    expected: usize,
    op: &'static str,
) -> Result<()> {
    let shape = b.shape(x);
    if shape.len() != 4 || shape[1] != expected {
        return Err(Error::shape(
            op,
            "channels",
            format!("expected {expected} channels, got shape {shape:?}"),
        ));
    }
    Ok(())
}

/// Spectral-spatial attention block:
/// `out = spatial(spectral(trunk(F))) + F`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ssab {
    pub channels: usize,
    pub trunk: Option<Conv2d>,
    pub spectral: ChannelAttention,
    pub spatial: SpatialAttention,
}

impl Ssab {
    pub(crate) fn new(
        init: &mut Init,
        name: &str,
        channels: usize,
        reduction: usize,
        spatial_kernel: usize,
        with_trunk: bool,
    ) -> Result<Self> {
        let trunk = if with_trunk {
            Some(init.conv(&format!("{name}.trunk"), channels, channels, 3)?)
        } else {
            None
        };
        Ok(Self {
            channels,
            trunk,
            spectral: ChannelAttention::new(init, &format!("{name}.spectral"), channels, reduction)?,
            spatial: SpatialAttention::new(init, &format!("{name}.spatial"), spatial_kernel)?,
        })
    }

    pub fn forward<B: Backend>(&self, b: &mut B, f: &B::Value) -> Result<B::Value> {
        check_channels(b, f, self.channels, "ssab")?;
        let t = match &self.trunk {
            Some(conv) => {
                let t = conv.forward(b, f)?;
                b.relu(&t)
            }
            None => f.clone(),
        };
        let spectral_mask = self.spectral.mask(b, &t)?;
        let s = b.mul(&t, &spectral_mask)?;
        let spatial_mask = self.spatial.mask(b, &s)?;
        let u = b.mul(&s, &spatial_mask)?;
        b.add(&u, f)
    }
}

/// Cascade of attention blocks with one outer residual. An empty cascade is
/// the identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ssan {
    pub blocks: Vec<Ssab>,
}

impl Ssan {
    pub(crate) fn new(
        init: &mut Init,
        name: &str,
        depth: usize,
        channels: usize,
        reduction: usize,
        spatial_kernel: usize,
        with_trunk: bool,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| {
                Ssab::new(
                    init,
                    &format!("{name}.{i}"),
                    channels,
                    reduction,
                    spatial_kernel,
                    with_trunk,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn forward<B: Backend>(&self, b: &mut B, f: &B::Value) -> Result<B::Value> {
        if self.blocks.is_empty() {
            return Ok(f.clone());
        }
        let mut x = f.clone();
        for block in &self.blocks {
            x = block.forward(b, &x)?;
        }
        b.add(&x, f)
    }
}

/// Grouped cross attention: features of group `i` computed jointly with
/// group `i + 1`.
///
/// concat(G_i, G_next) → trunk convs → channel-attention mask → masked
/// trunk features + skip(G_i) → projection to the group width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sgcam {
    pub group_size: usize,
    pub trunk: [Conv2d; 2],
    pub activation: TrunkActivation,
    pub attention: ChannelAttention,
    pub skip: Conv2d,
    pub project: Conv2d,
}

impl Sgcam {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        init: &mut Init,
        name: &str,
        group_size: usize,
        channels: usize,
        group_channels: usize,
        reduction: usize,
        activation: TrunkActivation,
    ) -> Result<Self> {
        Ok(Self {
            group_size,
            trunk: [
                init.conv(&format!("{name}.trunk0"), 2 * group_size, channels, 3)?,
                init.conv(&format!("{name}.trunk1"), channels, channels, 3)?,
            ],
            activation,
            attention: ChannelAttention::new(init, &format!("{name}.attention"), channels, reduction)?,
            skip: init.conv(&format!("{name}.skip"), group_size, channels, 3)?,
            project: init.conv(&format!("{name}.project"), channels, group_channels, 3)?,
        })
    }

    /// Trunk features of the concatenated pair, before masking.
    pub fn trunk_features<B: Backend>(
        &self,
        b: &mut B,
        group: &B::Value,
        next: &B::Value,
    ) -> Result<B::Value> {
        check_channels(b, group, self.group_size, "sgcam")?;
        check_channels(b, next, self.group_size, "sgcam")?;
        let cat = b.concat_channels(group, next)?;
        let mut t = self.trunk[0].forward(b, &cat)?;
        if self.activation != TrunkActivation::None {
            t = b.relu(&t);
        }
        t = self.trunk[1].forward(b, &t)?;
        if self.activation == TrunkActivation::After {
            t = b.relu(&t);
        }
        Ok(t)
    }

    pub fn forward<B: Backend>(
        &self,
        b: &mut B,
        group: &B::Value,
        next: &B::Value,
    ) -> Result<B::Value> {
        let t = self.trunk_features(b, group, next)?;
        let mask = self.attention.mask(b, &t)?;
        let attended = b.mul(&t, &mask)?;
        let skip = self.skip.forward(b, group)?;
        let sum = b.add(&attended, &skip)?;
        self.project.forward(b, &sum)
    }
}
