use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{Conv2d, Init, Sgcam, Ssan};
use crate::error::{Error, Result};
use crate::hsi::{BandGroups, HsiCube};
use crate::tensor::{concat_all, Backend, Eager, ParamGrads, ParamId, ParamStore, Tape, Tensor};

/// The full denoiser. One cross attention module and one branch cascade
/// (at the group width) are shared by every band group; their outputs are concatenated, fused by a
/// 1×1 map, refined by a second cascade, and turned into a residual that is
/// added back onto the input.
#[derive(Debug, Clone, PartialEq)]
pub struct SscanModel {
    config: ModelConfig,
    groups: BandGroups,
    params: ParamStore,
    pub sgcam: Sgcam,
    pub branch: Ssan,
    pub fuse: Conv2d,
    pub fusion: Ssan,
    pub reconstruct: Conv2d,
}

impl SscanModel {
    /// Builds and initializes a model. The reconstruction convolution starts
    /// at zero, so a fresh model returns its input unchanged.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let groups = config.band_groups()?;
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let c = config.trunk_channels;
        let sgcam = Sgcam::new(
            &mut init,
            "sgcam",
            config.group_size,
            c,
            config.group_channels,
            config.reduction,
            config.trunk_activation,
        )?;
        let branch = Ssan::new(
            &mut init,
            "branch",
            config.n_ssab,
            config.group_channels,
            config.reduction,
            config.spatial_kernel,
            config.ssab_trunk,
        )?;
        let fuse = init.conv("fuse", groups.n_groups() * config.group_channels, c, 1)?;
        let fusion = Ssan::new(
            &mut init,
            "fusion",
            config.fusion_ssab,
            c,
            config.reduction,
            config.spatial_kernel,
            config.ssab_trunk,
        )?;
        let reconstruct = init.zero_conv("reconstruct", c, config.bands, 3)?;
        Ok(Self {
            config,
            groups,
            params,
            sgcam,
            branch,
            fuse,
            fusion,
            reconstruct,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn band_groups(&self) -> &BandGroups {
        &self.groups
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.find(name)
    }

    /// Per-group features: cross attention with the next group (the last
    /// group is paired with itself) followed by the shared branch cascade.
    pub fn group_features<B: Backend>(&self, b: &mut B, x: &B::Value) -> Result<Vec<B::Value>> {
        let slices = self
            .groups
            .groups()
            .iter()
            .map(|g| b.slice_channels(x, g.start, g.len()))
            .collect::<Result<Vec<_>>>()?;
        let n = slices.len();
        (0..n)
            .map(|i| {
                let next = if i + 1 < n { i + 1 } else { i };
                let f = self.sgcam.forward(b, &slices[i], &slices[next])?;
                self.branch.forward(b, &f)
            })
            .collect()
    }

    /// `[N, bands, H, W]` noisy batch → denoised batch of the same shape.
    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::Value) -> Result<B::Value> {
        let shape = b.shape(x);
        if shape.len() != 4 || shape[1] != self.config.bands {
            return Err(Error::shape(
                "model_forward",
                "bands",
                format!("model expects {} bands, input shape is {shape:?}", self.config.bands),
            ));
        }
        let features = self.group_features(b, x)?;
        let joined = concat_all(b, &features)?;
        let fused = self.fuse.forward(b, &joined)?;
        let refined = self.fusion.forward(b, &fused)?;
        let residual = self.reconstruct.forward(b, &refined)?;
        b.add(x, &residual)
    }

    /// Inference without recording a graph.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut eager = Eager::new(&self.params);
        let input = Eager::value(x.clone());
        let out = self.forward(&mut eager, &input)?;
        drop(input);
        Ok(std::sync::Arc::try_unwrap(out).unwrap_or_else(|arc| (*arc).clone()))
    }

    pub fn denoise(&self, cube: &HsiCube) -> Result<HsiCube> {
        let out = self.infer(&cube.to_tensor())?;
        cube.with_data(out.into_data())
    }

    /// Training objective on one batch: returns the loss
    /// `(1/(2N)) Σ ‖clean − model(noisy)‖²` and the gradient for every
    /// parameter.
    pub fn loss_and_grads(
        &self,
        noisy: &Tensor,
        clean: &Tensor,
    ) -> Result<(f64, ParamGrads)> {
        let mut tape = Tape::with_params(&self.params);
        let x = tape.constant(noisy);
        let target = tape.constant(clean);
        let pred = self.forward(&mut tape, &x)?;
        let n_images = noisy.shape().first().copied().unwrap_or(1);
        let loss = tape.mse_loss(pred, target, n_images)?;
        let value = tape.value(loss)[0];
        Ok((value, tape.backward_params(loss)?))
    }

    pub(crate) fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config)?;
        for (_, p) in params.iter() {
            let id = model
                .params
                .find(&p.name)
                .ok_or_else(|| Error::invalid("checkpoint", format!("unknown parameter `{}`", p.name)))?;
            let slot = model.params.tensor_mut(id);
            if slot.shape() != p.tensor.shape() {
                return Err(Error::shape(
                    "checkpoint",
                    "parameter shape",
                    format!("`{}`: expected {:?}, got {:?}", p.name, slot.shape(), p.tensor.shape()),
                ));
            }
            slot.data_mut().copy_from_slice(p.tensor.data());
        }
        if params.len() != model.params.len() {
            return Err(Error::invalid(
                "checkpoint",
                format!("{} parameters stored, model has {}", params.len(), model.params.len()),
            ));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(cin: usize, cout: usize, k: usize) -> usize {
        cin * cout * k * k + cout
    }

    fn expected_count(c: &ModelConfig, groups: usize) -> usize {
        let ch = c.trunk_channels;
        let attention = |w: usize| conv(w, w / c.reduction, 1) + conv(w / c.reduction, w, 1) + conv(2 * w, w, 1);
        let block = |w: usize| {
            let trunk = if c.ssab_trunk { conv(w, w, 3) } else { 0 };
            trunk + attention(w) + conv(2, 1, c.spatial_kernel)
        };
        let cross = conv(2 * c.group_size, ch, 3)
            + conv(ch, ch, 3)
            + attention(ch)
            + conv(c.group_size, ch, 3)
            + conv(ch, c.group_channels, 3);
        cross
            + c.n_ssab * block(c.group_channels)
            + conv(groups * c.group_channels, ch, 1)
            + c.fusion_ssab * block(ch)
            + conv(ch, c.bands, 3)
    }

    fn noisy_input(bands: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[1, bands, h, w], |i| ((i * 7919) % 101) as f64 / 101.0)
    }

    fn perturb_reconstruction(model: &mut SscanModel) {
        let id = model.reconstruct.weight;
        for (i, v) in model.params_mut().tensor_mut(id).data_mut().iter_mut().enumerate() {
            *v = ((i % 13) as f64 - 6.0) * 1e-3;
        }
    }

    #[test]
    fn default_parameter_count() {
        let model = SscanModel::new(ModelConfig::default()).unwrap();
        assert_eq!(model.band_groups().n_groups(), 95);
        assert_eq!(model.parameter_count(), expected_count(model.config(), 95));
        assert_eq!(model.parameter_count(), 776_195);
    }

    #[test]
    fn parameter_count_without_block_trunk() {
        let cfg = ModelConfig {
            ssab_trunk: false,
            ..ModelConfig::tiny()
        };
        let model = SscanModel::new(cfg).unwrap();
        assert_eq!(model.parameter_count(), expected_count(&cfg, 2));
    }

    #[test]
    fn identity_at_init() {
        let model = SscanModel::new(ModelConfig::tiny()).unwrap();
        let x = noisy_input(6, 7, 5);
        assert_eq!(model.infer(&x).unwrap(), x);
    }

    #[test]
    fn eight_bands_make_three_groups() {
        let model = SscanModel::new(ModelConfig {
            bands: 8,
            ..ModelConfig::tiny()
        })
        .unwrap();
        assert_eq!(model.band_groups().groups(), &[0..4, 2..6, 4..8]);
        let x = noisy_input(8, 4, 4);
        assert_eq!(model.infer(&x).unwrap().shape(), &[1, 8, 4, 4]);
    }

    #[test]
    fn seeded_initialization() {
        let a = SscanModel::new(ModelConfig::tiny()).unwrap();
        let b = SscanModel::new(ModelConfig::tiny()).unwrap();
        let c = SscanModel::new(ModelConfig {
            seed: 8,
            ..ModelConfig::tiny()
        })
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn eager_and_tape_agree_bitwise() {
        let mut model = SscanModel::new(ModelConfig::tiny()).unwrap();
        perturb_reconstruction(&mut model);
        let x = noisy_input(6, 6, 6);
        let eager = model.infer(&x).unwrap();
        let mut tape = Tape::with_params(model.params());
        let xv = tape.constant(&x);
        let out = model.forward(&mut tape, &xv).unwrap();
        assert_eq!(tape.value(out), eager.data());
        assert_ne!(eager, x);
    }

    #[test]
    fn band_mismatch_is_reported() {
        let model = SscanModel::new(ModelConfig::tiny()).unwrap();
        let err = model.infer(&noisy_input(7, 4, 4)).unwrap_err();
        assert!(err.to_string().contains("model_forward"));
    }

    #[test]
    fn initial_loss_is_half_mean_image_energy() {
        let model = SscanModel::new(ModelConfig::tiny()).unwrap();
        let clean = Tensor::from_fn(&[2, 6, 4, 4], |i| (i % 5) as f64 * 0.1);
        let noisy = Tensor::from_fn(&[2, 6, 4, 4], |i| (i % 5) as f64 * 0.1 + if i % 2 == 0 { 0.1 } else { -0.1 });
        let (loss, grads) = model.loss_and_grads(&noisy, &clean).unwrap();
        let want = 192.0 * 0.01 / (2.0 * 2.0);
        assert!((loss - want).abs() < 1e-12);
        assert_eq!(grads.len(), model.params().len());
        let rec = grads.iter().find(|(id, _)| *id == model.reconstruct.weight).unwrap();
        assert!(rec.1.iter().any(|g| g.abs() > 0.0));
    }
}
