//! Toy-scale conditional diffusion: the noise schedule, the denoiser, the
//! noise-prediction objective, guidance, DDIM inpainting and training.
//!
//! There is no autoencoder; the latent of an image is its RGB values
//! resized to the model resolution and mapped to [-1, 1].

mod model;
mod sample;
mod schedule;
pub mod train;

pub use model::{timestep_embedding, ContextVars, DenoiserNet, ModelConfig};
pub use sample::{cfg_combine, ddim_latent, ddim_sample, ddim_timesteps, KnownRegion, SamplerConfig};
pub use schedule::{add_noise, NoiseSchedule, ScheduleConfig};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cond::{Conditioner, ContextEmbedding};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, RasterImage, Resize, ResizeMode};
use crate::tensor::{checkpoint, nn, Graph, ParamStore, Tensor, Var};

/// Contexts for one noise prediction.
#[derive(Debug, Clone)]
pub struct Conditions {
    pub c_ref: ContextEmbedding,
    pub c_style: Option<ContextEmbedding>,
    pub c_t: Option<ContextEmbedding>,
}

/// Anything the sampler can query for a noise estimate.
pub trait Denoiser {
    fn schedule(&self) -> &NoiseSchedule;
    /// `[C, h, w]`
    fn latent_shape(&self) -> [usize; 3];
    /// Noise estimate `[C, h, w]` for a conditioned input `[C+2, h, w]`.
    fn predict_noise(&self, input: &Tensor, t: usize, cond: &Conditions) -> Result<Tensor>;
    /// Reference context of the unconditional guidance branch.
    fn null_reference(&self) -> ContextEmbedding;
}

/// RGB image → `[3, size, size]` latent in [-1, 1].
pub fn image_to_latent(img: &RasterImage, size: usize) -> Result<Tensor> {
    let img = img.to_rgb().resize(size, size, ResizeMode::Bilinear)?;
    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = 2.0 * px[c] as f64 - 1.0;
        }
    }
    Tensor::new([3, size, size], data)
}

/// Inverse of [`image_to_latent`], clamped to [0, 1] and resized to `h×w`.
pub fn latent_to_image(z: &Tensor, h: usize, w: usize) -> Result<RasterImage> {
    let s = z.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::invalid(format!("latent must be [3, h, w], got {s:?}")));
    }
    let plane = s[1] * s[2];
    let mut data = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            data.push(((z.data()[c * plane + i] + 1.0) / 2.0) as f32);
        }
    }
    RasterImage::from_clamped(s[1], s[2], 3, data)?.resize(h, w, ResizeMode::Bilinear)
}

/// Mean squared error between a noise prediction and the true noise.
pub fn noise_mse(g: &mut Graph, prediction: Var, eps: &Tensor) -> Result<Var> {
    let target = g.constant(eps.clone());
    nn::mse(g, prediction, target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
}

/// The trainable model: conditioning and denoiser parameters in one store.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub schedule_config: ScheduleConfig,
    pub schedule: NoiseSchedule,
    pub store: ParamStore,
    pub cond: Conditioner,
    pub net: DenoiserNet,
}

impl ToyModel {
    pub fn new(config: ModelConfig, schedule_config: ScheduleConfig) -> Result<Self> {
        config.validate()?;
        let schedule = NoiseSchedule::linear(schedule_config)?;
        let mut store = ParamStore::new();
        let cond = Conditioner::new(&mut store, config.cond.clone())?;
        let net = DenoiserNet::new(&mut store, &config)?;
        Ok(Self {
            config,
            schedule_config,
            schedule,
            store,
            cond,
            net,
        })
    }

    /// Loss `‖ε − ε_θ([add_noise(z0, t, ε); mask; sketch], t, ctx)‖²` with
    /// the controls already at latent resolution.
    #[allow(clippy::too_many_arguments)]
    pub fn diffusion_loss(
        &self,
        g: &mut Graph,
        z0: &Tensor,
        mask: &BinaryMask,
        sketch: &BinaryMask,
        ctx: ContextVars,
        t: usize,
        eps: &Tensor,
    ) -> Result<Var> {
        let z_t = add_noise(z0, t, eps, &self.schedule)?;
        let input = g.constant(crate::cond::concat_conditions(&z_t, mask, sketch)?);
        let pred = self.net.forward(g, &self.store, &self.cond, input, t, ctx)?;
        noise_mse(g, pred, eps)
    }

    pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
        let mut p = checkpoint.as_os_str().to_owned();
        p.push(".json");
        PathBuf::from(p)
    }

    /// Writes the parameters and a JSON config sidecar next to them.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::save(path, &self.store.named_tensors())?;
        let sidecar = ModelSidecar {
            model: self.config.clone(),
            schedule: self.schedule_config,
        };
        let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Format(e.to_string()))?;
        let side = Self::sidecar_path(path);
        std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: ModelSidecar =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
        let mut model = Self::new(sidecar.model, sidecar.schedule)?;
        model.store.load_named(&checkpoint::load(path)?)?;
        Ok(model)
    }
}

impl Denoiser for ToyModel {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn latent_shape(&self) -> [usize; 3] {
        let s = self.config.latent_size;
        [self.config.latent_channels, s, s]
    }

    fn predict_noise(&self, input: &Tensor, t: usize, cond: &Conditions) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let ctx = ContextVars {
            c_ref: cond.c_ref.constant(&mut g),
            c_style: cond.c_style.as_ref().map(|c| c.constant(&mut g)),
            c_t: cond.c_t.as_ref().map(|c| c.constant(&mut g)),
        };
        let out = self.net.forward(&mut g, &self.store, &self.cond, x, t, ctx)?;
        Ok(g.value(out).clone())
    }

    fn null_reference(&self) -> ContextEmbedding {
        self.cond.null_embedding(&self.store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_round_trip() {
        let img = RasterImage::from_fn(8, 8, 3, |y, x, c| ((y * 8 + x) * 3 + c) as f32 / 192.0).unwrap();
        let z = image_to_latent(&img, 8).unwrap();
        assert_eq!(z.shape(), &[3, 8, 8]);
        assert_eq!(z.data()[64], 2.0 * img.get(0, 0, 1) as f64 - 1.0);
        let back = latent_to_image(&z, 8, 8).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
