use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::{noise_to, NoiseSchedule};
use super::{image_to_latent, latent_to_image, Conditions, Denoiser};
use crate::cond::{concat_conditions, resize_controls};
use crate::error::{Error, Result};
use crate::image::{composite, BinaryMask, RasterImage};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance: f64,
    pub eta: f64,
    pub seed: u64,
    /// Overwrite the known region with the noised source at every step and
    /// with the source itself at the end.
    pub composite: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            guidance: 3.0,
            eta: 0.0,
            seed: 0,
            composite: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.steps == 0 || self.steps > schedule.steps() {
            return Err(Error::invalid(format!(
                "sampler steps {} outside 1..={}",
                self.steps,
                schedule.steps()
            )));
        }
        if !(self.guidance >= 0.0) || !self.guidance.is_finite() {
            return Err(Error::invalid(format!("guidance weight {} must be finite and >= 0", self.guidance)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!("eta {} outside [0, 1]", self.eta)));
        }
        Ok(())
    }
}

/// `w·eps_cond + (1−w)·eps_uncond`.
pub fn cfg_combine(eps_cond: &Tensor, eps_uncond: &Tensor, w: f64) -> Result<Tensor> {
    if eps_cond.shape() != eps_uncond.shape() {
        return Err(Error::invalid(format!(
            "guidance branches differ in shape: {:?} vs {:?}",
            eps_cond.shape(),
            eps_uncond.shape()
        )));
    }
    let data = eps_cond
        .data()
        .iter()
        .zip(eps_uncond.data())
        .map(|(c, u)| w * c + (1.0 - w) * u)
        .collect();
    Tensor::new(eps_cond.shape().to_vec(), data)
}

/// Evenly spaced 1-based timesteps, ascending; `steps = T` gives `1..=T`.
pub fn ddim_timesteps(total: usize, steps: usize) -> Vec<usize> {
    (0..steps).map(|i| 1 + i * total / steps).collect()
}

fn randn_like(shape: &[usize], r: &mut Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| r.sample(StandardNormal))
}

/// Guided noise estimate; the unconditional branch swaps the reference
/// context for the model's null embedding and is skipped when `w = 1`.
fn guided_noise(model: &dyn Denoiser, input: &Tensor, t: usize, cond: &Conditions, w: f64) -> Result<Tensor> {
    let eps_cond = model.predict_noise(input, t, cond)?;
    if w == 1.0 {
        return Ok(eps_cond);
    }
    let uncond = Conditions {
        c_ref: model.null_reference(),
        ..cond.clone()
    };
    let eps_uncond = model.predict_noise(input, t, &uncond)?;
    cfg_combine(&eps_cond, &eps_uncond, w)
}

/// Known-region data for latent-space compositing.
pub struct KnownRegion<'a> {
    pub latent: &'a Tensor,
    /// `true` where the latent is generated, `false` where it is known.
    pub mask: &'a BinaryMask,
}

fn overwrite_known(x: &mut Tensor, known: &KnownRegion, t: usize, s: &NoiseSchedule, r: &mut Rng) -> Result<()> {
    let noised = noise_to(known.latent, t, &randn_like(known.latent.shape(), r), s)?;
    let plane = known.mask.data().len();
    for (i, (v, n)) in x.data_mut().iter_mut().zip(noised.data()).enumerate() {
        if !known.mask.data()[i % plane] {
            *v = *n;
        }
    }
    Ok(())
}

/// Deterministic DDIM (η = 0 by default) in latent space. `mask` and
/// `sketch` are at latent resolution.
pub fn ddim_latent(
    model: &dyn Denoiser,
    mask: &BinaryMask,
    sketch: &BinaryMask,
    cond: &Conditions,
    known: Option<KnownRegion>,
    cfg: &SamplerConfig,
) -> Result<Tensor> {
    let s = model.schedule();
    cfg.validate(s)?;
    let shape = model.latent_shape();
    let mut r = rng::seeded(cfg.seed);
    let mut x = randn_like(&shape, &mut r);
    let taus = ddim_timesteps(s.steps(), cfg.steps);
    for i in (0..taus.len()).rev() {
        let t = taus[i];
        let t_prev = if i == 0 { 0 } else { taus[i - 1] };
        let input = concat_conditions(&x, mask, sketch)?;
        let eps = guided_noise(model, &input, t, cond, cfg.guidance)?;
        let (ab, ab_prev) = (s.alpha_bar(t), s.alpha_bar(t_prev));
        let sigma = cfg.eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let noise = (sigma > 0.0).then(|| randn_like(&shape, &mut r));
        let data = x.data_mut();
        for (j, (v, e)) in data.iter_mut().zip(eps.data()).enumerate() {
            let x0 = (*v - (1.0 - ab).sqrt() * e) / ab.sqrt();
            *v = ab_prev.sqrt() * x0 + dir * e + noise.as_ref().map_or(0.0, |n| sigma * n.data()[j]);
        }
        if let (Some(k), true) = (&known, cfg.composite) {
            overwrite_known(&mut x, k, t_prev, s, &mut r)?;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("sampler state at timestep {t}")));
        }
    }
    Ok(x)
}

/// Inpaints `source` inside `mask`. With compositing on, every pixel
/// outside the mask is taken from `source` unchanged.
pub fn ddim_sample(
    model: &dyn Denoiser,
    mask: &BinaryMask,
    sketch: &BinaryMask,
    cond: &Conditions,
    source: &RasterImage,
    cfg: &SamplerConfig,
) -> Result<RasterImage> {
    let (h, w) = (source.height(), source.width());
    if mask.shape() != (h, w) || sketch.shape() != (h, w) {
        return Err(Error::invalid(format!(
            "mask {:?} / sketch {:?} do not match source {h}x{w}",
            mask.shape(),
            sketch.shape()
        )));
    }
    let [_, lh, lw] = model.latent_shape();
    let (m, sk) = resize_controls(mask, sketch, lh, lw)?;
    let z_src = image_to_latent(&source.to_rgb(), lh)?;
    let known = KnownRegion {
        latent: &z_src,
        mask: &m,
    };
    let z = ddim_latent(model, &m, &sk, cond, Some(known), cfg)?;
    let generated = latent_to_image(&z, h, w)?;
    let generated = if source.channels() == 1 { generated.to_gray() } else { generated };
    if cfg.composite {
        composite(&generated, source, mask)
    } else {
        Ok(generated)
    }
}
