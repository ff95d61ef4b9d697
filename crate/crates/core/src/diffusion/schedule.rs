use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear β schedule with cumulative products `ᾱ_t = Π_{s≤t} (1 − β_s)`.
/// Steps are 1-based: `t ∈ 1..=T`, and `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_cumprod: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl NoiseSchedule {
    pub fn linear(cfg: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig {
            steps,
            beta_start,
            beta_end,
        } = cfg;
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!("bad schedule {cfg:?}")));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| match steps {
                1 => beta_start,
                _ => beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64,
            })
            .collect();
        let alphas_cumprod = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas_cumprod })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t` for `t ∈ 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_cumprod[t - 1]
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(ScheduleConfig::default()).expect("default schedule is valid")
    }
}

/// `√ᾱ_t·z0 + √(1−ᾱ_t)·ε`.
pub fn add_noise(z0: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    s.check_step(t)?;
    noise_to(z0, t, eps, s)
}

/// Like [`add_noise`] but also accepts `t = 0`, which returns `z0`.
pub(crate) fn noise_to(z0: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    if z0.shape() != eps.shape() {
        return Err(Error::invalid(format!(
            "noise shape {:?} differs from latent {:?}",
            eps.shape(),
            z0.shape()
        )));
    }
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0.data().iter().zip(eps.data()).map(|(z, e)| a * z + b * e).collect();
    Tensor::new(z0.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn cumulative_product_matches_direct() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 1000);
        for t in 1..=1000 {
            let direct: f64 = (1..=t).map(|k| 1.0 - s.beta(k)).product();
            assert!((s.alpha_bar(t) - direct).abs() < 1e-12);
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert!((s.beta(1) - 1e-4).abs() < 1e-15 && (s.beta(1000) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn add_noise_edges() {
        let s = NoiseSchedule::default();
        let mut r = rng::seeded(0);
        let z = Tensor::randn([3, 4, 4], 1.0, &mut r);
        let zero = Tensor::zeros([3, 4, 4]);
        let out = add_noise(&z, 7, &zero, &s).unwrap();
        let a = s.alpha_bar(7).sqrt();
        for (o, z) in out.data().iter().zip(z.data()) {
            assert_eq!(*o, a * z);
        }
        let eps = Tensor::randn([3, 4, 4], 1.0, &mut r);
        let near = add_noise(&z, 1, &eps, &s).unwrap();
        for ((n, z), e) in near.data().iter().zip(z.data()).zip(eps.data()) {
            assert!((n - z).abs() <= 0.01 * z.abs() + 0.011 * e.abs());
        }
        assert!(add_noise(&z, 0, &eps, &s).is_err());
        assert!(add_noise(&z, 1001, &eps, &s).is_err());
        assert!(add_noise(&z, 5, &Tensor::zeros([3, 4]), &s).is_err());
        assert!(NoiseSchedule::linear(ScheduleConfig { steps: 0, ..Default::default() }).is_err());
    }
}
