use serde::{Deserialize, Serialize};

use crate::cond::{fused_cross_attention, CondConfig, Conditioner};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{nn, Graph, ParamId, ParamStore, Tensor, Var};

pub const PREFIX: &str = "unet/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Side of the square latent; divisible by 4.
    pub latent_size: usize,
    pub latent_channels: usize,
    /// Channel widths of the full- and half-resolution stages.
    pub widths: [usize; 2],
    pub groups: usize,
    pub time_dim: usize,
    pub time_hidden: usize,
    pub cond: CondConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_size: 24,
            latent_channels: 3,
            widths: [16, 32],
            groups: 4,
            time_dim: 32,
            time_hidden: 64,
            cond: CondConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.cond.validate()?;
        let [w0, w1] = self.widths;
        if self.latent_size == 0 || self.latent_size % 4 != 0 {
            return Err(Error::invalid(format!("latent size {} is not a positive multiple of 4", self.latent_size)));
        }
        if self.latent_channels == 0 || self.time_dim < 2 || self.time_dim % 2 != 0 || self.time_hidden == 0 {
            return Err(Error::invalid("model config: bad channel or time-embedding sizes"));
        }
        if self.groups == 0 || w0 % self.groups != 0 || w1 % self.groups != 0 {
            return Err(Error::invalid(format!("{} groups do not divide widths {:?}", self.groups, self.widths)));
        }
        Ok(())
    }
}

/// Sinusoidal embedding of a timestep, `[1, dim]`: sines then cosines.
pub fn timestep_embedding(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    Tensor::from_fn([1, dim], |i| {
        let k = i % half;
        let freq = (-(10_000f64).ln() * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        if i < half {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: Rng,
}

impl Init<'_> {
    fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.store.add(format!("{PREFIX}{name}"), value, true)
    }

    fn add_randn(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let t = Tensor::randn(shape.to_vec(), std, &mut self.rng);
        self.add(name, t)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Conv> {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        Ok(Conv {
            w: self.add_randn(&format!("{name}.w"), &[cout, cin, k, k], std)?,
            b: self.add(&format!("{name}.b"), Tensor::zeros([cout]))?,
            stride,
            pad: k / 2,
        })
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<Linear> {
        let std = (1.0 / din as f64).sqrt();
        Ok(Linear {
            w: self.add_randn(&format!("{name}.w"), &[din, dout], std)?,
            b: self.add(&format!("{name}.b"), Tensor::zeros([dout]))?,
        })
    }

    fn norm(&mut self, name: &str, c: usize) -> Result<Norm> {
        Ok(Norm {
            gamma: self.add(&format!("{name}.gamma"), Tensor::full([c], 1.0))?,
            beta: self.add(&format!("{name}.beta"), Tensor::zeros([c]))?,
        })
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize, temb: usize) -> Result<ResBlock> {
        Ok(ResBlock {
            norm1: self.norm(&format!("{name}.norm1"), cin)?,
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, 3, 1)?,
            time: self.linear(&format!("{name}.time"), temb, cout)?,
            norm2: self.norm(&format!("{name}.norm2"), cout)?,
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, 3, 1)?,
            skip: if cin == cout {
                None
            } else {
                Some(self.conv(&format!("{name}.skip"), cin, cout, 1, 1)?)
            },
        })
    }
}

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn apply(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (g.param(s, self.w), g.param(s, self.b));
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn apply(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (g.param(s, self.w), g.param(s, self.b));
        nn::linear(g, x, w, Some(b))
    }
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn apply(&self, g: &mut Graph, s: &ParamStore, x: Var, groups: usize) -> Result<Var> {
        let (gamma, beta) = (g.param(s, self.gamma), g.param(s, self.beta));
        nn::group_norm(g, x, groups, gamma, beta)
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    time: Linear,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    fn apply(&self, g: &mut Graph, s: &ParamStore, x: Var, temb: Var, groups: usize) -> Result<Var> {
        let h = self.norm1.apply(g, s, x, groups)?;
        let h = g.silu(h);
        let h = self.conv1.apply(g, s, h)?;
        let cout = g.shape(h)[0];
        let te = self.time.apply(g, s, temb)?;
        let te = g.reshape(te, [cout, 1, 1])?;
        let h = g.add(h, te)?;
        let h = self.norm2.apply(g, s, h, groups)?;
        let h = g.silu(h);
        let h = self.conv2.apply(g, s, h)?;
        let skip = match &self.skip {
            Some(c) => c.apply(g, s, x)?,
            None => x,
        };
        g.add(skip, h)
    }
}

/// Conditioning inputs of one denoiser evaluation, already in the graph.
#[derive(Debug, Clone, Copy)]
pub struct ContextVars {
    pub c_ref: Var,
    pub c_style: Option<Var>,
    pub c_t: Option<Var>,
}

/// Small conditional encoder-decoder predicting the noise of a latent.
///
/// Full resolution → stride-2 → stride-2 bottleneck with self-attention and
/// fused cross-attention to the context tokens, then nearest upsampling with
/// skip concatenation back to full resolution. The output convolution starts
/// at zero.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    config: ModelConfig,
    time1: Linear,
    time2: Linear,
    conv_in: Conv,
    res0: ResBlock,
    down0: Conv,
    res1: ResBlock,
    down1: Conv,
    mid: ResBlock,
    self_qkvo: [ParamId; 4],
    cross_q: ParamId,
    cross_out: ParamId,
    up1: ResBlock,
    up0: ResBlock,
    norm_out: Norm,
    conv_out: Conv,
}

impl DenoiserNet {
    pub fn new(store: &mut ParamStore, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            store,
            rng: rng::derived(config.seed, 0x0e7),
        };
        let [w0, w1] = config.widths;
        let (c, te, a) = (config.latent_channels, config.time_hidden, config.cond.attn_dim);
        let time1 = init.linear("time1", config.time_dim, te)?;
        let time2 = init.linear("time2", te, te)?;
        let conv_in = init.conv("conv_in", c + 2, w0, 3, 1)?;
        let res0 = init.res("res0", w0, w0, te)?;
        let down0 = init.conv("down0", w0, w0, 3, 2)?;
        let res1 = init.res("res1", w0, w1, te)?;
        let down1 = init.conv("down1", w1, w1, 3, 2)?;
        let mid = init.res("mid", w1, w1, te)?;
        let std = (1.0 / w1 as f64).sqrt();
        let mut self_qkvo = Vec::new();
        for n in ["q", "k", "v", "o"] {
            self_qkvo.push(init.add_randn(&format!("self_attn.{n}"), &[w1, w1], std)?);
        }
        let cross_q = init.add_randn("cross_attn.q", &[w1, a], std)?;
        let cross_out = init.add_randn("cross_attn.o", &[a, w1], (1.0 / a as f64).sqrt())?;
        let up1 = init.res("up1", 2 * w1, w1, te)?;
        let up0 = init.res("up0", w1 + w0, w0, te)?;
        let norm_out = init.norm("norm_out", w0)?;
        let conv_out = Conv {
            w: init.add("conv_out.w", Tensor::zeros([c, w0, 3, 3]))?,
            b: init.add("conv_out.b", Tensor::zeros([c]))?,
            stride: 1,
            pad: 1,
        };
        Ok(Self {
            config: config.clone(),
            time1,
            time2,
            conv_in,
            res0,
            down0,
            res1,
            down1,
            mid,
            self_qkvo: self_qkvo.try_into().expect("four projections"),
            cross_q,
            cross_out,
            up1,
            up0,
            norm_out,
            conv_out,
        })
    }

    /// Noise prediction `[C, h, w]` for a conditioned input `[C+2, h, w]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cond: &Conditioner,
        x: Var,
        t: usize,
        ctx: ContextVars,
    ) -> Result<Var> {
        let cfg = &self.config;
        let expect = [cfg.latent_channels + 2, cfg.latent_size, cfg.latent_size];
        if g.shape(x) != expect {
            return Err(Error::invalid(format!("denoiser input {:?}, expected {expect:?}", g.shape(x))));
        }
        let groups = cfg.groups;
        let temb = g.constant(timestep_embedding(t, cfg.time_dim));
        let temb = self.time1.apply(g, store, temb)?;
        let temb = g.silu(temb);
        let temb = self.time2.apply(g, store, temb)?;

        let h = self.conv_in.apply(g, store, x)?;
        let s0 = self.res0.apply(g, store, h, temb, groups)?;
        let h = self.down0.apply(g, store, s0)?;
        let s1 = self.res1.apply(g, store, h, temb, groups)?;
        let h = self.down1.apply(g, store, s1)?;
        let h = self.mid.apply(g, store, h, temb, groups)?;

        let (c, hh, ww) = (g.shape(h)[0], g.shape(h)[1], g.shape(h)[2]);
        let flat = g.reshape(h, [c, hh * ww])?;
        let tokens = g.transpose(flat)?;
        let [wq, wk, wv, wo] = self.self_qkvo.map(|id| g.param(store, id));
        let (q, k, v) = (g.matmul(tokens, wq)?, g.matmul(tokens, wk)?, g.matmul(tokens, wv)?);
        let a = nn::attention(g, q, k, v)?;
        let a = g.matmul(a, wo)?;
        let tokens = g.add(tokens, a)?;
        let wq = g.param(store, self.cross_q);
        let q = g.matmul(tokens, wq)?;
        let a = fused_cross_attention(g, store, &cond.fusion, q, ctx.c_ref, ctx.c_style, ctx.c_t)?;
        let wo = g.param(store, self.cross_out);
        let a = g.matmul(a, wo)?;
        let tokens = g.add(tokens, a)?;
        let flat = g.transpose(tokens)?;
        let h = g.reshape(flat, [c, hh, ww])?;

        let h = g.upsample2x(h)?;
        let h = g.concat(&[h, s1])?;
        let h = self.up1.apply(g, store, h, temb, groups)?;
        let h = g.upsample2x(h)?;
        let h = g.concat(&[h, s0])?;
        let h = self.up0.apply(g, store, h, temb, groups)?;
        let h = self.norm_out.apply(g, store, h, groups)?;
        let h = g.silu(h);
        self.conv_out.apply(g, store, h)
    }

    pub fn conv_out_weight(&self) -> ParamId {
        self.conv_out.w
    }
}
