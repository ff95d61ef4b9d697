use super::{register_frozen, register_weight, CondConfig, ContextEmbedding, ContextSource, PREFIX};
use crate::error::{Error, Result};
use crate::image::{RasterImage, Resize, ResizeMode};
use crate::rng::Rng;
use crate::tensor::{nn, Graph, ParamId, ParamStore, Tensor, Var};

/// Reference encoder: a frozen patch embedder (projection, class token,
/// position embeddings), a learnable query bank that pools the token
/// sequence by multi-head attention, and a two-layer mapper to `d_ctx`.
#[derive(Debug, Clone)]
pub struct SemanticEncoder {
    config: CondConfig,
    pub patch_proj: ParamId,
    pub class_embedding: ParamId,
    pub position_embedding: ParamId,
    pub queries: ParamId,
    pub mapper: [ParamId; 6],
}

impl SemanticEncoder {
    pub(super) fn new(store: &mut ParamStore, cfg: &CondConfig, r: &mut Rng) -> Result<Self> {
        let (d, p2c, n) = (cfg.embed_dim, cfg.patch * cfg.patch * 3, cfg.num_patches());
        let patch_proj = register_frozen(store, "enc/patch_proj", &[p2c, d], 1)?;
        let class_embedding = register_frozen(store, "enc/class", &[1, d], 2)?;
        let position_embedding = register_frozen(store, "enc/position", &[n + 1, d], 3)?;
        let queries = store.add(format!("{PREFIX}enc/queries"), Tensor::randn([cfg.n_q, d], 1.0, r), true)?;
        let mapper = [
            register_weight(store, "enc/map1_w", d, cfg.d_ctx, r)?,
            store.add(format!("{PREFIX}enc/map1_b"), Tensor::zeros([cfg.d_ctx]), true)?,
            register_weight(store, "enc/map2_w", cfg.d_ctx, cfg.d_ctx, r)?,
            store.add(format!("{PREFIX}enc/map2_b"), Tensor::zeros([cfg.d_ctx]), true)?,
            store.add(format!("{PREFIX}enc/ln_gain"), Tensor::full([cfg.d_ctx], 1.0), true)?,
            store.add(format!("{PREFIX}enc/ln_bias"), Tensor::zeros([cfg.d_ctx]), true)?,
        ];
        Ok(Self {
            config: cfg.clone(),
            patch_proj,
            class_embedding,
            position_embedding,
            queries,
            mapper,
        })
    }

    /// Flattened patches `[N, P²·3]` of the reference resized to the
    /// configured resolution, pixel values mapped to [-1, 1].
    pub fn patches(&self, x_ref: &RasterImage) -> Result<Tensor> {
        let (p, side) = (self.config.patch, self.config.ref_size);
        if x_ref.height() < p || x_ref.width() < p {
            return Err(Error::invalid(format!(
                "reference {}x{} is smaller than one {p}x{p} patch",
                x_ref.height(),
                x_ref.width()
            )));
        }
        let img = x_ref.to_rgb().resize(side, side, ResizeMode::Bilinear)?;
        let per_side = side / p;
        let mut data = Vec::with_capacity(side * side * 3);
        for py in 0..per_side {
            for px in 0..per_side {
                for y in 0..p {
                    for x in 0..p {
                        data.extend(img.pixel(py * p + y, px * p + x).iter().map(|&v| 2.0 * v as f64 - 1.0));
                    }
                }
            }
        }
        Tensor::new([per_side * per_side, p * p * 3], data)
    }

    /// Token sequence `[N+1, D]`: class token then projected patches, plus
    /// position embeddings.
    pub fn tokens(&self, g: &mut Graph, store: &ParamStore, x_ref: &RasterImage) -> Result<Var> {
        let patches = g.constant(self.patches(x_ref)?);
        let proj = g.param(store, self.patch_proj);
        let embedded = g.matmul(patches, proj)?;
        let cls = g.param(store, self.class_embedding);
        let seq = g.concat(&[cls, embedded])?;
        let pos = g.param(store, self.position_embedding);
        g.add(seq, pos)
    }

    /// Context tokens `[n_q, d_ctx]` in `g`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x_ref: &RasterImage) -> Result<Var> {
        let tokens = self.tokens(g, store, x_ref)?;
        let queries = g.param(store, self.queries);
        let pooled = nn::multi_head_attention(g, queries, tokens, tokens, self.config.heads)?;
        let [w1, b1, w2, b2, gain, bias] = self.mapper.map(|id| g.param(store, id));
        let h = nn::linear(g, pooled, w1, Some(b1))?;
        let h = g.silu(h);
        let h = nn::linear(g, h, w2, Some(b2))?;
        nn::layer_norm(g, h, gain, bias)
    }

    pub fn encode_reference(&self, store: &ParamStore, x_ref: &RasterImage) -> Result<ContextEmbedding> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, x_ref)?;
        ContextEmbedding::new(g.value(out).clone(), ContextSource::Reference)
    }
}

#[cfg(test)]
mod tests {
    use super::super::Conditioner;
    use super::*;

    fn setup() -> (ParamStore, Conditioner) {
        let mut store = ParamStore::new();
        let c = Conditioner::new(&mut store, CondConfig::default()).unwrap();
        (store, c)
    }

    fn noise_image(seed: u64) -> RasterImage {
        use rand::Rng as _;
        let mut r = crate::rng::seeded(seed);
        RasterImage::from_fn(32, 32, 3, |_, _, _| r.random::<f32>()).unwrap()
    }

    #[test]
    fn shapes_and_determinism() {
        let (store, c) = setup();
        let img = noise_image(0);
        let mut g = Graph::new();
        let t = c.encoder.tokens(&mut g, &store, &img).unwrap();
        assert_eq!(g.shape(t), &[65, 32]);
        let a = c.encode_reference(&store, &img).unwrap();
        let b = c.encode_reference(&store, &img.clone()).unwrap();
        assert_eq!(a.tokens.shape(), &[8, 64]);
        assert_eq!(a, b);
    }

    #[test]
    fn swapping_patches_changes_embedding() {
        let (store, c) = setup();
        let img = noise_image(1);
        let mut swapped = img.clone();
        for y in 0..4 {
            for x in 0..4 {
                for ch in 0..3 {
                    swapped.set(y, x, ch, img.get(y + 12, x + 20, ch));
                    swapped.set(y + 12, x + 20, ch, img.get(y, x, ch));
                }
            }
        }
        let a = c.encode_reference(&store, &img).unwrap();
        let b = c.encode_reference(&store, &swapped).unwrap();
        assert!(a.tokens.max_abs_diff(&b.tokens) > 1e-6);
    }

    #[test]
    fn too_small_reference_rejected() {
        let (store, c) = setup();
        let tiny = RasterImage::filled(3, 8, 3, 0.5).unwrap();
        assert!(matches!(c.encode_reference(&store, &tiny), Err(Error::InvalidArgument(_))));
    }
}
