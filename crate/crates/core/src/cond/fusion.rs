use super::{register_weight, CondConfig, PREFIX};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{nn, Graph, ParamId, ParamStore, Tensor, Var};

/// Cross-attention projections of context tokens. The reference
/// projections and `lambda` may train; the text projections are frozen.
#[derive(Debug, Clone)]
pub struct FusionWeights {
    pub wk_ref: ParamId,
    pub wv_ref: ParamId,
    pub wk_text: ParamId,
    pub wv_text: ParamId,
    pub lambda: ParamId,
    d_ctx: usize,
    attn_dim: usize,
}

impl FusionWeights {
    pub(super) fn new(store: &mut ParamStore, cfg: &CondConfig, r: &mut Rng) -> Result<Self> {
        let (d, a) = (cfg.d_ctx, cfg.attn_dim);
        let wk_ref = register_weight(store, "fusion/wk_ref", d, a, r)?;
        let wv_ref = register_weight(store, "fusion/wv_ref", d, a, r)?;
        let mut frozen = rng::derived(super::FROZEN_SEED, 5);
        let std = (2.0 / (d + a) as f64).sqrt();
        let wk_text = store.add(format!("{PREFIX}fusion/wk_text"), Tensor::randn([d, a], std, &mut frozen), false)?;
        let wv_text = store.add(format!("{PREFIX}fusion/wv_text"), Tensor::randn([d, a], std, &mut frozen), false)?;
        let lambda = store.add(format!("{PREFIX}fusion/lambda"), Tensor::scalar(1.0), cfg.train_text_branch)?;
        Ok(Self {
            wk_ref,
            wv_ref,
            wk_text,
            wv_text,
            lambda,
            d_ctx: d,
            attn_dim: a,
        })
    }

    fn check_context(&self, g: &Graph, c: Var, what: &str) -> Result<()> {
        let s = g.shape(c);
        if s.len() != 2 || s[1] != self.d_ctx {
            return Err(Error::invalid(format!("{what} tokens {s:?} do not have width {}", self.d_ctx)));
        }
        Ok(())
    }

    fn project(&self, g: &mut Graph, store: &ParamStore, c: Var, wk: ParamId, wv: ParamId) -> Result<(Var, Var)> {
        let (wk, wv) = (g.param(store, wk), g.param(store, wv));
        Ok((g.matmul(c, wk)?, g.matmul(c, wv)?))
    }
}

/// Reference keys and values re-normalised to the token statistics of the
/// style keys and values under the same projections.
pub fn style_align_kv(g: &mut Graph, store: &ParamStore, w: &FusionWeights, c_ref: Var, c_style: Var) -> Result<(Var, Var)> {
    w.check_context(g, c_ref, "reference")?;
    w.check_context(g, c_style, "style")?;
    let (k_ref, v_ref) = w.project(g, store, c_ref, w.wk_ref, w.wv_ref)?;
    let (k_style, v_style) = w.project(g, store, c_style, w.wk_ref, w.wv_ref)?;
    Ok((nn::adain(g, k_ref, k_style, nn::EPS)?, nn::adain(g, v_ref, v_style, nn::EPS)?))
}

/// `Attn(Q, K̂_ref, V̂_ref) + λ·Attn(Q, K_t, V_t)`. Without a style context
/// the reference keys and values are used as projected; without a text
/// context the second term is dropped.
pub fn fused_cross_attention(
    g: &mut Graph,
    store: &ParamStore,
    w: &FusionWeights,
    q: Var,
    c_ref: Var,
    c_style: Option<Var>,
    c_t: Option<Var>,
) -> Result<Var> {
    let qs = g.shape(q);
    if qs.len() != 2 || qs[1] != w.attn_dim {
        return Err(Error::invalid(format!("queries {qs:?} do not have width {}", w.attn_dim)));
    }
    w.check_context(g, c_ref, "reference")?;
    let (k, v) = match c_style {
        Some(s) => style_align_kv(g, store, w, c_ref, s)?,
        None => w.project(g, store, c_ref, w.wk_ref, w.wv_ref)?,
    };
    let out = nn::attention(g, q, k, v)?;
    let Some(c_t) = c_t else { return Ok(out) };
    w.check_context(g, c_t, "text")?;
    let (kt, vt) = w.project(g, store, c_t, w.wk_text, w.wv_text)?;
    let text = nn::attention(g, q, kt, vt)?;
    let lambda = g.param(store, w.lambda);
    let text = g.mul(text, lambda)?;
    g.add(out, text)
}

#[cfg(test)]
mod tests {
    use super::super::Conditioner;
    use super::*;

    fn setup() -> (ParamStore, Conditioner, Tensor, Tensor, Tensor, Tensor) {
        let mut store = ParamStore::new();
        let c = Conditioner::new(&mut store, CondConfig::default()).unwrap();
        let mut r = rng::seeded(9);
        let q = Tensor::randn([6, 32], 1.0, &mut r);
        let cr = Tensor::randn([8, 64], 1.0, &mut r);
        let cs = Tensor::randn([8, 64], 1.0, &mut r);
        let ct = Tensor::randn([8, 64], 1.0, &mut r);
        (store, c, q, cr, cs, ct)
    }

    fn run(store: &ParamStore, c: &Conditioner, q: &Tensor, cr: &Tensor, cs: Option<&Tensor>, ct: Option<&Tensor>) -> Tensor {
        let mut g = Graph::new();
        let (q, cr) = (g.constant(q.clone()), g.constant(cr.clone()));
        let cs = cs.map(|t| g.constant(t.clone()));
        let ct = ct.map(|t| g.constant(t.clone()));
        let out = fused_cross_attention(&mut g, store, &c.fusion, q, cr, cs, ct).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn lambda_zero_drops_text() {
        let (mut store, c, q, cr, _, ct) = setup();
        store.set_value(c.fusion.lambda, Tensor::scalar(0.0)).unwrap();
        assert_eq!(run(&store, &c, &q, &cr, None, Some(&ct)), run(&store, &c, &q, &cr, None, None));
    }

    #[test]
    fn zero_text_tokens_contribute_nothing() {
        let (mut store, c, q, cr, _, _) = setup();
        store.set_value(c.fusion.lambda, Tensor::scalar(2.5)).unwrap();
        let zeros = Tensor::zeros([8, 64]);
        assert_eq!(run(&store, &c, &q, &cr, None, Some(&zeros)), run(&store, &c, &q, &cr, None, None));
    }

    #[test]
    fn self_style_is_identity() {
        let (store, c, q, cr, _, _) = setup();
        let a = run(&store, &c, &q, &cr, Some(&cr), None);
        let b = run(&store, &c, &q, &cr, None, None);
        assert!(a.max_abs_diff(&b) < 1e-5);
    }

    #[test]
    fn aligned_keys_take_style_statistics() {
        let (store, c, _, cr, cs, _) = setup();
        let mut g = Graph::new();
        let (a, b) = (g.constant(cr), g.constant(cs));
        let (k, _) = style_align_kv(&mut g, &store, &c.fusion, a, b).unwrap();
        let wk = g.param(&store, c.fusion.wk_ref);
        let ks = g.matmul(b, wk).unwrap();
        let (k, ks) = (g.value(k).clone(), g.value(ks).clone());
        for col in 0..32 {
            let stats = |t: &Tensor| {
                let v: Vec<f64> = (0..8).map(|i| t.row(i)[col]).collect();
                let m = v.iter().sum::<f64>() / 8.0;
                (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 8.0).sqrt())
            };
            let ((m1, s1), (m2, s2)) = (stats(&k), stats(&ks));
            assert!((m1 - m2).abs() < 1e-5 && (s1 - s2).abs() < 1e-5);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (store, c, q, _, _, _) = setup();
        let mut g = Graph::new();
        let q = g.constant(q);
        let bad = g.constant(Tensor::zeros([8, 10]));
        assert!(fused_cross_attention(&mut g, &store, &c.fusion, q, bad, None, None).is_err());
    }
}
