//! Composite differentiable functions built from graph primitives.

use super::graph::{Graph, UnaryKind, Var};
use crate::error::{Error, Result};

/// Guard on every inverted standard deviation or variance.
pub const EPS: f64 = 1e-5;

/// `x·w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => g.add(y, b),
        None => Ok(y),
    }
}

/// Scaled dot-product attention `softmax(Q·Kᵀ/√d_k)·V`.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let (sq, sk, sv) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 || sq[1] != sk[1] || sk[0] != sv[0] || sq[1] == 0 {
        return Err(Error::invalid(format!(
            "attention shapes Q {sq:?} K {sk:?} V {sv:?} do not agree"
        )));
    }
    let kt = g.transpose(k)?;
    let logits = g.matmul(q, kt)?;
    let scaled = g.scale(logits, 1.0 / (sq[1] as f64).sqrt());
    let weights = g.softmax(scaled)?;
    g.matmul(weights, v)
}

/// Columns `start..start+len` of a rank-2 tensor.
pub fn slice_cols(g: &mut Graph, x: Var, start: usize, len: usize) -> Result<Var> {
    let t = g.transpose(x)?;
    let s = g.slice(t, start, len)?;
    g.transpose(s)
}

/// Attention with the feature axis split into `heads` equal groups; head
/// outputs are concatenated back along the feature axis.
pub fn multi_head_attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let (dq, dv) = (g.shape(q)[1], g.shape(v)[1]);
    if heads == 0 || dq % heads != 0 || dv % heads != 0 {
        return Err(Error::invalid(format!("{heads} heads do not divide dims {dq}/{dv}")));
    }
    let (hq, hv) = (dq / heads, dv / heads);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = slice_cols(g, q, h * hq, hq)?;
        let kh = slice_cols(g, k, h * hq, hq)?;
        let vh = slice_cols(g, v, h * hv, hv)?;
        let o = attention(g, qh, kh, vh)?;
        outs.push(g.transpose(o)?);
    }
    let stacked = g.concat(&outs)?;
    g.transpose(stacked)
}

/// Per-column population mean and standard deviation over the token axis.
fn token_stats(g: &mut Graph, x: Var) -> Result<(Var, Var, Var)> {
    let mean = g.mean_axis(x, 0)?;
    let centered = g.sub(x, mean)?;
    let sq = g.square(centered);
    let var = g.mean_axis(sq, 0)?;
    let std = g.sqrt(var);
    Ok((mean, centered, std))
}

/// Adaptive instance normalization over the token axis:
/// `σ(y)·(x − μ(x))/σ(x) + μ(y)` per feature column, population statistics.
/// `σ(x)` is floored at `eps` so constant inputs map to `μ(y)`.
pub fn adain(g: &mut Graph, x: Var, y: Var, eps: f64) -> Result<Var> {
    let (sx, sy) = (g.shape(x).to_vec(), g.shape(y).to_vec());
    if sx.len() != 2 || sy.len() != 2 || sx[1] != sy[1] {
        return Err(Error::invalid(format!("adain feature dims differ: {sx:?} vs {sy:?}")));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("adain eps must be positive"));
    }
    let (_, centered, std_x) = token_stats(g, x)?;
    let (mean_y, _, std_y) = token_stats(g, y)?;
    let guarded = g.unary(UnaryKind::ClampMin(eps), std_x);
    let normalized = g.div(centered, guarded)?;
    let scaled = g.mul(normalized, std_y)?;
    g.add(scaled, mean_y)
}

/// Normalizes each row of `[n, d]` to zero mean and unit variance, then
/// applies `gain` and `bias` of shape `[d]`.
pub fn layer_norm(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let mean = g.mean_axis(x, 1)?;
    let centered = g.sub(x, mean)?;
    let sq = g.square(centered);
    let var = g.mean_axis(sq, 1)?;
    let var = g.add_scalar(var, EPS);
    let std = g.sqrt(var);
    let normed = g.div(centered, std)?;
    let scaled = g.mul(normed, gain)?;
    g.add(scaled, bias)
}

/// Group normalization of a `[c, h, w]` map with per-channel affine
/// parameters of shape `[c]`.
pub fn group_norm(g: &mut Graph, x: Var, groups: usize, gamma: Var, beta: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || groups == 0 || s[0] % groups != 0 {
        return Err(Error::invalid(format!("group_norm: {groups} groups for shape {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let grouped = g.reshape(x, [groups, c / groups * h * w])?;
    let mean = g.mean_axis(grouped, 1)?;
    let centered = g.sub(grouped, mean)?;
    let sq = g.square(centered);
    let var = g.mean_axis(sq, 1)?;
    let var = g.add_scalar(var, EPS);
    let std = g.sqrt(var);
    let normed = g.div(centered, std)?;
    let normed = g.reshape(normed, [c, h, w])?;
    let gamma = g.reshape(gamma, [c, 1, 1])?;
    let beta = g.reshape(beta, [c, 1, 1])?;
    let scaled = g.mul(normed, gamma)?;
    g.add(scaled, beta)
}

/// Mean of squared differences.
pub fn mse(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::invalid(format!(
            "mse shapes differ: {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    let d = g.sub(a, b)?;
    let sq = g.square(d);
    Ok(g.mean_all(sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::Tensor;

    #[test]
    fn single_key_returns_value_row() {
        let mut r = rng::seeded(0);
        let mut g = Graph::new();
        let q = g.constant(Tensor::randn([5, 4], 1.0, &mut r));
        let k = g.constant(Tensor::randn([1, 4], 1.0, &mut r));
        let v = g.constant(Tensor::from_fn([1, 3], |i| i as f64 + 0.5));
        let o = attention(&mut g, q, k, v).unwrap();
        for row in 0..5 {
            assert_eq!(g.value(o).row(row), &[0.5, 1.5, 2.5]);
        }
    }

    #[test]
    fn zero_query_averages_values() {
        let mut r = rng::seeded(1);
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros([2, 3]));
        let k = g.constant(Tensor::randn([4, 3], 1.0, &mut r));
        let vt = Tensor::randn([4, 2], 1.0, &mut r);
        let v = g.constant(vt.clone());
        let o = attention(&mut g, q, k, v).unwrap();
        for c in 0..2 {
            let mean = (0..4).map(|i| vt.row(i)[c]).sum::<f64>() / 4.0;
            assert!((g.value(o).row(0)[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_case_matches_hand_formula() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new([1, 2], vec![1.0, 0.0]).unwrap());
        let k = g.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let v = g.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let o = attention(&mut g, q, k, v).unwrap();
        let a = (1.0f64 / 2f64.sqrt()).exp();
        let expect = [a / (a + 1.0), 1.0 / (a + 1.0)];
        for (got, want) in g.value(o).data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_shape_mismatch() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros([2, 3]));
        let k = g.constant(Tensor::zeros([4, 2]));
        let v = g.constant(Tensor::zeros([4, 2]));
        assert!(matches!(attention(&mut g, q, k, v), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn adain_worked_example() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.constant(Tensor::new([3, 1], vec![10.0, 20.0, 30.0]).unwrap());
        let o = adain(&mut g, x, y, EPS).unwrap();
        // μx = 2, σx = √(2/3); μy = 20, σy = 10·√(2/3); σy/σx = 10.
        for (got, want) in g.value(o).data().iter().zip([10.0, 20.0, 30.0]) {
            assert!((got - want).abs() < 1e-12, "{got}");
        }
    }

    #[test]
    fn adain_of_constant_is_target_mean() {
        let mut r = rng::seeded(3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full([5, 2], 0.7));
        let yt = Tensor::randn([6, 2], 1.0, &mut r);
        let y = g.constant(yt.clone());
        let o = adain(&mut g, x, y, EPS).unwrap();
        for c in 0..2 {
            let mean = (0..6).map(|i| yt.row(i)[c]).sum::<f64>() / 6.0;
            for i in 0..5 {
                assert!((g.value(o).row(i)[c] - mean).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn multi_head_with_one_head_is_plain_attention() {
        let mut r = rng::seeded(2);
        let mut g = Graph::new();
        let q = g.constant(Tensor::randn([3, 4], 1.0, &mut r));
        let k = g.constant(Tensor::randn([5, 4], 1.0, &mut r));
        let v = g.constant(Tensor::randn([5, 6], 1.0, &mut r));
        let a = attention(&mut g, q, k, v).unwrap();
        let b = multi_head_attention(&mut g, q, k, v, 1).unwrap();
        assert!(g.value(a).max_abs_diff(g.value(b)) < 1e-14);
        assert!(multi_head_attention(&mut g, q, k, v, 3).is_err());
    }
}
