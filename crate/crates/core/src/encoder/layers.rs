//! Encoder building blocks with explicit forward caches and backward passes.
//!
//! Activations are row-major `positions × features` matrices. Every
//! `backward` accumulates parameter gradients into a gradient struct of the
//! same type as the layer and returns the gradient with respect to the
//! layer input.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::params::{push_arrays, push_arrays_mut, ParamSet, ParamView, ParamViewMut};

/// Variance epsilon; an all-zero input row normalizes to the bias.
pub const LAYER_NORM_EPS: f64 = 1e-12;

pub(crate) fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Seeded inverted-dropout masks.
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    /// Mask of zeros and `1 / (1 - rate)`; `None` when the rate is zero.
    pub fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let rng = &mut self.rng;
        Some(Array2::from_shape_simple_fn((rows, cols), || {
            if rng.random::<f64>() < keep {
                scale
            } else {
                0.0
            }
        }))
    }
}

fn apply_mask(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

fn maybe_mask(dropout: &mut Option<&mut Dropout>, rows: usize, cols: usize) -> Option<Array2<f64>> {
    dropout.as_mut().and_then(|d| d.mask(rows, cols))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in × out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(input: usize, output: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: normal_matrix(input, output, std, rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn backward(&self, x: ArrayView2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

impl ParamSet for Linear {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        push_arrays!(prefix, out, as_slice, self.weight => "weight", self.bias => "bias");
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        push_arrays_mut!(prefix, out, self.weight => "weight", self.bias => "bias");
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let n = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            *inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            let s = *inv;
            row.mapv_inplace(|v| v * s);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let n = dy.ncols() as f64;
        let dxhat = dy * &self.gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for ((mut out, (g, xh)), inv) in dx
            .rows_mut()
            .into_iter()
            .zip(dxhat.rows().into_iter().zip(cache.xhat.rows()))
            .zip(cache.inv_std.iter())
        {
            let sum_g = g.sum();
            let sum_gx = g.dot(&xh);
            Zip::from(&mut out)
                .and(&g)
                .and(&xh)
                .for_each(|o, &gi, &xi| *o = inv / n * (n * gi - sum_g - xi * sum_gx));
        }
        dx
    }
}

impl ParamSet for LayerNorm {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        push_arrays!(prefix, out, as_slice, self.gamma => "gamma", self.beta => "beta");
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        push_arrays_mut!(prefix, out, self.gamma => "gamma", self.beta => "beta");
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

pub struct FeedForwardCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl FeedForward {
    pub fn new(hidden: usize, ff_dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            inner: Linear::new(hidden, ff_dim, std, rng),
            outer: Linear::new(ff_dim, hidden, std, rng),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let pre = self.inner.forward(x);
        let act = pre.mapv(gelu);
        let y = self.outer.forward(&act);
        (
            y,
            FeedForwardCache {
                x: x.clone(),
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, cache: &FeedForwardCache, dy: &Array2<f64>, grad: &mut FeedForward) -> Array2<f64> {
        let mut d_pre = self.outer.backward(cache.act.view(), dy, &mut grad.outer);
        Zip::from(&mut d_pre).and(&cache.pre).for_each(|d, &p| *d *= gelu_grad(p));
        self.inner.backward(cache.x.view(), &d_pre, &mut grad.inner)
    }
}

impl ParamSet for FeedForward {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.inner.params(&super::params::join(prefix, "inner"), out);
        self.outer.params(&super::params::join(prefix, "outer"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        self.inner.params_mut(&super::params::join(prefix, "inner"), out);
        self.outer.params_mut(&super::params::join(prefix, "outer"), out);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per-head softmax weights before dropout.
    pub probs: Vec<Array2<f64>>,
    drop: Vec<Option<Array2<f64>>>,
    context: Array2<f64>,
}

impl SelfAttention {
    pub fn new(hidden: usize, heads: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: Linear::new(hidden, hidden, std, rng),
            key: Linear::new(hidden, hidden, std, rng),
            value: Linear::new(hidden, hidden, std, rng),
            output: Linear::new(hidden, hidden, std, rng),
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.query.output_dim() / self.heads
    }

    /// `key_mask[j]` is false for positions no query may attend to; their
    /// weight is exactly zero.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        key_mask: &[bool],
        mut dropout: Option<&mut Dropout>,
    ) -> (Array2<f64>, AttentionCache) {
        let len = x.nrows();
        let d = self.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);

        let mut context = Array2::zeros((len, self.query.output_dim()));
        let mut probs = Vec::with_capacity(self.heads);
        let mut drop = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * d..(h + 1) * d];
            let mut p = q.slice(cols).dot(&k.slice(cols).t());
            for mut row in p.rows_mut() {
                masked_softmax(row.as_slice_mut().expect("contiguous"), key_mask, scale);
            }
            let mask = maybe_mask(&mut dropout, len, len);
            let ctx = match &mask {
                Some(m) => (&p * m).dot(&v.slice(cols)),
                None => p.dot(&v.slice(cols)),
            };
            context.slice_mut(cols).assign(&ctx);
            probs.push(p);
            drop.push(mask);
        }
        let out = self.output.forward(&context);
        (
            out,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                drop,
                context,
            },
        )
    }

    pub fn backward(&self, cache: &AttentionCache, dy: &Array2<f64>, grad: &mut SelfAttention) -> Array2<f64> {
        let d = self.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let d_context = self.output.backward(cache.context.view(), dy, &mut grad.output);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.heads {
            let cols = s![.., h * d..(h + 1) * d];
            let p = &cache.probs[h];
            let dctx = d_context.slice(cols);
            let dropped;
            let p_used = match &cache.drop[h] {
                Some(m) => {
                    dropped = p * m;
                    &dropped
                }
                None => p,
            };
            dv.slice_mut(cols).assign(&p_used.t().dot(&dctx));
            let mut dp = dctx.dot(&cache.v.slice(cols).t());
            apply_mask(&mut dp, &cache.drop[h]);
            // softmax backward: ds = p * (dp - <dp, p>_row)
            let mut ds = dp;
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let inner = drow.dot(&prow);
                Zip::from(&mut drow).and(&prow).for_each(|g, &pi| *g = pi * (*g - inner));
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let x = cache.x.view();
        let mut dx = self.query.backward(x, &dq, &mut grad.query);
        dx += &self.key.backward(x, &dk, &mut grad.key);
        dx += &self.value.backward(x, &dv, &mut grad.value);
        dx
    }
}

/// Scaled softmax over the unmasked entries of one score row.
fn masked_softmax(row: &mut [f64], key_mask: &[bool], scale: f64) {
    let mut max = f64::NEG_INFINITY;
    for (s, &keep) in row.iter_mut().zip(key_mask) {
        if keep {
            *s *= scale;
            max = max.max(*s);
        }
    }
    if max == f64::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for (s, &keep) in row.iter_mut().zip(key_mask) {
        if keep {
            *s = (*s - max).exp();
            sum += *s;
        } else {
            *s = 0.0;
        }
    }
    row.iter_mut().for_each(|s| *s /= sum);
}

impl ParamSet for SelfAttention {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        use super::params::join;
        self.query.params(&join(prefix, "query"), out);
        self.key.params(&join(prefix, "key"), out);
        self.value.params(&join(prefix, "value"), out);
        self.output.params(&join(prefix, "output"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        use super::params::join;
        self.query.params_mut(&join(prefix, "query"), out);
        self.key.params_mut(&join(prefix, "key"), out);
        self.value.params_mut(&join(prefix, "value"), out);
        self.output.params_mut(&join(prefix, "output"), out);
    }
}

/// Post-norm transformer block: `LN(x + Attn(x))` then `LN(h + FF(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub attention: SelfAttention,
    pub attention_norm: LayerNorm,
    pub feed_forward: FeedForward,
    pub output_norm: LayerNorm,
}

pub struct EncoderLayerCache {
    pub attention: AttentionCache,
    attn_drop: Option<Array2<f64>>,
    norm1: LayerNormCache,
    ff: FeedForwardCache,
    ff_drop: Option<Array2<f64>>,
    norm2: LayerNormCache,
}

impl EncoderLayer {
    pub fn new(hidden: usize, heads: usize, ff_dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            attention: SelfAttention::new(hidden, heads, std, rng),
            attention_norm: LayerNorm::new(hidden),
            feed_forward: FeedForward::new(hidden, ff_dim, std, rng),
            output_norm: LayerNorm::new(hidden),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        key_mask: &[bool],
        mut dropout: Option<&mut Dropout>,
    ) -> (Array2<f64>, EncoderLayerCache) {
        let (mut a, attention) = self.attention.forward(x, key_mask, dropout.as_deref_mut());
        let attn_drop = maybe_mask(&mut dropout, a.nrows(), a.ncols());
        apply_mask(&mut a, &attn_drop);
        let (h, norm1) = self.attention_norm.forward(&(x + &a));
        let (mut f, ff) = self.feed_forward.forward(&h);
        let ff_drop = maybe_mask(&mut dropout, f.nrows(), f.ncols());
        apply_mask(&mut f, &ff_drop);
        let (y, norm2) = self.output_norm.forward(&(h + &f));
        (
            y,
            EncoderLayerCache {
                attention,
                attn_drop,
                norm1,
                ff,
                ff_drop,
                norm2,
            },
        )
    }

    pub fn backward(&self, cache: &EncoderLayerCache, dy: &Array2<f64>, grad: &mut EncoderLayer) -> Array2<f64> {
        let d_res2 = self.output_norm.backward(&cache.norm2, dy, &mut grad.output_norm);
        let mut df = d_res2.clone();
        apply_mask(&mut df, &cache.ff_drop);
        let mut dh = d_res2;
        dh += &self.feed_forward.backward(&cache.ff, &df, &mut grad.feed_forward);
        let d_res1 = self.attention_norm.backward(&cache.norm1, &dh, &mut grad.attention_norm);
        let mut da = d_res1.clone();
        apply_mask(&mut da, &cache.attn_drop);
        let mut dx = d_res1;
        dx += &self.attention.backward(&cache.attention, &da, &mut grad.attention);
        dx
    }
}

impl ParamSet for EncoderLayer {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        use super::params::join;
        self.attention.params(&join(prefix, "attention"), out);
        self.attention_norm.params(&join(prefix, "attention_norm"), out);
        self.feed_forward.params(&join(prefix, "feed_forward"), out);
        self.output_norm.params(&join(prefix, "output_norm"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        use super::params::join;
        self.attention.params_mut(&join(prefix, "attention"), out);
        self.attention_norm.params_mut(&join(prefix, "attention_norm"), out);
        self.feed_forward.params_mut(&join(prefix, "feed_forward"), out);
        self.output_norm.params_mut(&join(prefix, "output_norm"), out);
    }
}

/// Token + position + segment embeddings, layer normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub token: Array2<f64>,
    pub position: Array2<f64>,
    pub segment: Array2<f64>,
    pub norm: LayerNorm,
}

pub struct EmbeddingCache {
    ids: Vec<usize>,
    segments: Vec<usize>,
    norm: LayerNormCache,
    drop: Option<Array2<f64>>,
}

impl Embeddings {
    pub fn new(vocab: usize, max_len: usize, hidden: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            token: normal_matrix(vocab, hidden, std, rng),
            position: normal_matrix(max_len, hidden, std, rng),
            segment: normal_matrix(2, hidden, std, rng),
            norm: LayerNorm::new(hidden),
        }
    }

    /// Raw sum before normalization. Callers validate ids and lengths.
    pub fn sum(&self, ids: &[usize], segments: &[usize]) -> Array2<f64> {
        let hidden = self.token.ncols();
        let mut e = Array2::zeros((ids.len(), hidden));
        for (p, mut row) in e.rows_mut().into_iter().enumerate() {
            row += &self.token.row(ids[p]);
            row += &self.position.row(p);
            row += &self.segment.row(segments[p]);
        }
        e
    }

    pub fn forward(
        &self,
        ids: &[usize],
        segments: &[usize],
        mut dropout: Option<&mut Dropout>,
    ) -> (Array2<f64>, EmbeddingCache) {
        let e = self.sum(ids, segments);
        let (mut y, norm) = self.norm.forward(&e);
        let drop = maybe_mask(&mut dropout, y.nrows(), y.ncols());
        apply_mask(&mut y, &drop);
        (
            y,
            EmbeddingCache {
                ids: ids.to_vec(),
                segments: segments.to_vec(),
                norm,
                drop,
            },
        )
    }

    pub fn backward(&self, cache: &EmbeddingCache, dy: &Array2<f64>, grad: &mut Embeddings) {
        let mut dy = dy.clone();
        apply_mask(&mut dy, &cache.drop);
        let de = self.norm.backward(&cache.norm, &dy, &mut grad.norm);
        for (p, row) in de.rows().into_iter().enumerate() {
            let mut t = grad.token.row_mut(cache.ids[p]);
            t += &row;
            let mut pos = grad.position.row_mut(p);
            pos += &row;
            let mut seg = grad.segment.row_mut(cache.segments[p]);
            seg += &row;
        }
    }
}

impl ParamSet for Embeddings {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        push_arrays!(prefix, out, as_slice,
            self.token => "token",
            self.position => "position",
            self.segment => "segment",
        );
        self.norm.params(&super::params::join(prefix, "norm"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        push_arrays_mut!(prefix, out,
            self.token => "token",
            self.position => "position",
            self.segment => "segment",
        );
        self.norm.params_mut(&super::params::join(prefix, "norm"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layer_norm_zero_row_maps_to_bias() {
        let mut ln = LayerNorm::new(3);
        ln.beta = array![0.5, -1.0, 2.0];
        let (y, _) = ln.forward(&Array2::zeros((2, 3)));
        for row in y.rows() {
            assert_eq!(row, ln.beta);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let ln = LayerNorm::new(4);
        let (y, _) = ln.forward(&array![[1.0, 2.0, 3.0, 4.0]]);
        let mean = y.sum() / 4.0;
        let var = y.mapv(|v| (v - mean).powi(2)).sum() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn masked_softmax_rows() {
        let mut row = [1.0, 2.0, 3.0, 4.0];
        masked_softmax(&mut row, &[true, true, false, true], 1.0);
        assert_eq!(row[2], 0.0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut single = [7.0, 1.0];
        masked_softmax(&mut single, &[true, false], 0.3);
        assert_eq!(single, [1.0, 0.0]);

        let mut equal = [0.5; 3];
        masked_softmax(&mut equal, &[true; 3], 1.0);
        assert!(equal.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // Phi(1) = 0.8413447460685429
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((gelu_grad(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_dropout_is_identity() {
        use rand::SeedableRng;
        let mut d = Dropout {
            rate: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        assert!(d.mask(2, 2).is_none());
        d.rate = 0.5;
        let m = d.mask(50, 50).unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
