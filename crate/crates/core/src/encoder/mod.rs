//! Transformer encoder: embeddings followed by post-norm self-attention
//! blocks, with last-layer attention weights exposed for inspection.

pub mod checkpoint;
pub mod layers;
pub mod params;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tokenizer::InputEncoding;
use crate::{Error, Result};

pub use layers::{Dropout, Embeddings, EncoderLayer, EncoderLayerCache, LayerNorm, Linear};
pub use params::{ParamSet, ParamView, ParamViewMut};

use layers::EmbeddingCache;

/// Standard deviation of the normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// 4 layers, 4 heads, hidden 128, feed-forward 256.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            layers: 4,
            heads: 4,
            hidden: 128,
            ff_dim: 256,
            max_len: crate::tokenizer::DEFAULT_MAX_LEN,
            vocab_size,
            dropout_rate: 0.1,
            seed: 0,
        }
    }

    /// bert-base dimensions: 12 layers, 12 heads, hidden 768.
    pub fn base(vocab_size: usize) -> Self {
        Self {
            layers: 12,
            heads: 12,
            hidden: 768,
            ff_dim: 3072,
            ..Self::desk(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("ff_dim", self.ff_dim),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Parameter count implied by the configuration (head excluded).
    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        let emb = (self.vocab_size + self.max_len + 2) * h + 2 * h;
        let attn = 4 * (h * h + h);
        let ff = h * self.ff_dim + self.ff_dim + self.ff_dim * h + h;
        emb + self.layers * (attn + ff + 4 * h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub cfg: EncoderConfig,
    pub embeddings: Embeddings,
    pub layers: Vec<EncoderLayer>,
}

/// Hidden states plus attention weights of one forward pass.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `positions × hidden`
    pub hidden_states: Array2<f64>,
    /// One `positions × positions` matrix per head of the last layer; row
    /// `i` holds the weights query `i` puts on every key.
    pub last_layer_attention: Vec<Array2<f64>>,
    /// Every layer's attention, only when requested.
    pub all_attention: Option<Vec<Vec<Array2<f64>>>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Keep attention weights of every layer, not just the last.
    pub all_attention: bool,
    /// Run only the leading non-padding positions. The outputs of those
    /// positions are unchanged because padding keys carry zero weight.
    pub trim_padding: bool,
}

pub struct ForwardCache {
    embeddings: EmbeddingCache,
    pub layers: Vec<EncoderLayerCache>,
}

/// Validated model input: ids, segments and key mask of the positions that
/// are actually computed.
pub(crate) struct PreparedInput {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    pub key_mask: Vec<bool>,
}

pub fn init_model(cfg: &EncoderConfig) -> Result<EncoderModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let embeddings = Embeddings::new(cfg.vocab_size, cfg.max_len, cfg.hidden, INIT_STD, &mut rng);
    let layers = (0..cfg.layers)
        .map(|_| EncoderLayer::new(cfg.hidden, cfg.heads, cfg.ff_dim, INIT_STD, &mut rng))
        .collect();
    Ok(EncoderModel {
        cfg: cfg.clone(),
        embeddings,
        layers,
    })
}

impl EncoderModel {
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill(0.0);
        g
    }

    pub(crate) fn prepare(&self, enc: &InputEncoding, trim: bool) -> Result<PreparedInput> {
        let n = enc.len();
        if enc.segment_ids.len() != n || enc.attention_mask.len() != n || enc.word_alignment.len() != n {
            return Err(Error::Shape("encoding sequences differ in length".into()));
        }
        let live = enc.live_len();
        let prefix_mask = enc.attention_mask[live..].iter().all(|&m| m == 0);
        let len = if trim && prefix_mask { live } else { n };
        if len > self.cfg.max_len {
            return Err(Error::Shape(format!(
                "sequence length {len} exceeds model max_len {}",
                self.cfg.max_len
            )));
        }
        let mut ids = Vec::with_capacity(len);
        let mut segments = Vec::with_capacity(len);
        for p in 0..len {
            let id = enc.token_ids[p] as usize;
            if id >= self.cfg.vocab_size {
                return Err(Error::InvalidArgument(format!(
                    "token id {id} at position {p} is outside the vocabulary of {}",
                    self.cfg.vocab_size
                )));
            }
            let seg = enc.segment_ids[p] as usize;
            if seg > 1 {
                return Err(Error::InvalidArgument(format!("segment id {seg} at position {p}")));
            }
            ids.push(id);
            segments.push(seg);
        }
        let key_mask = enc.attention_mask[..len].iter().map(|&m| m == 1).collect();
        Ok(PreparedInput { ids, segments, key_mask })
    }

    /// Layer-normalized input embeddings for every position.
    pub fn embed(&self, enc: &InputEncoding) -> Result<Array2<f64>> {
        let input = self.prepare(enc, false)?;
        Ok(self.embeddings.forward(&input.ids, &input.segments, None).0)
    }

    pub(crate) fn forward_prepared(
        &self,
        input: &PreparedInput,
        mut dropout: Option<&mut Dropout>,
    ) -> (Array2<f64>, ForwardCache) {
        let (mut x, embeddings) = self
            .embeddings
            .forward(&input.ids, &input.segments, dropout.as_deref_mut());
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(&x, &input.key_mask, dropout.as_deref_mut());
            layers.push(cache);
            x = y;
        }
        (x, ForwardCache { embeddings, layers })
    }

    /// Backpropagates `d_hidden` (gradient of the loss w.r.t. the final
    /// hidden states) and accumulates parameter gradients into `grads`.
    pub fn backward(&self, cache: &ForwardCache, d_hidden: &Array2<f64>, grads: &mut EncoderModel) {
        let mut d = d_hidden.clone();
        for ((layer, lc), g) in self.layers.iter().zip(&cache.layers).zip(grads.layers.iter_mut()).rev() {
            d = layer.backward(lc, &d, g);
        }
        self.embeddings.backward(&cache.embeddings, &d, &mut grads.embeddings);
    }

    /// Inference-mode forward over every position of the encoding.
    pub fn forward(&self, enc: &InputEncoding) -> Result<EncoderOutput> {
        self.forward_with(enc, ForwardOptions::default())
    }

    pub fn forward_with(&self, enc: &InputEncoding, opts: ForwardOptions) -> Result<EncoderOutput> {
        let input = self.prepare(enc, opts.trim_padding)?;
        let (hidden_states, cache) = self.forward_prepared(&input, None);
        Ok(output_from_cache(hidden_states, cache, opts.all_attention))
    }
}

fn output_from_cache(hidden_states: Array2<f64>, cache: ForwardCache, all: bool) -> EncoderOutput {
    let mut layers = cache.layers;
    let last = layers
        .last_mut()
        .map(|l| std::mem::take(&mut l.attention.probs))
        .unwrap_or_default();
    let all_attention = all.then(|| {
        let mut v: Vec<Vec<Array2<f64>>> = layers
            .iter_mut()
            .map(|l| std::mem::take(&mut l.attention.probs))
            .collect();
        if let Some(slot) = v.last_mut() {
            *slot = last.clone();
        }
        v
    });
    EncoderOutput {
        hidden_states,
        last_layer_attention: last,
        all_attention,
    }
}

/// Hidden state of the CLS position.
pub fn pool_cls(out: &EncoderOutput) -> Array1<f64> {
    out.hidden_states.row(0).to_owned()
}

impl ParamSet for EncoderModel {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.embeddings.params(&params::join(prefix, "embeddings"), out);
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&params::join(prefix, &format!("layers.{i}")), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        self.embeddings.params_mut(&params::join(prefix, "embeddings"), out);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.params_mut(&params::join(prefix, &format!("layers.{i}")), out);
        }
    }
}
