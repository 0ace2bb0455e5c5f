//! Central finite-difference checks of the hand-written backward passes.
//!
//! Every block is checked against the scalar loss `sum(R ⊙ y)` for a fixed
//! random `R`, so the analytic gradient of the output is `R` itself. Inputs
//! are treated as parameters, which checks `dx` as well as parameter
//! gradients. The full task models are checked against their cross-entropy.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::layers::{normal_matrix, FeedForward, SelfAttention};
use crate::encoder::params::join;
use crate::encoder::{Dropout, EncoderConfig, EncoderLayer, Embeddings, LayerNorm, Linear, ParamSet, ParamView, ParamViewMut};
use crate::heads::{Setting, Target, TaskKind, TaskModel};
use crate::tokenizer::InputEncoding;

pub const DEFAULT_EPS: f64 = 1e-3;
/// Pass mark for the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Gradient norm below which a tensor counts as having zero gradient;
/// keeps exactly-zero gradients from dividing rounding noise by nothing.
pub const NORM_FLOOR: f64 = 1e-6;

/// `‖a - n‖ / max(‖a‖, ‖n‖, NORM_FLOOR)` over one tensor.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(NORM_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: String,
    /// Largest per-tensor relative error.
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Tensor with the largest error.
    pub worst: String,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Central differences of `loss` around `point`, coordinate by coordinate.
pub fn numeric_gradient<P, F>(point: &P, eps: f64, mut loss: F) -> Vec<Vec<f64>>
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let mut probe = point.clone();
    let sizes: Vec<usize> = point.views().iter().map(|v| v.data.len()).collect();
    let mut out = Vec::with_capacity(sizes.len());
    for (t, &len) in sizes.iter().enumerate() {
        let mut g = Vec::with_capacity(len);
        for i in 0..len {
            let original = probe.views()[t].data[i];
            probe.views_mut()[t].data[i] = original + eps;
            let plus = loss(&probe);
            probe.views_mut()[t].data[i] = original - eps;
            let minus = loss(&probe);
            probe.views_mut()[t].data[i] = original;
            g.push((plus - minus) / (2.0 * eps));
        }
        out.push(g);
    }
    out
}

/// Compares `analytic` (same layout as `point`) with the numeric gradient.
pub fn compare<P, F>(block: &str, point: &P, analytic: &P, eps: f64, loss: F) -> BlockCheck
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let numeric = numeric_gradient(point, eps, loss);
    let mut worst = (0.0f64, String::new());
    let mut coordinates = 0;
    for (view, n) in analytic.views().iter().zip(&numeric) {
        let err = relative_error(view.data, n);
        coordinates += n.len();
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, view.name.clone());
        }
    }
    BlockCheck {
        block: block.to_string(),
        max_rel_error: worst.0,
        coordinates,
        worst: worst.1,
    }
}

/// A block together with the input it is evaluated at.
#[derive(Clone, Debug)]
struct WithInput<B> {
    block: B,
    input: Array2<f64>,
}

impl<B: ParamSet> ParamSet for WithInput<B> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.block.params(prefix, out);
        out.push(ParamView {
            name: join(prefix, "input"),
            shape: self.input.shape().to_vec(),
            data: self.input.as_slice().expect("contiguous"),
        });
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        self.block.params_mut(prefix, out);
        let shape = self.input.shape().to_vec();
        out.push(ParamViewMut {
            name: join(prefix, "input"),
            shape,
            data: self.input.as_slice_mut().expect("contiguous"),
        });
    }
}

fn weighted_sum(r: &Array2<f64>, y: &Array2<f64>) -> f64 {
    (r * y).sum()
}

const LEN: usize = 5;
const HIDDEN: usize = 8;
const HEADS: usize = 2;
const FF: usize = 12;
const STD: f64 = 0.5;

fn key_mask() -> Vec<bool> {
    // last two keys are padding
    (0..LEN).map(|p| p < LEN - 2).collect()
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(salt))
}

pub fn check_linear(seed: u64, eps: f64) -> BlockCheck {
    let mut g = rng(seed, 1);
    let point = WithInput {
        block: Linear::new(HIDDEN, 3, STD, &mut g),
        input: normal_matrix(LEN, HIDDEN, 1.0, &mut g),
    };
    let r = normal_matrix(LEN, 3, 1.0, &mut g);
    let mut grad = WithInput {
        block: point.block.clone(),
        input: Array2::zeros((LEN, HIDDEN)),
    };
    grad.block.fill(0.0);
    grad.input = point.block.backward(point.input.view(), &r, &mut grad.block);
    compare("linear", &point, &grad, eps, |p| weighted_sum(&r, &p.block.forward(&p.input)))
}

pub fn check_layer_norm(seed: u64, eps: f64) -> BlockCheck {
    let mut g = rng(seed, 2);
    let mut norm = LayerNorm::new(HIDDEN);
    norm.gamma = normal_matrix(1, HIDDEN, 1.0, &mut g).row(0).to_owned() + 1.0;
    norm.beta = normal_matrix(1, HIDDEN, 1.0, &mut g).row(0).to_owned();
    let point = WithInput {
        block: norm,
        input: normal_matrix(LEN, HIDDEN, 1.0, &mut g),
    };
    let r = normal_matrix(LEN, HIDDEN, 1.0, &mut g);
    let mut grad = point.clone();
    grad.block.fill(0.0);
    let (_, cache) = point.block.forward(&point.input);
    grad.input = point.block.backward(&cache, &r, &mut grad.block);
    compare("layer_norm", &point, &grad, eps, |p| weighted_sum(&r, &p.block.forward(&p.input).0))
}

pub fn check_feed_forward(seed: u64, eps: f64) -> BlockCheck {
    let mut g = rng(seed, 3);
    let point = WithInput {
        block: FeedForward::new(HIDDEN, FF, STD, &mut g),
        input: normal_matrix(LEN, HIDDEN, 1.0, &mut g),
    };
    let r = normal_matrix(LEN, HIDDEN, 1.0, &mut g);
    let mut grad = point.clone();
    grad.block.fill(0.0);
    let (_, cache) = point.block.forward(&point.input);
    grad.input = point.block.backward(&cache, &r, &mut grad.block);
    compare("feed_forward", &point, &grad, eps, |p| weighted_sum(&r, &p.block.forward(&p.input).0))
}

pub fn check_attention(seed: u64, eps: f64) -> BlockCheck {
    let mut g = rng(seed, 4);
    let point = WithInput {
        block: SelfAttention::new(HIDDEN, HEADS, STD, &mut g),
        input: normal_matrix(LEN, HIDDEN, 1.0, &mut g),
    };
    let r = normal_matrix(LEN, HIDDEN, 1.0, &mut g);
    let mask = key_mask();
    let mut grad = point.clone();
    grad.block.fill(0.0);
    let (_, cache) = point.block.forward(&point.input, &mask, None);
    grad.input = point.block.backward(&cache, &r, &mut grad.block);
    compare("self_attention", &point, &grad, eps, |p| {
        weighted_sum(&r, &p.block.forward(&p.input, &mask, None).0)
    })
}

/// Encoder layer with dropout active; the mask stream is re-seeded for every
/// evaluation so all evaluations see the same masks.
pub fn check_encoder_layer(seed: u64, eps: f64) -> BlockCheck {
    let mut g = rng(seed, 5);
    let point = WithInput {
        block: EncoderLayer::new(HIDDEN, HEADS, FF, STD, &mut g),
        input: normal_matrix(LEN, HIDDEN, 1.0, &mut g),
    };
    let r = normal_matrix(LEN, HIDDEN, 1.0, &mut g);
    let mask = key_mask();
    let dropout = || Dropout {
        rate: 0.2,
        rng: rng(seed, 55),
    };
    let mut grad = point.clone();
    grad.block.fill(0.0);
    let (_, cache) = point.block.forward(&point.input, &mask, Some(&mut dropout()));
    grad.input = point.block.backward(&cache, &r, &mut grad.block);
    compare("encoder_layer", &point, &grad, eps, |p| {
        weighted_sum(&r, &p.block.forward(&p.input, &mask, Some(&mut dropout())).0)
    })
}

pub fn check_embeddings(seed: u64, eps: f64) -> BlockCheck {
    let mut g = rng(seed, 6);
    let vocab = 7;
    let point = Embeddings::new(vocab, LEN + 1, HIDDEN, STD, &mut g);
    let ids = [2, 5, 5, 1, 3];
    let segments = [0, 0, 1, 1, 1];
    let r = normal_matrix(LEN, HIDDEN, 1.0, &mut g);
    let mut grad = point.clone();
    grad.fill(0.0);
    let (_, cache) = point.forward(&ids, &segments, None);
    point.backward(&cache, &r, &mut grad);
    compare("embeddings", &point, &grad, eps, |p| weighted_sum(&r, &p.forward(&ids, &segments, None).0))
}

fn tiny_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        heads: HEADS,
        hidden: HIDDEN,
        ff_dim: FF,
        max_len: 10,
        vocab_size: 9,
        dropout_rate: 0.1,
        seed,
    }
}

/// `[CLS] w0 w1 w1' [SEP] w2 [SEP] [PAD] [PAD]`: a pair encoding with one
/// two-piece word and trailing padding.
fn tiny_encoding() -> InputEncoding {
    InputEncoding {
        token_ids: vec![2, 5, 6, 7, 3, 8, 3, 0, 0],
        segment_ids: vec![0, 0, 0, 0, 0, 1, 1, 0, 0],
        attention_mask: vec![1, 1, 1, 1, 1, 1, 1, 0, 0],
        word_alignment: vec![None, Some(0), Some(1), Some(1), None, Some(0), None, None, None],
        segment_words: [2, 1],
        focus: None,
    }
}

fn check_task_model(name: &str, seed: u64, eps: f64, task: TaskKind, target: Target) -> BlockCheck {
    let mut cfg = tiny_config(seed);
    cfg.seed = seed.wrapping_add(7);
    let mut model = TaskModel::init(&cfg, task).expect("valid tiny config");
    // larger weights than the usual initialization give gradients well above
    // rounding noise
    let mut g = rng(seed, 8);
    for v in model.views_mut() {
        if v.shape.len() == 2 {
            let noise = normal_matrix(1, v.data.len(), 0.3, &mut g);
            v.data.iter_mut().zip(noise.iter()).for_each(|(x, n)| *x += n);
        }
    }
    let enc = tiny_encoding();
    let dropout = || Dropout {
        rate: cfg.dropout_rate,
        rng: rng(seed, 88),
    };
    let mut grad = model.zeros_like();
    model
        .accumulate(&enc, &target, Some(&mut dropout()), &mut grad)
        .expect("valid fixture");
    compare(name, &model, &grad, eps, |m| {
        let mut scratch = m.zeros_like();
        m.accumulate(&enc, &target, Some(&mut dropout()), &mut scratch)
            .expect("valid fixture")
            .0
    })
}

pub fn check_classifier(seed: u64, eps: f64) -> BlockCheck {
    let task = TaskKind {
        setting: Setting::SentenceLevel,
        num_classes: 4,
        pooling: Default::default(),
    };
    check_task_model("classifier", seed, eps, task, Target::Class((seed % 4) as usize))
}

pub fn check_sequence_labeler(seed: u64, eps: f64) -> BlockCheck {
    let task = TaskKind {
        setting: Setting::SequenceLabeling,
        num_classes: 2,
        pooling: Default::default(),
    };
    // continuation piece, specials and padding are ignored
    let targets = vec![None, Some(1), Some(0), None, None, None, None, None, None];
    check_task_model("sequence_labeler", seed, eps, task, Target::Tokens(targets))
}

/// Every block at one seed.
pub fn check_all(seed: u64, eps: f64) -> Vec<BlockCheck> {
    vec![
        check_linear(seed, eps),
        check_layer_norm(seed, eps),
        check_feed_forward(seed, eps),
        check_attention(seed, eps),
        check_encoder_layer(seed, eps),
        check_embeddings(seed, eps),
        check_classifier(seed, eps),
        check_sequence_labeler(seed, eps),
    ]
}
