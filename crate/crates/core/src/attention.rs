//! Word-level CLS attention from the last encoder layer, with JSON and SVG
//! export.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::heads::{Setting, TaskModel};
use crate::tokenizer::{InputEncoding, Vocab};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionProfile {
    pub words: Vec<String>,
    /// Renormalized word scores, summing to 1 (all zero if the words got no
    /// attention at all).
    pub scores: Vec<f64>,
    /// Head-averaged CLS mass per word before renormalization.
    pub raw_scores: Vec<f64>,
    pub aspect_index: Option<usize>,
    pub predicted_label: usize,
    pub logits: Vec<Vec<f64>>,
}

/// Mean over heads of the CLS row, summed over each word's pieces.
/// Specials and padding have no word and drop out.
pub fn cls_word_mass(attention: &[Array2<f64>], enc: &InputEncoding) -> Result<Vec<f64>> {
    let Some(first) = attention.first() else {
        return Err(Error::Shape("no attention heads".into()));
    };
    let keys = first.ncols();
    let mut mass = vec![0.0; enc.segment_words[0]];
    for head in attention {
        if head.ncols() != keys || head.nrows() == 0 {
            return Err(Error::Shape("attention heads differ in shape".into()));
        }
        for (p, &w) in head.row(0).iter().enumerate() {
            if let Some(word) = enc.word_alignment.get(p).copied().flatten() {
                if enc.segment_ids[p] == 0 {
                    mass[word] += w;
                }
            }
        }
    }
    let heads = attention.len() as f64;
    mass.iter_mut().for_each(|m| *m /= heads);
    Ok(mass)
}

pub fn renormalize(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|m| m / total).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

/// CLS attention profile of `sentence` under a single-sentence model.
/// Sequence labelers report label 1 when any word is predicted
/// metaphorical.
pub fn cls_attention<S: AsRef<str>>(
    model: &TaskModel,
    vocab: &Vocab,
    sentence: &[S],
    aspect_index: Option<usize>,
    max_len: usize,
) -> Result<AttentionProfile> {
    if model.task.setting == Setting::WordLevel {
        return Err(Error::InvalidArgument(
            "CLS attention maps need a sentence-level or sequence-labeling model".into(),
        ));
    }
    if let Some(a) = aspect_index {
        if a >= sentence.len() {
            return Err(Error::InvalidArgument(format!("aspect index {a} beyond {} words", sentence.len())));
        }
    }
    let enc = vocab.encode_single(sentence, max_len);
    let prediction = model.predict(&enc)?;
    let attention = prediction.attention.clone().unwrap_or_default();
    let raw_scores = cls_word_mass(&attention, &enc)?;
    let predicted_label = if model.task.setting == Setting::SequenceLabeling {
        usize::from(prediction.labels.contains(&1))
    } else {
        prediction.label()
    };
    Ok(AttentionProfile {
        words: sentence.iter().map(|w| w.as_ref().to_string()).collect(),
        scores: renormalize(&raw_scores),
        raw_scores,
        aspect_index,
        predicted_label,
        logits: prediction.logits,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapFormat {
    Json,
    Svg,
}

impl std::str::FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(HeatmapFormat::Json),
            "svg" => Ok(HeatmapFormat::Svg),
            other => Err(Error::InvalidArgument(format!("unknown heatmap format {other:?}"))),
        }
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const CELL_HEIGHT: usize = 36;
const CHAR_WIDTH: usize = 9;
const PADDING: usize = 12;

/// Fill of a cell at `intensity` in [0, 1]: white at 0, saturated red at 1.
pub fn cell_color(intensity: f64) -> String {
    let i = intensity.clamp(0.0, 1.0);
    let fade = (255.0 * (1.0 - i)).round() as u8;
    format!("rgb(255,{fade},{fade})")
}

/// One row of cells, one per word, shaded by score relative to the largest
/// score. The aspect word is set in bold.
pub fn render_svg(p: &AttentionProfile) -> String {
    let max = p.scores.iter().copied().fold(0.0, f64::max);
    let widths: Vec<usize> = p
        .words
        .iter()
        .map(|w| w.chars().count() * CHAR_WIDTH + 2 * PADDING)
        .collect();
    let total: usize = widths.iter().sum();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{CELL_HEIGHT}" viewBox="0 0 {total} {CELL_HEIGHT}" font-family="monospace" font-size="14">"#
    );
    let mut x = 0;
    for (i, (word, w)) in p.words.iter().zip(&widths).enumerate() {
        let score = p.scores.get(i).copied().unwrap_or(0.0);
        let intensity = if max > 0.0 { score / max } else { 0.0 };
        let weight = if p.aspect_index == Some(i) { r#" font-weight="bold""# } else { "" };
        let _ = writeln!(
            svg,
            r#"  <g class="cell"><rect x="{x}" y="0" width="{w}" height="{CELL_HEIGHT}" fill="{}" stroke="gray"><title>{:.4}</title></rect><text x="{}" y="{}" text-anchor="middle"{weight}>{}</text></g>"#,
            cell_color(intensity),
            score,
            x + w / 2,
            CELL_HEIGHT / 2 + 5,
            xml_escape(word)
        );
        x += w;
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn export_heatmap(p: &AttentionProfile, path: impl AsRef<Path>, format: HeatmapFormat) -> Result<()> {
    let body = match format {
        HeatmapFormat::Json => serde_json::to_string_pretty(p)? + "\n",
        HeatmapFormat::Svg => render_svg(p),
    };
    std::fs::write(path, body)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::heads::TaskKind;
    use crate::data::Scheme;
    use crate::tokenizer::build_vocab;

    fn enc(alignment: Vec<Option<usize>>, words: usize) -> InputEncoding {
        let n = alignment.len();
        InputEncoding {
            token_ids: vec![5; n],
            segment_ids: vec![0; n],
            attention_mask: vec![1; n],
            word_alignment: alignment,
            segment_words: [words, 0],
            focus: None,
        }
    }

    #[test]
    fn uniform_attention_weights_by_piece_count() {
        // [CLS] w0 w1 w1 w2 [SEP]: uniform 1/6 per key
        let e = enc(vec![None, Some(0), Some(1), Some(1), Some(2), None], 3);
        let head = Array2::from_elem((6, 6), 1.0 / 6.0);
        let raw = cls_word_mass(&[head.clone(), head], &e).unwrap();
        let expected = [1.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0];
        for (r, x) in raw.iter().zip(expected) {
            assert!((r - x).abs() < 1e-15);
        }
        let s = renormalize(&raw);
        assert!((s[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn head_order_does_not_matter() {
        let e = enc(vec![None, Some(0), Some(1), None], 2);
        let a = Array2::from_shape_vec((4, 4), (0..16).map(|x| x as f64 / 30.0).collect()).unwrap();
        let b = Array2::from_shape_vec((4, 4), (0..16).map(|x| (16 - x) as f64 / 40.0).collect()).unwrap();
        let ab = cls_word_mass(&[a.clone(), b.clone()], &e).unwrap();
        let ba = cls_word_mass(&[b, a], &e).unwrap();
        assert_eq!(ab, ba);
    }

    fn model(v: &Vocab) -> TaskModel {
        let cfg = EncoderConfig {
            layers: 1,
            heads: 2,
            hidden: 8,
            ff_dim: 16,
            max_len: 32,
            vocab_size: v.len(),
            dropout_rate: 0.0,
            seed: 4,
        };
        TaskModel::init(&cfg, TaskKind::for_scheme(Setting::SentenceLevel, Scheme::BinaryMoh)).unwrap()
    }

    #[test]
    fn single_word_gets_everything() {
        let v = build_vocab(["visited"], 40).unwrap();
        let p = cls_attention(&model(&v), &v, &["visited"], Some(0), 16).unwrap();
        assert_eq!(p.scores, vec![1.0]);
        assert!(p.raw_scores[0] < 1.0);
    }

    #[test]
    fn scores_are_a_distribution() {
        let sentence = ["he", "visited", "his", "illness", "<again>"];
        let v = build_vocab(sentence, 60).unwrap();
        let p = cls_attention(&model(&v), &v, &sentence, Some(1), 16).unwrap();
        assert!((p.scores.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.scores.iter().all(|&s| s >= 0.0));
        assert!(p.raw_scores.iter().sum::<f64>() <= 1.0 + 1e-12);

        let svg = render_svg(&p);
        assert_eq!(svg.matches("<rect").count(), 5);
        assert!(svg.contains("&lt;again&gt;"));
        assert_eq!(svg.matches("font-weight=\"bold\"").count(), 1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        export_heatmap(&p, &path, HeatmapFormat::Json).unwrap();
        let back: AttentionProfile = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(export_heatmap(&p, dir.path().join("missing/p.svg"), HeatmapFormat::Svg).is_err());
    }

    #[test]
    fn zero_score_is_the_lightest_cell() {
        let p = AttentionProfile {
            words: vec!["a".into(), "b".into()],
            scores: vec![0.0, 1.0],
            raw_scores: vec![0.0, 0.4],
            aspect_index: None,
            predicted_label: 0,
            logits: vec![vec![0.0, 0.0]],
        };
        let svg = render_svg(&p);
        assert!(svg.contains(&format!("fill=\"{}\"", cell_color(0.0))));
        assert_eq!(cell_color(0.0), "rgb(255,255,255)");
        assert!(svg.contains("rgb(255,0,0)"));
    }
}
