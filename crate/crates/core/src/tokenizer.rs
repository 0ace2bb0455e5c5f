//! Subword vocabulary, greedy longest-match tokenization and the input
//! encodings fed to the encoder.
//!
//! Vocabularies are grown from character pieces by repeatedly merging the
//! most frequent adjacent piece pair. Pieces that continue a word carry the
//! `##` prefix, so the result can be consumed by the usual WordPiece
//! matcher.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CONTINUATION_PREFIX: &str = "##";
/// Surface form that the tokenizer maps to the single MASK piece.
pub const MASK_SURFACE: &str = "[MASK]";
pub const DEFAULT_MAX_LEN: usize = 128;
const MAX_CHARS_PER_WORD: usize = 100;

const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
}

impl SpecialIds {
    fn contains(&self, id: u32) -> bool {
        [self.pad, self.unk, self.cls, self.sep, self.mask].contains(&id)
    }
}

/// Contents of the JSON sidecar written next to `vocab.txt`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct VocabSidecar {
    specials: SpecialIds,
    continuation_prefix: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    specials: SpecialIds,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>, specials: SpecialIds) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {t:?}")));
            }
        }
        let ids = [specials.pad, specials.unk, specials.cls, specials.sep, specials.mask];
        let distinct: BTreeSet<u32> = ids.iter().copied().collect();
        if distinct.len() != ids.len() || ids.iter().any(|&i| i as usize >= tokens.len()) {
            return Err(Error::InvalidArgument("special token ids must be distinct and in range".into()));
        }
        Ok(Self { tokens, index, specials })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.specials.contains(id)
    }

    /// Writes `vocab.txt` (one token per line, line number = id) and the
    /// JSON sidecar with special ids.
    pub fn save(&self, vocab_txt: impl AsRef<Path>, sidecar_json: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(vocab_txt)?);
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        f.flush()?;
        let sidecar = VocabSidecar {
            specials: self.specials,
            continuation_prefix: CONTINUATION_PREFIX.into(),
        };
        std::fs::write(sidecar_json, serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(vocab_txt: impl AsRef<Path>, sidecar_json: impl AsRef<Path>) -> Result<Self> {
        let tokens = read_lines(vocab_txt)?;
        let sidecar: VocabSidecar = serde_json::from_slice(&std::fs::read(sidecar_json)?)?;
        if sidecar.continuation_prefix != CONTINUATION_PREFIX {
            return Err(Error::InvalidArgument(format!(
                "unsupported continuation prefix {:?}",
                sidecar.continuation_prefix
            )));
        }
        Self::from_tokens(tokens, sidecar.specials)
    }

    /// Imports a BERT-style `vocab.txt`, locating the specials by name.
    pub fn import_wordpiece(vocab_txt: impl AsRef<Path>) -> Result<Self> {
        let tokens = read_lines(vocab_txt)?;
        let find = |name: &str| {
            tokens
                .iter()
                .position(|t| t == name)
                .map(|i| i as u32)
                .ok_or_else(|| Error::InvalidArgument(format!("vocabulary lacks {name}")))
        };
        let specials = SpecialIds {
            pad: find("[PAD]")?,
            unk: find("[UNK]")?,
            cls: find("[CLS]")?,
            sep: find("[SEP]")?,
            mask: find("[MASK]")?,
        };
        Self::from_tokens(tokens, specials)
    }

    /// Greedy longest-match split of every word. Words that cannot be fully
    /// covered become a single UNK piece.
    pub fn tokenize<S: AsRef<str>>(&self, sentence: &[S]) -> Tokenized {
        let mut ids = Vec::new();
        let mut alignment = Vec::new();
        for (wi, word) in sentence.iter().enumerate() {
            for id in self.word_pieces(word.as_ref()) {
                ids.push(id);
                alignment.push(wi);
            }
        }
        Tokenized {
            ids,
            alignment,
            words: sentence.len(),
        }
    }

    fn word_pieces(&self, word: &str) -> Vec<u32> {
        if word == MASK_SURFACE {
            return vec![self.specials.mask];
        }
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_CHARS_PER_WORD {
            return vec![self.specials.unk];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION_PREFIX);
                }
                candidate.extend(&chars[start..end]);
                if let Some(&id) = self.index.get(candidate.as_str()) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![self.specials.unk],
            }
        }
        pieces
    }

    /// `[CLS] pieces [SEP] [PAD]...`, truncated to `max_len`.
    pub fn encode_single<S: AsRef<str>>(&self, sentence: &[S], max_len: usize) -> InputEncoding {
        let a = self.tokenize(sentence);
        let mut enc = EncodingBuilder::new(self.specials, max_len);
        let keep = a.ids.len().min(max_len.saturating_sub(2));
        enc.push_special(self.specials.cls, 0);
        enc.push_pieces(&a, keep, 0);
        enc.push_special(self.specials.sep, 0);
        enc.finish([a.words, 0])
    }

    /// `[CLS] pieces(a) [SEP] pieces(b) [SEP] [PAD]...`. When the pair does
    /// not fit, pieces are dropped from the end of the longer segment first.
    pub fn encode_pair<S: AsRef<str>, T: AsRef<str>>(&self, a: &[S], b: &[T], max_len: usize) -> InputEncoding {
        let ta = self.tokenize(a);
        let tb = self.tokenize(b);
        let budget = max_len.saturating_sub(3);
        let (mut la, mut lb) = (ta.ids.len(), tb.ids.len());
        while la + lb > budget {
            if la > lb {
                la -= 1;
            } else {
                lb -= 1;
            }
        }
        let mut enc = EncodingBuilder::new(self.specials, max_len);
        enc.push_special(self.specials.cls, 0);
        enc.push_pieces(&ta, la, 0);
        enc.push_special(self.specials.sep, 0);
        enc.push_pieces(&tb, lb, 1);
        enc.push_special(self.specials.sep, 1);
        enc.finish([ta.words, tb.words])
    }
}

fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        out.push(line?.trim_end_matches('\r').to_string());
    }
    Ok(out)
}

/// Subword pieces of a sentence with the source word of each piece.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<u32>,
    pub alignment: Vec<usize>,
    pub words: usize,
}

/// Replaces the aspect word with the MASK surface token.
pub fn mask_aspect<S: AsRef<str>>(sentence: &[S], aspect_index: usize) -> Result<Vec<String>> {
    if aspect_index >= sentence.len() {
        return Err(Error::InvalidArgument(format!(
            "aspect index {aspect_index} out of range for {} words",
            sentence.len()
        )));
    }
    Ok(sentence
        .iter()
        .enumerate()
        .map(|(i, w)| if i == aspect_index { MASK_SURFACE.to_string() } else { w.as_ref().to_string() })
        .collect())
}

/// Fixed-length model input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEncoding {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    /// Source word index of each position; `None` on specials and padding.
    pub word_alignment: Vec<Option<usize>>,
    /// Word counts of segment A and segment B before truncation.
    pub segment_words: [usize; 2],
    /// Position a classifier reads instead of CLS, when the task asks for it.
    #[serde(default)]
    pub focus: Option<usize>,
}

impl InputEncoding {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of leading non-padding positions.
    pub fn live_len(&self) -> usize {
        self.attention_mask.iter().take_while(|&&m| m == 1).count()
    }

    /// Positions of segment `seg` carrying pieces of word `word`.
    pub fn word_span(&self, seg: u8, word: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&p| self.segment_ids[p] == seg && self.word_alignment[p] == Some(word) && self.attention_mask[p] == 1)
            .collect()
    }

    /// First position of every word of segment `seg`; `None` for words whose
    /// pieces were truncated away.
    pub fn first_pieces(&self, seg: u8) -> Vec<Option<usize>> {
        let mut first = vec![None; self.segment_words[seg as usize]];
        for p in 0..self.len() {
            if self.segment_ids[p] != seg || self.attention_mask[p] == 0 {
                continue;
            }
            if let Some(w) = self.word_alignment[p] {
                if first[w].is_none() {
                    first[w] = Some(p);
                }
            }
        }
        first
    }
}

struct EncodingBuilder {
    specials: SpecialIds,
    max_len: usize,
    enc: InputEncoding,
}

impl EncodingBuilder {
    fn new(specials: SpecialIds, max_len: usize) -> Self {
        Self {
            specials,
            max_len,
            enc: InputEncoding {
                token_ids: Vec::with_capacity(max_len),
                segment_ids: Vec::with_capacity(max_len),
                attention_mask: Vec::with_capacity(max_len),
                word_alignment: Vec::with_capacity(max_len),
                segment_words: [0, 0],
                focus: None,
            },
        }
    }

    fn push(&mut self, id: u32, seg: u8, word: Option<usize>) {
        self.enc.token_ids.push(id);
        self.enc.segment_ids.push(seg);
        self.enc.attention_mask.push(1);
        self.enc.word_alignment.push(word);
    }

    fn push_special(&mut self, id: u32, seg: u8) {
        self.push(id, seg, None);
    }

    fn push_pieces(&mut self, t: &Tokenized, keep: usize, seg: u8) {
        for i in 0..keep {
            self.push(t.ids[i], seg, Some(t.alignment[i]));
        }
    }

    fn finish(mut self, segment_words: [usize; 2]) -> InputEncoding {
        // only reachable when max_len is smaller than the special tokens
        if self.enc.token_ids.len() > self.max_len {
            let n = self.max_len;
            self.enc.token_ids.truncate(n);
            self.enc.segment_ids.truncate(n);
            self.enc.attention_mask.truncate(n);
            self.enc.word_alignment.truncate(n);
            if let Some(last) = self.enc.token_ids.last_mut() {
                *last = self.specials.sep;
                *self.enc.word_alignment.last_mut().unwrap() = None;
            }
        }
        while self.enc.token_ids.len() < self.max_len {
            self.enc.token_ids.push(self.specials.pad);
            self.enc.segment_ids.push(0);
            self.enc.attention_mask.push(0);
            self.enc.word_alignment.push(None);
        }
        self.enc.segment_words = segment_words;
        self.enc
    }
}

/// Builds a vocabulary of at most `size` tokens from whitespace-separated
/// text.
///
/// The starting alphabet holds every word-initial character and every
/// `##`-prefixed continuation character of the corpus. Merges pick the most
/// frequent adjacent pair (ties broken by the lexicographically smallest
/// pair) and stop when the size is reached or no pair is left.
pub fn build_vocab<I, S>(corpus: I, size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
    for text in corpus {
        for w in text.as_ref().split_whitespace() {
            if w == MASK_SURFACE || w.chars().count() > MAX_CHARS_PER_WORD {
                continue;
            }
            *word_freq.entry(w.to_string()).or_insert(0) += 1;
        }
    }

    let mut words: Vec<(Vec<String>, usize)> = word_freq
        .into_iter()
        .map(|(w, f)| {
            let pieces = w
                .chars()
                .enumerate()
                .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONTINUATION_PREFIX}{c}") })
                .collect();
            (pieces, f)
        })
        .collect();

    let alphabet: BTreeSet<String> = words.iter().flat_map(|(p, _)| p.iter().cloned()).collect();
    let floor = SPECIAL_TOKENS.len() + alphabet.len();
    if size < floor {
        return Err(Error::InvalidArgument(format!(
            "vocabulary size {size} is below the {floor} specials and characters of the corpus"
        )));
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut known: BTreeSet<String> = tokens.iter().cloned().collect();
    for a in alphabet {
        if known.insert(a.clone()) {
            tokens.push(a);
        }
    }

    while tokens.len() < size {
        let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (pieces, f) in &words {
            for w in pieces.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += f;
            }
        }
        // BTreeMap iteration is ascending, so the first maximum is the
        // lexicographically smallest pair among ties.
        let best = pairs
            .iter()
            .fold(None::<((&str, &str), usize)>, |best, (&pair, &count)| match best {
                Some((_, c)) if c >= count => best,
                _ => Some((pair, count)),
            });
        let Some(((left, right), _)) = best else { break };
        let (left, right) = (left.to_string(), right.to_string());
        let merged = format!("{left}{}", right.strip_prefix(CONTINUATION_PREFIX).unwrap_or(&right));

        for (pieces, _) in &mut words {
            let mut i = 0;
            while i + 1 < pieces.len() {
                if pieces[i] == left && pieces[i + 1] == right {
                    pieces[i] = merged.clone();
                    pieces.remove(i + 1);
                }
                i += 1;
            }
        }
        if known.insert(merged.clone()) {
            tokens.push(merged);
        }
    }

    let specials = SpecialIds {
        pad: 0,
        unk: 1,
        cls: 2,
        sep: 3,
        mask: 4,
    };
    Vocab::from_tokens(tokens, specials)
}
