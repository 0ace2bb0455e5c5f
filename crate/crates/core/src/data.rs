//! Benchmark records, TSV loaders and the stratified fold splitter.
//!
//! Every dataset is a UTF-8 TSV file with a header row. The columns depend on
//! the corpus:
//!
//! ```text
//! moh:   id  sentence  aspect_index  label        (literal | metaphorical)
//! trofi: id  sentence  aspect_index  label        (literal | nonliteral)
//! lcc:   id  sentence  aspect_index  target_index score (-1 | 0 | 1 | 2 | 3)
//! ```
//!
//! Sentences are whitespace tokenized. `aspect_index` is a 0-based word
//! position; a non-numeric value is treated as the aspect's surface form and
//! resolved to its first exact match in the sentence.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Label value LCC uses for uncertain annotations.
pub const UNCERTAIN: i8 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    BinaryMoh,
    BinaryTrofi,
    ScoreLcc,
}

impl Scheme {
    pub fn num_classes(self) -> usize {
        match self {
            Scheme::BinaryMoh | Scheme::BinaryTrofi => 2,
            Scheme::ScoreLcc => 4,
        }
    }

    pub fn is_binary(self) -> bool {
        self.num_classes() == 2
    }

    /// Canonical on-disk spelling of a label value.
    pub fn label_name(self, value: i8) -> String {
        match (self, value) {
            (Scheme::BinaryMoh, 0) | (Scheme::BinaryTrofi, 0) => "literal".into(),
            (Scheme::BinaryMoh, 1) => "metaphorical".into(),
            (Scheme::BinaryTrofi, 1) => "nonliteral".into(),
            (_, v) => v.to_string(),
        }
    }

    pub fn parse_label(self, raw: &str) -> Option<i8> {
        match self {
            Scheme::BinaryMoh => match raw {
                "literal" => Some(0),
                "metaphorical" => Some(1),
                _ => None,
            },
            Scheme::BinaryTrofi => match raw {
                "literal" => Some(0),
                "nonliteral" => Some(1),
                _ => None,
            },
            Scheme::ScoreLcc => raw.parse::<i8>().ok().filter(|v| (-1..=3).contains(v)),
        }
    }

    /// Whether `value` is a valid label (uncertain LCC scores included).
    pub fn accepts(self, value: i8) -> bool {
        match self {
            Scheme::BinaryMoh | Scheme::BinaryTrofi => value == 0 || value == 1,
            Scheme::ScoreLcc => (-1..=3).contains(&value),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    pub scheme: Scheme,
    pub value: i8,
}

impl Label {
    pub fn new(scheme: Scheme, value: i8) -> Result<Self> {
        if !scheme.accepts(value) {
            return Err(Error::InvalidArgument(format!(
                "label {value} is outside the {scheme:?} scheme"
            )));
        }
        Ok(Self { scheme, value })
    }

    pub fn is_uncertain(&self) -> bool {
        self.value == UNCERTAIN
    }

    /// Class index for classification heads; `None` for uncertain labels.
    pub fn class_index(&self) -> Option<usize> {
        (self.value >= 0).then_some(self.value as usize)
    }

    /// Binary metaphoricity: LCC scores of 1 and above count as metaphorical.
    pub fn is_metaphorical(&self) -> bool {
        self.value >= 1
    }
}

/// Which benchmark a record comes from. Doubles as the file format selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corpus {
    Moh,
    Trofi,
    Lcc,
}

impl Corpus {
    pub fn scheme(self) -> Scheme {
        match self {
            Corpus::Moh => Scheme::BinaryMoh,
            Corpus::Trofi => Scheme::BinaryTrofi,
            Corpus::Lcc => Scheme::ScoreLcc,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Corpus::Moh => "moh",
            Corpus::Trofi => "trofi",
            Corpus::Lcc => "lcc",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Corpus::Moh => "MOH",
            Corpus::Trofi => "TroFi",
            Corpus::Lcc => "LCC",
        }
    }

    fn label_column(self) -> &'static str {
        match self {
            Corpus::Lcc => "score",
            _ => "label",
        }
    }
}

impl fmt::Display for Corpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Corpus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "moh" => Ok(Corpus::Moh),
            "trofi" => Ok(Corpus::Trofi),
            "lcc" => Ok(Corpus::Lcc),
            other => Err(Error::InvalidArgument(format!("unknown dataset format {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub sentence: Vec<String>,
    pub aspect_index: usize,
    pub target_index: Option<usize>,
    pub label: Label,
    pub dataset: Corpus,
}

impl Record {
    pub fn new(
        id: impl Into<String>,
        sentence: Vec<String>,
        aspect_index: usize,
        target_index: Option<usize>,
        label: Label,
        dataset: Corpus,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |message: String| Error::InvalidRecord {
            id: id.clone(),
            message,
        };
        if sentence.is_empty() {
            return Err(invalid("empty sentence".into()));
        }
        if aspect_index >= sentence.len() {
            return Err(invalid(format!(
                "aspect index {aspect_index} out of range for {} words",
                sentence.len()
            )));
        }
        if let Some(t) = target_index {
            if t >= sentence.len() {
                return Err(invalid(format!(
                    "target index {t} out of range for {} words",
                    sentence.len()
                )));
            }
        }
        if label.scheme != dataset.scheme() {
            return Err(invalid(format!(
                "label scheme {:?} does not match corpus {dataset}",
                label.scheme
            )));
        }
        Ok(Self {
            id,
            sentence,
            aspect_index,
            target_index,
            label,
            dataset,
        })
    }

    pub fn aspect_word(&self) -> &str {
        &self.sentence[self.aspect_index]
    }

    pub fn text(&self) -> String {
        self.sentence.join(" ")
    }
}

/// Marks a record whose label was replaced by a merged revision.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub revision_id: String,
    pub previous_label: i8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub corpus: Corpus,
    pub scheme: Scheme,
    pub records: Vec<Record>,
    /// Revision provenance keyed by record id. Empty for freshly loaded data.
    #[serde(default)]
    pub provenance: BTreeMap<String, Provenance>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, corpus: Corpus, records: Vec<Record>) -> Result<Self> {
        let scheme = corpus.scheme();
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.label.scheme != scheme {
                return Err(Error::InvalidRecord {
                    id: r.id.clone(),
                    message: format!("scheme {:?} differs from dataset scheme {scheme:?}", r.label.scheme),
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidRecord {
                    id: r.id.clone(),
                    message: "duplicate id".into(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            corpus,
            scheme,
            records,
            provenance: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Label histogram keyed by raw label value.
    pub fn label_counts(&self) -> BTreeMap<i8, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.label.value).or_insert(0) += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            corpus: self.corpus,
            scheme: self.scheme,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: BTreeMap::new(),
        }
    }

    /// Writes the dataset in its corpus TSV format.
    pub fn write_tsv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .quote_style(csv::QuoteStyle::Never)
            .from_writer(writer);
        match self.corpus {
            Corpus::Lcc => w.write_record(["id", "sentence", "aspect_index", "target_index", "score"])?,
            _ => w.write_record(["id", "sentence", "aspect_index", "label"])?,
        }
        for r in &self.records {
            let aspect = r.aspect_index.to_string();
            let label = self.scheme.label_name(r.label.value);
            let text = r.text();
            match self.corpus {
                Corpus::Lcc => {
                    let target = r.target_index.map(|t| t.to_string()).unwrap_or_default();
                    w.write_record([r.id.as_str(), &text, &aspect, &target, &label])?;
                }
                _ => w.write_record([r.id.as_str(), &text, &aspect, &label])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_tsv(std::io::BufWriter::new(file))
    }
}

/// Loads a benchmark TSV file.
pub fn load_dataset(path: impl AsRef<Path>, format: Corpus) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format.as_str().to_string());
    read_dataset(file, format, name, path)
}

/// Parses TSV content; `origin` is only used in error messages.
pub fn read_dataset<R: Read>(reader: R, format: Corpus, name: String, origin: &Path) -> Result<Dataset> {
    let scheme = format.scheme();
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(reader);

    let malformed = |line: usize, message: String| Error::MalformedRow {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut required = vec!["id", "sentence", "aspect_index", format.label_column()];
    if format == Corpus::Lcc {
        required.push("target_index");
    }
    let mut cols = BTreeMap::new();
    for name in &required {
        match column(name) {
            Some(i) => {
                cols.insert(*name, i);
            }
            None if *name == "target_index" => {}
            None => return Err(malformed(1, format!("missing header column {name:?}"))),
        }
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (row, result) in rdr.records().enumerate() {
        // header is line 1
        let line = row + 2;
        let fields = result?;
        let get = |name: &str| -> Result<&str> {
            let idx = cols[name];
            fields
                .get(idx)
                .map(str::trim)
                .ok_or_else(|| malformed(line, format!("missing column {name:?}")))
        };

        let id = get("id")?;
        if id.is_empty() {
            return Err(malformed(line, "empty id".into()));
        }
        if !seen.insert(id.to_string()) {
            return Err(malformed(line, format!("duplicate id {id:?}")));
        }
        let sentence: Vec<String> = get("sentence")?.split_whitespace().map(str::to_string).collect();
        if sentence.is_empty() {
            return Err(malformed(line, "empty sentence".into()));
        }

        let aspect_raw = get("aspect_index")?;
        let aspect_index = resolve_word(&sentence, aspect_raw, "aspect")
            .map_err(|m| malformed(line, m))?;

        let target_index = if cols.contains_key("target_index") {
            let raw = fields.get(cols["target_index"]).map(str::trim).unwrap_or("");
            if raw.is_empty() {
                None
            } else {
                Some(resolve_word(&sentence, raw, "target").map_err(|m| malformed(line, m))?)
            }
        } else {
            None
        };

        let label_raw = get(format.label_column())?;
        let value = scheme
            .parse_label(label_raw)
            .ok_or_else(|| malformed(line, format!("label {label_raw:?} outside the {scheme:?} scheme")))?;

        let record = Record::new(id, sentence, aspect_index, target_index, Label { scheme, value }, format)
            .map_err(|e| malformed(line, e.to_string()))?;
        records.push(record);
    }

    Dataset::new(name, format, records)
}

fn resolve_word(sentence: &[String], raw: &str, what: &str) -> std::result::Result<usize, String> {
    if let Ok(idx) = raw.parse::<usize>() {
        if idx >= sentence.len() {
            return Err(format!(
                "{what} index {idx} out of range for {} words",
                sentence.len()
            ));
        }
        return Ok(idx);
    }
    match sentence.iter().position(|w| w == raw) {
        Some(idx) => {
            if sentence.iter().filter(|w| *w == raw).count() > 1 {
                log::warn!("{what} word {raw:?} occurs more than once; using the first occurrence");
            }
            Ok(idx)
        }
        None => Err(format!("{what} word {raw:?} not found in sentence")),
    }
}

/// Drops LCC records with the uncertain (-1) score, keeping order.
pub fn filter_uncertain(d: &Dataset) -> Dataset {
    let mut out = d.clone();
    if d.scheme == Scheme::ScoreLcc {
        out.records.retain(|r| !r.label.is_uncertain());
        out.provenance.retain(|id, _| out.records.iter().any(|r| &r.id == id));
    }
    out
}

/// Per-word binary targets: the aspect word carries the record's
/// metaphoricity, every other word is literal.
pub fn to_sequence_labels(r: &Record) -> Vec<u8> {
    let mut labels = vec![0u8; r.sentence.len()];
    if r.label.is_metaphorical() {
        labels[r.aspect_index] = 1;
    }
    labels
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub fold_of: BTreeMap<String, usize>,
    /// Label classes with fewer than `k` members; their records are still
    /// dealt round-robin but some folds receive none of them.
    pub degraded_classes: Vec<i8>,
}

impl FoldAssignment {
    /// Indices into `d.records` of the training and test parts of fold `i`,
    /// both in dataset order.
    pub fn split(&self, d: &Dataset, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (idx, r) in d.records.iter().enumerate() {
            if self.fold_of.get(&r.id) == Some(&fold) {
                test.push(idx);
            } else {
                train.push(idx);
            }
        }
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "id\tfold")?;
        for (id, fold) in &self.fold_of {
            writeln!(w, "{id}\t{fold}")?;
        }
        Ok(())
    }

    /// Parses the `id<TAB>fold` format. `k` and `seed` are not part of the
    /// file; `k` is inferred from the largest fold index.
    pub fn read_tsv<R: Read>(reader: R, seed: u64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').quoting(false).from_reader(reader);
        let mut fold_of = BTreeMap::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = || Error::InvalidArgument(format!("fold file line {}: expected id<TAB>fold", row + 2));
            let id = rec.get(0).ok_or_else(bad)?.to_string();
            let fold: usize = rec.get(1).and_then(|f| f.trim().parse().ok()).ok_or_else(bad)?;
            fold_of.insert(id, fold);
        }
        let k = fold_of.values().max().map_or(0, |m| m + 1);
        Ok(Self {
            k,
            seed,
            fold_of,
            degraded_classes: Vec::new(),
        })
    }
}

/// Stratified k-fold assignment.
///
/// Records are grouped by label value and ordered by id inside each group, so
/// the result does not depend on the order of `d.records`. Each group is
/// shuffled with a seeded generator and dealt round-robin; the dealing offset
/// carries over between groups so total fold sizes stay within one of each
/// other as well.
pub fn make_folds(d: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > d.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} records in the dataset",
            d.len()
        )));
    }

    let mut by_class: BTreeMap<i8, Vec<&str>> = BTreeMap::new();
    for r in &d.records {
        by_class.entry(r.label.value).or_default().push(r.id.as_str());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = BTreeMap::new();
    let mut degraded = Vec::new();
    let mut offset = 0usize;
    for (class, mut ids) in by_class {
        if ids.len() < k {
            degraded.push(class);
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for (j, id) in ids.iter().enumerate() {
            fold_of.insert(id.to_string(), (offset + j) % k);
        }
        offset = (offset + ids.len()) % k;
    }

    Ok(FoldAssignment {
        k,
        seed,
        fold_of,
        degraded_classes: degraded,
    })
}

/// Distinct words appearing in any sentence, in first-seen order.
pub fn vocabulary_words(d: &Dataset) -> Vec<&str> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in &d.records {
        for w in &r.sentence {
            if seen.insert(w.as_str()) {
                out.push(w.as_str());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn parse(format: Corpus, body: &str) -> Result<Dataset> {
        read_dataset(body.as_bytes(), format, "t".into(), Path::new("t.tsv"))
    }

    #[test]
    fn table_example_resolves_surface_aspect() {
        let ds = parse(
            Corpus::Moh,
            "id\tsentence\taspect_index\tlabel\nm1\tHe absorbed the knowledge or beliefs of his tribe.\tabsorbed\tmetaphorical\n",
        )
        .unwrap();
        let r = &ds.records[0];
        assert_eq!(r.aspect_index, 1);
        assert_eq!(r.label.value, 1);
        assert_eq!(r.aspect_word(), "absorbed");
    }

    #[test]
    fn single_word_sentence_is_valid() {
        let ds = parse(Corpus::Moh, "id\tsentence\taspect_index\tlabel\na\tRun\t0\tliteral\n").unwrap();
        assert_eq!(ds.records[0].sentence, vec!["Run"]);
        assert_eq!(ds.records[0].label.value, 0);
    }

    #[test]
    fn lcc_uncertain_rows_are_kept_at_load() {
        let ds = parse(
            Corpus::Lcc,
            "id\tsentence\taspect_index\ttarget_index\tscore\n\
             a\tPrices soared today\t1\t0\t3\n\
             b\tIt is fine\t1\t\t-1\n\
             c\tHe walked home\t1\t2\t0\n",
        )
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.records[1].label.is_uncertain());
        assert_eq!(ds.records[0].target_index, Some(0));
        assert_eq!(ds.records[1].target_index, None);

        let filtered = filter_uncertain(&ds);
        let labels: Vec<i8> = filtered.records.iter().map(|r| r.label.value).collect();
        assert_eq!(labels, vec![3, 0]);
    }

    #[test]
    fn filter_is_identity_without_uncertain_rows() {
        let ds = parse(
            Corpus::Lcc,
            "id\tsentence\taspect_index\ttarget_index\tscore\na\tx y\t0\t\t2\nb\tz\t0\t\t0\n",
        )
        .unwrap();
        assert_eq!(filter_uncertain(&ds), ds);
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let head = "id\tsentence\taspect_index\tlabel\n";
        let cases = [
            format!("{head}a\tone two\t0\tliteral\nb\tone two\t5\tliteral\n"),
            format!("{head}a\tone two\tthree\tliteral\n"),
            format!("{head}a\tone two\t0\tmaybe\n"),
            format!("{head}a\tone two\n"),
        ];
        let expect_line = [3, 2, 2, 2];
        for (body, line) in cases.iter().zip(expect_line) {
            match parse(Corpus::Moh, body) {
                Err(Error::MalformedRow { line: l, .. }) => assert_eq!(l, line, "{body}"),
                other => panic!("expected malformed row, got {other:?}"),
            }
        }
    }

    #[test]
    fn trofi_uses_nonliteral() {
        let body = "id\tsentence\taspect_index\tlabel\nt\tThe market crashed\t2\tnonliteral\n";
        assert_eq!(parse(Corpus::Trofi, body).unwrap().records[0].label.value, 1);
        assert!(parse(Corpus::Moh, body).is_err());
    }

    #[test]
    fn sequence_labels_follow_the_aspect() {
        let label = Label::new(Scheme::BinaryMoh, 1).unwrap();
        let r = Record::new("x", words("Her husband often abuses alcohol."), 3, None, label, Corpus::Moh).unwrap();
        assert_eq!(to_sequence_labels(&r), vec![0, 0, 0, 1, 0]);

        let lit = Record { label: Label::new(Scheme::BinaryMoh, 0).unwrap(), ..r };
        assert_eq!(to_sequence_labels(&lit), vec![0; 5]);

        let lcc = Record::new("l", words("a b c"), 1, None, Label::new(Scheme::ScoreLcc, 2).unwrap(), Corpus::Lcc).unwrap();
        assert_eq!(to_sequence_labels(&lcc), vec![0, 1, 0]);
    }

    fn binary_dataset(n: usize, positives: usize) -> Dataset {
        let records = (0..n)
            .map(|i| {
                let value = if i < positives { 1 } else { 0 };
                Record::new(
                    format!("r{i:04}"),
                    words("a b"),
                    0,
                    None,
                    Label::new(Scheme::BinaryMoh, value).unwrap(),
                    Corpus::Moh,
                )
                .unwrap()
            })
            .collect();
        Dataset::new("d", Corpus::Moh, records).unwrap()
    }

    #[test]
    fn moh_sized_folds_are_exact() {
        let ds = binary_dataset(1640, 410);
        let folds = make_folds(&ds, 10, 3).unwrap();
        for f in 0..10 {
            let (_, test) = folds.split(&ds, f);
            assert_eq!(test.len(), 164);
            let pos = test.iter().filter(|&&i| ds.records[i].label.value == 1).count();
            assert_eq!(pos, 41);
        }
        assert!(folds.degraded_classes.is_empty());
    }

    #[test]
    fn leave_one_out_and_bounds() {
        let ds = binary_dataset(7, 3);
        let folds = make_folds(&ds, 7, 0).unwrap();
        assert!(folds.fold_sizes().iter().all(|&s| s == 1));
        assert!(make_folds(&ds, 8, 0).is_err());
        assert!(make_folds(&ds, 1, 0).is_err());
    }

    #[test]
    fn folds_are_deterministic_and_order_free() {
        let ds = binary_dataset(50, 13);
        let a = make_folds(&ds, 5, 11).unwrap();
        let b = make_folds(&ds, 5, 11).unwrap();
        assert_eq!(a, b);
        let mut reversed = ds.clone();
        reversed.records.reverse();
        assert_eq!(make_folds(&reversed, 5, 11).unwrap().fold_of, a.fold_of);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let body = "id\tsentence\taspect_index\tlabel\na\tx\t0\tliteral\na\ty\t0\tliteral\n";
        assert!(matches!(parse(Corpus::Moh, body), Err(Error::MalformedRow { line: 3, .. })));
    }

    #[test]
    fn fold_tsv_round_trip() {
        let ds = binary_dataset(12, 4);
        let folds = make_folds(&ds, 3, 9).unwrap();
        let mut buf = Vec::new();
        folds.write_tsv(&mut buf).unwrap();
        let back = FoldAssignment::read_tsv(buf.as_slice(), 9).unwrap();
        assert_eq!(back.fold_of, folds.fold_of);
        assert_eq!(back.k, 3);
    }
}
