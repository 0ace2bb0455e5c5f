//! Synthetic datasets with a planted lexical rule.
//!
//! Every sentence reads `<subject> <verb> <determiner> <object>`; the aspect
//! is the verb. The object noun alone decides the label: each class owns a
//! disjoint noun list (concrete nouns for literal, abstract nouns for
//! metaphorical; four tiers for LCC scores). Verbs are shared by all
//! classes, so the aspect word by itself carries no signal.

use rand::seq::IndexedRandom;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, Dataset, Label, Record};
use crate::Result;

const SUBJECTS: &[&str] = &["she", "he", "they", "we", "John", "Mary", "the man", "the girl"];
const VERBS: &[&str] = &["grasp", "attack", "devour", "absorb", "build", "break", "carry", "shape", "drown", "kill"];
const DETERMINERS: &[&str] = &["the", "a", "his", "her", "their"];

/// Object nouns per class, lowest class first.
const OBJECTS: [&[&str]; 4] = [
    &["apple", "rope", "table", "stone", "bread", "door", "wall", "cup"],
    &["idea", "fear", "hope", "theory", "problem", "grief", "doubt", "chance"],
    &["economy", "silence", "freedom", "debate", "memory", "anger", "truth", "policy"],
    &["future", "justice", "morale", "crisis", "reason", "faith", "sorrow", "wisdom"],
];

fn classes(corpus: Corpus) -> usize {
    corpus.scheme().num_classes()
}

/// `n` records with labels cycling through the classes, so class counts
/// differ by at most one. Record order is shuffled with `seed`.
pub fn planted_dataset(n: usize, corpus: Corpus, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = classes(corpus);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % c;
        let mut sentence: Vec<String> = SUBJECTS
            .choose(&mut rng)
            .expect("non-empty")
            .split(' ')
            .map(str::to_string)
            .collect();
        let aspect = sentence.len();
        sentence.push(VERBS.choose(&mut rng).expect("non-empty").to_string());
        sentence.push(DETERMINERS.choose(&mut rng).expect("non-empty").to_string());
        sentence.push(OBJECTS[class].choose(&mut rng).expect("non-empty").to_string());
        let label = Label::new(corpus.scheme(), class as i8)?;
        records.push(Record::new(format!("synth-{i:05}"), sentence, aspect, Some(aspect + 2), label, corpus)?);
    }
    records.shuffle(&mut rng);
    Dataset::new(format!("planted-{}", corpus.as_str()), corpus, records)
}

/// Every word the generator can emit, for building a vocabulary that keeps
/// all of them whole.
pub fn planted_lexicon() -> Vec<&'static str> {
    let mut words: Vec<&str> = SUBJECTS.iter().flat_map(|s| s.split(' ')).collect();
    words.extend_from_slice(VERBS);
    words.extend_from_slice(DETERMINERS);
    for list in OBJECTS {
        words.extend_from_slice(list);
    }
    words
}

/// The class the planted rule assigns to a sentence, if its object noun is
/// known.
pub fn planted_class(sentence: &[String], corpus: Corpus) -> Option<usize> {
    let object = sentence.last()?;
    (0..classes(corpus)).find(|&c| OBJECTS[c].contains(&object.as_str()))
}
