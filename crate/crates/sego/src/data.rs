//! Annotated-paragraph data model and dataset / embedding IO.
//!
//! A dataset file is UTF-8 JSON lines, one paragraph per line:
//!
//! ```text
//! {"id":"p1","split":"train","sentences":[[{"w":"dad","n":true,"r":"S"},{"w":"slept"}],...]}
//! ```
//!
//! Sentence order in a record is the gold order. Tokens carry their own
//! noun/role annotations, so no parser is needed downstream.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: no usable records ({detail})")]
    EmptyDataset { path: String, detail: String },
    #[error("embedding file {path} has {found}-dimension vectors, expected {expected}")]
    EmbeddingDimension {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{0}")]
    Config(String),
}

/// Syntactic role of a noun occurrence in its sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    S,
    O,
    X,
}

impl Role {
    /// Rank under S > O > X; higher wins when an entity appears with
    /// several roles in one sentence.
    pub fn rank(self) -> u8 {
        match self {
            Role::S => 2,
            Role::O => 1,
            Role::X => 0,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::S => write!(f, "S"),
            Role::O => write!(f, "O"),
            Role::X => write!(f, "X"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased surface form.
    pub surface: String,
    pub is_noun: bool,
    /// Present iff `is_noun`.
    pub role: Option<Role>,
}

impl Token {
    pub fn word(surface: &str) -> Self {
        Token {
            surface: surface.to_lowercase(),
            is_noun: false,
            role: None,
        }
    }

    pub fn noun(surface: &str, role: Role) -> Self {
        Token {
            surface: surface.to_lowercase(),
            is_noun: true,
            role: Some(role),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Valid => write!(f, "valid"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (train|valid|test)")),
        }
    }
}

/// One training/evaluation unit: sentences stored in gold order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paragraph {
    pub id: String,
    pub split: Split,
    pub sentences: Vec<Sentence>,
}

impl Paragraph {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

// ── Line-record serialization ───────────────────────────────────────

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Serialize, Deserialize)]
struct TokenRecord {
    w: String,
    #[serde(default, skip_serializing_if = "is_false")]
    n: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<Role>,
}

#[derive(Serialize, Deserialize)]
struct ParagraphRecord {
    id: String,
    split: Split,
    sentences: Vec<Vec<TokenRecord>>,
}

/// Result of reading a dataset: parsed paragraphs plus line-addressed
/// diagnostics for anything that was repaired or rejected.
#[derive(Debug)]
pub struct LoadedDataset {
    pub paragraphs: Vec<Paragraph>,
    pub warnings: Vec<String>,
}

pub fn load_dataset(path: &Path) -> Result<LoadedDataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let loaded = parse_dataset(&text);
    if loaded.paragraphs.is_empty() {
        return Err(DataError::EmptyDataset {
            path: path.display().to_string(),
            detail: if loaded.warnings.is_empty() {
                "file is empty".to_string()
            } else {
                loaded.warnings.join("; ")
            },
        });
    }
    Ok(loaded)
}

pub fn parse_dataset(text: &str) -> LoadedDataset {
    let mut paragraphs = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ParagraphRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                warnings.push(format!("line {line_no}: rejected, malformed record: {e}"));
                continue;
            }
        };
        match record_to_paragraph(record, line_no, &mut warnings) {
            Some(p) => paragraphs.push(p),
            None => continue,
        }
    }
    LoadedDataset {
        paragraphs,
        warnings,
    }
}

fn record_to_paragraph(
    record: ParagraphRecord,
    line_no: usize,
    warnings: &mut Vec<String>,
) -> Option<Paragraph> {
    if record.sentences.is_empty() {
        warnings.push(format!("line {line_no}: rejected, paragraph has no sentences"));
        return None;
    }
    let mut sentences = Vec::with_capacity(record.sentences.len());
    for (s_idx, sent) in record.sentences.into_iter().enumerate() {
        if sent.is_empty() {
            warnings.push(format!(
                "line {line_no}: rejected, sentence {} is empty",
                s_idx + 1
            ));
            return None;
        }
        let mut tokens = Vec::with_capacity(sent.len());
        for tr in sent {
            let surface = tr.w.to_lowercase();
            let mut is_noun = tr.n;
            let mut role = tr.r;
            if role.is_some() && !is_noun {
                warnings.push(format!(
                    "line {line_no}: token `{surface}` has a role but no noun flag; treating as noun"
                ));
                is_noun = true;
            }
            if is_noun && role.is_none() {
                warnings.push(format!(
                    "line {line_no}: noun `{surface}` has no role; defaulting to X"
                ));
                role = Some(Role::X);
            }
            tokens.push(Token {
                surface,
                is_noun,
                role,
            });
        }
        sentences.push(Sentence { tokens });
    }
    Some(Paragraph {
        id: record.id,
        split: record.split,
        sentences,
    })
}

pub fn paragraph_to_line(p: &Paragraph) -> String {
    let record = ParagraphRecord {
        id: p.id.clone(),
        split: p.split,
        sentences: p
            .sentences
            .iter()
            .map(|s| {
                s.tokens
                    .iter()
                    .map(|t| TokenRecord {
                        w: t.surface.clone(),
                        n: t.is_noun,
                        r: t.role,
                    })
                    .collect()
            })
            .collect(),
    };
    serde_json::to_string(&record).expect("record serialization cannot fail")
}

pub fn serialize_dataset(paragraphs: &[Paragraph]) -> String {
    let mut out = String::new();
    for p in paragraphs {
        out.push_str(&paragraph_to_line(p));
        out.push('\n');
    }
    out
}

pub fn write_dataset(paragraphs: &[Paragraph], path: &Path) -> Result<(), DataError> {
    fs::write(path, serialize_dataset(paragraphs)).map_err(|source| DataError::Write {
        path: path.display().to_string(),
        source,
    })
}

// ── Heuristic annotation ────────────────────────────────────────────

/// Marks every token found in the lexicon as a noun with role X. A crude
/// stand-in for a real parser, good enough for synthetic corpora.
pub fn annotate_heuristic(words: &[&str], noun_lexicon: &HashSet<String>) -> Sentence {
    let tokens = words
        .iter()
        .map(|w| {
            let surface = w.to_lowercase();
            if noun_lexicon.contains(&surface) {
                Token {
                    surface,
                    is_noun: true,
                    role: Some(Role::X),
                }
            } else {
                Token {
                    surface,
                    is_noun: false,
                    role: None,
                }
            }
        })
        .collect();
    Sentence { tokens }
}

// ── Pretrained embeddings ───────────────────────────────────────────

/// Word-vector table read from a plain `word v1 .. vD` text file. Words
/// absent from the file map to the unknown vector.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
    unknown: Vec<f64>,
    padding: Vec<f64>,
}

impl EmbeddingTable {
    pub fn empty(dimension: usize) -> Self {
        EmbeddingTable {
            dimension,
            vectors: HashMap::new(),
            unknown: vec![0.0; dimension],
            padding: vec![0.0; dimension],
        }
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) {
        debug_assert_eq!(vector.len(), self.dimension);
        self.vectors.insert(word.to_string(), vector);
    }

    pub fn lookup(&self, word: &str) -> &[f64] {
        self.vectors
            .get(word)
            .map(Vec::as_slice)
            .unwrap_or(&self.unknown)
    }

    pub fn padding(&self) -> &[f64] {
        &self.padding
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub fn load_embeddings(path: &Path, dimension: usize) -> Result<(EmbeddingTable, Vec<String>), DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut table = EmbeddingTable::empty(dimension);
    let mut warnings = Vec::new();
    let mut arity_counts: HashMap<usize, usize> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        match values {
            Ok(v) if v.len() == dimension => table.insert(word, v),
            Ok(v) => {
                *arity_counts.entry(v.len()).or_insert(0) += 1;
                warnings.push(format!(
                    "line {}: skipped, {} values for `{word}` (expected {dimension})",
                    idx + 1,
                    v.len()
                ));
            }
            Err(e) => warnings.push(format!("line {}: skipped, bad number: {e}", idx + 1)),
        }
    }
    if table.is_empty() {
        if let Some((&found, _)) = arity_counts.iter().max_by_key(|(_, c)| **c) {
            return Err(DataError::EmbeddingDimension {
                path: path.display().to_string(),
                expected: dimension,
                found,
            });
        }
    }
    Ok((table, warnings))
}

// ── Vocabulary ──────────────────────────────────────────────────────

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Dense word-id map built from the training split. Id 0 is padding,
/// id 1 the unknown word.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    words: Vec<String>,
}

impl Vocabulary {
    /// Builds from training paragraphs, keeping words that occur at least
    /// `min_freq` times. Ordering is by descending frequency, ties broken
    /// lexicographically, so construction is deterministic.
    pub fn build<'a>(paragraphs: impl Iterator<Item = &'a Paragraph>, min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for p in paragraphs {
            for s in &p.sentences {
                for t in &s.tokens {
                    *counts.entry(t.surface.as_str()).or_insert(0) += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_words(ranked.into_iter().map(|(w, _)| w.to_string()))
    }

    /// Rebuilds a vocabulary from an explicit word list (checkpoint path).
    pub fn from_words(words: impl Iterator<Item = String>) -> Self {
        let mut vocab = Vocabulary {
            ids: HashMap::new(),
            words: vec!["<pad>".to_string(), "<unk>".to_string()],
        };
        for w in words {
            if !vocab.ids.contains_key(&w) {
                vocab.ids.insert(w.clone(), vocab.words.len());
                vocab.words.push(w);
            }
        }
        vocab
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK_ID)
    }

    /// All words after the two reserved slots, in id order.
    pub fn words(&self) -> &[String] {
        &self.words[2..]
    }

    /// Table size including padding and unknown rows.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_four_sentence_record() {
        let line = concat!(
            r#"{"id":"p0","split":"train","sentences":[[{"w":"a"}],[{"w":"b"}],"#,
            r#"[{"w":"c"}],[{"w":"dad","n":true,"r":"S"}]]}"#,
        );
        let loaded = parse_dataset(line);
        assert_eq!(loaded.paragraphs.len(), 1);
        let p = &loaded.paragraphs[0];
        assert_eq!(p.len(), 4);
        let dad = &p.sentences[3].tokens[0];
        assert_eq!(dad.surface, "dad");
        assert!(dad.is_noun);
        assert_eq!(dad.role, Some(Role::S));
    }

    #[test]
    fn noun_without_role_defaults_to_x_with_warning() {
        let line = r#"{"id":"p","split":"test","sentences":[[{"w":"Game","n":true}]]}"#;
        let loaded = parse_dataset(line);
        let t = &loaded.paragraphs[0].sentences[0].tokens[0];
        assert_eq!(t.surface, "game");
        assert_eq!(t.role, Some(Role::X));
        assert!(loaded.warnings[0].contains("line 1"));
    }

    #[test]
    fn empty_sentence_rejects_the_record() {
        let text = concat!(
            r#"{"id":"bad","split":"train","sentences":[[]]}"#,
            "\n",
            r#"{"id":"ok","split":"train","sentences":[[{"w":"x"}]]}"#,
        );
        let loaded = parse_dataset(text);
        assert_eq!(loaded.paragraphs.len(), 1);
        assert_eq!(loaded.paragraphs[0].id, "ok");
        assert!(loaded.warnings[0].contains("rejected"));
    }

    #[test]
    fn heuristic_annotation_marks_lexicon_words() {
        let lexicon: HashSet<String> = ["dad".to_string()].into_iter().collect();
        let s = annotate_heuristic(&["my", "dad", "slept"], &lexicon);
        assert!(!s.tokens[0].is_noun);
        assert!(s.tokens[1].is_noun);
        assert_eq!(s.tokens[1].role, Some(Role::X));
        assert!(!s.tokens[2].is_noun);

        let none = annotate_heuristic(&["no", "match"], &lexicon);
        assert!(none.tokens.iter().all(|t| !t.is_noun));

        let all = annotate_heuristic(&["dad", "dad"], &lexicon);
        assert!(all.tokens.iter().all(|t| t.is_noun));
    }

    #[test]
    fn vocabulary_reserves_pad_and_unk() {
        let p = Paragraph {
            id: "v".into(),
            split: Split::Train,
            sentences: vec![Sentence {
                tokens: vec![Token::word("b"), Token::word("a"), Token::word("b")],
            }],
        };
        let v = Vocabulary::build(std::iter::once(&p), 1);
        assert_eq!(v.id("b"), 2);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("zzz"), UNK_ID);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn embedding_lookup_falls_back_to_unknown() {
        let mut t = EmbeddingTable::empty(3);
        t.insert("dog", vec![0.1, 0.2, 0.3]);
        assert_eq!(t.lookup("dog"), &[0.1, 0.2, 0.3]);
        assert_eq!(t.lookup("cat"), &[0.0, 0.0, 0.0]);
    }
}
