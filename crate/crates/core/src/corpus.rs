//! Dataset ingestion and text preprocessing.
//!
//! Raw documents go through [`clean`] (markup removal, lowercasing, residue
//! stripping with emoticons protected), then [`tokenize`] (whitespace split and
//! removal of a small stopword subset), then [`clip_pad`] which maps tokens to
//! embedding rows and fixes the length.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

/// Emoticons that survive cleaning verbatim, longest first so that `:-)` wins over `:-`.
pub const SMILEYS: [&str; 6] = [":-(", ":-)", ":(", ":)", ":P", ":D"];

/// The discarded stopword subset.
pub const STOPWORDS: [&str; 12] = [
    "for", "an", "as", "by", "the", "these", "those", "this", "of", "at", "that", "a",
];

/// Contraction residues and negation fragments that must never be filtered.
pub const RESIDUES: [&str; 9] = ["s", "t", "m", "ll", "d", "couldn", "don", "hadn", "didn"];

/// Characters kept inside words after lowercasing; everything else separates tokens.
fn is_word_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, ':' | '(' | ')' | '-')
}

fn is_edge_residue(c: char) -> bool {
    matches!(c, ':' | '(' | ')' | '-')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub text: String,
    pub label: u8,
}

impl RawDocument {
    pub fn new(text: impl Into<String>, label: u8) -> Result<Self> {
        let text = text.into();
        if label > 1 {
            return Err(Error::Data(format!("label must be 0 or 1, got {label}")));
        }
        if text.trim().is_empty() {
            return Err(Error::Data("empty document text".into()));
        }
        Ok(RawDocument { text, label })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDocument {
    pub tokens: Vec<String>,
    pub label: u8,
}

/// A fixed-length row-index document ready for embedding lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedDocument {
    pub indices: Vec<usize>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusConfig {
    pub used_length: usize,
    pub stopwords: BTreeSet<String>,
    pub preserve: BTreeSet<String>,
}

impl CorpusConfig {
    pub fn new(used_length: usize) -> Result<Self> {
        if used_length == 0 {
            return Err(Error::Config("used length must be positive".into()));
        }
        let stopwords: BTreeSet<String> = STOPWORDS.iter().map(|s| s.to_string()).collect();
        let preserve: BTreeSet<String> = SMILEYS
            .iter()
            .chain(RESIDUES.iter())
            .map(|s| s.to_string())
            .collect();
        debug_assert!(stopwords.is_disjoint(&preserve));
        Ok(CorpusConfig {
            used_length,
            stopwords,
            preserve,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub doc_count: usize,
    pub min_len: usize,
    pub avg_len: f64,
    pub max_len: usize,
}

fn strip_markup(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('<') {
        match rest[open..].find('>') {
            Some(close) => {
                out.push_str(&rest[..open]);
                out.push(' ');
                rest = &rest[open + close + 1..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    out
}

fn flush_word(word: &mut String, tokens: &mut Vec<String>) {
    let trimmed = word.trim_matches(is_edge_residue);
    if !trimmed.is_empty() {
        tokens.push(trimmed.to_string());
    }
    word.clear();
}

fn clean_tokens(text: &str) -> Vec<String> {
    let text = strip_markup(text);
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut rest = text.as_str();
    while let Some(c) = rest.chars().next() {
        if let Some(smiley) = SMILEYS.iter().find(|s| rest.starts_with(**s)) {
            flush_word(&mut word, &mut tokens);
            tokens.push(smiley.to_string());
            rest = &rest[smiley.len()..];
            continue;
        }
        let lower = c.to_ascii_lowercase();
        if is_word_char(lower) {
            word.push(lower);
        } else {
            flush_word(&mut word, &mut tokens);
        }
        rest = &rest[c.len_utf8()..];
    }
    flush_word(&mut word, &mut tokens);
    tokens
}

/// Removes `<...>` markup, lowercases, and strips non-alphanumeric residue.
///
/// Emoticons from [`SMILEYS`] are kept verbatim. Characters outside
/// `[a-z0-9:()-]` act as separators, so `don't` becomes `don t`; leftover
/// `:()-` at word edges are trimmed.
pub fn clean(text: &str) -> String {
    clean_tokens(text).join(" ")
}

/// Splits cleaned text on whitespace and drops the stopword subset.
pub fn tokenize(text: &str, cfg: &CorpusConfig) -> Vec<String> {
    text.split_whitespace()
        .filter(|t| !cfg.stopwords.contains(*t))
        .map(str::to_string)
        .collect()
}

/// `clean` followed by `tokenize`.
pub fn preprocess(doc: &RawDocument, cfg: &CorpusConfig) -> TokenizedDocument {
    TokenizedDocument {
        tokens: tokenize(&clean(&doc.text), cfg),
        label: doc.label,
    }
}

/// Maps tokens to table rows, keeping the first `n` and right-padding with `pad_index`.
pub fn clip_pad(tokens: &[String], n: usize, pad_index: usize, vocab: &EmbeddingTable) -> Vec<usize> {
    let mut out: Vec<usize> = tokens.iter().take(n).map(|t| vocab.index_of(t)).collect();
    out.resize(n, pad_index);
    out
}

pub fn index_corpus(docs: &[TokenizedDocument], n: usize, vocab: &EmbeddingTable) -> Vec<IndexedDocument> {
    docs.iter()
        .map(|d| IndexedDocument {
            indices: clip_pad(&d.tokens, n, vocab.pad_index(), vocab),
            label: d.label,
        })
        .collect()
}

pub fn length_stats(corpus: &[TokenizedDocument]) -> Result<LengthStats> {
    if corpus.is_empty() {
        return Err(Error::NoData("length statistics of an empty corpus".into()));
    }
    let lens = corpus.iter().map(|d| d.tokens.len());
    let total: usize = lens.clone().sum();
    Ok(LengthStats {
        doc_count: corpus.len(),
        min_len: lens.clone().min().unwrap_or(0),
        avg_len: total as f64 / corpus.len() as f64,
        max_len: lens.max().unwrap_or(0),
    })
}

fn parse_label(s: &str, line: usize) -> Result<u8> {
    match s.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse {
            line,
            msg: format!("label must be 0 or 1, got {other:?}"),
        }),
    }
}

/// Parses `<label>\t<text>` records. Blank lines are skipped.
pub fn parse_labeled_tsv(content: &str) -> Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "expected <label>\\t<text>".into(),
        })?;
        let label = parse_label(label, line_no)?;
        let doc = RawDocument::new(text, label).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

fn read_class_dir(dir: &Path, label: u8, docs: &mut Vec<RawDocument>) -> Result<()> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    for p in paths {
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let text = String::from_utf8_lossy(&bytes);
        if text.trim().is_empty() {
            continue;
        }
        docs.push(RawDocument::new(text.into_owned(), label)?);
    }
    Ok(())
}

/// Loads a labeled dataset from a TSV file or from a directory with `pos/` and `neg/`.
///
/// Directory layouts yield the negative documents first, each class in file-name order.
pub fn load_dataset(path: &Path) -> Result<Vec<RawDocument>> {
    let docs = if path.is_dir() {
        let mut docs = Vec::new();
        read_class_dir(&path.join("neg"), 0, &mut docs)?;
        read_class_dir(&path.join("pos"), 1, &mut docs)?;
        docs
    } else {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_labeled_tsv(&content)?
    };
    if docs.is_empty() {
        return Err(Error::NoData(format!("{} holds no documents", path.display())));
    }
    Ok(docs)
}

/// One line per document: the label followed by the row indices, space separated.
pub fn format_token_index(docs: &[IndexedDocument]) -> String {
    let mut out = String::new();
    for d in docs {
        write!(out, "{}", d.label).unwrap();
        for i in &d.indices {
            write!(out, " {i}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_token_index(content: &str) -> Result<Vec<IndexedDocument>> {
    let mut docs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        let mut fields = line.split_whitespace();
        let Some(label) = fields.next() else { continue };
        let label = parse_label(label, line_no)?;
        let indices = fields
            .map(|f| {
                f.parse::<usize>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad index {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        docs.push(IndexedDocument { indices, label });
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> CorpusConfig {
        CorpusConfig::new(5).unwrap()
    }

    #[test]
    fn clean_examples() {
        assert_eq!(clean("good <br/> phone"), "good phone");
        assert_eq!(clean("GREAT :)"), "great :)");
        assert_eq!(clean(""), "");
        assert_eq!(clean("I don't like it :-( at all :P"), "i don t like it :-( at all :P");
        assert_eq!(clean("(batman, superman)"), "batman superman");
        assert_eq!(clean("co-writer/director"), "co-writer director");
        assert_eq!(clean("it's <i>really</i> good:D"), "it s really good :D");
    }

    #[test]
    fn unterminated_markup_is_text() {
        assert_eq!(clean("a < b"), "a b");
    }

    #[test]
    fn tokenize_examples() {
        let c = cfg();
        assert_eq!(tokenize("that movie was great :)", &c), ["movie", "was", "great", ":)"]);
        assert!(tokenize("the a of", &c).is_empty());
        assert_eq!(tokenize("don t like", &c), ["don", "t", "like"]);
    }

    #[test]
    fn stopwords_and_preserved_are_disjoint() {
        let c = cfg();
        assert!(c.stopwords.is_disjoint(&c.preserve));
        assert!(CorpusConfig::new(0).is_err());
    }

    #[test]
    fn length_stats_examples() {
        let doc = |n: usize| TokenizedDocument {
            tokens: vec!["w".to_string(); n],
            label: 0,
        };
        let s = length_stats(&[doc(1), doc(3), doc(5)]).unwrap();
        assert_eq!((s.min_len, s.avg_len, s.max_len), (1, 3.0, 5));
        let s = length_stats(&[doc(10)]).unwrap();
        assert_eq!((s.min_len, s.avg_len, s.max_len), (10, 10.0, 10));
        assert!(matches!(length_stats(&[]), Err(Error::NoData(_))));
    }

    #[test]
    fn tsv_parsing() {
        let docs = parse_labeled_tsv("1\tgood film\n\n0\tbad film\n").unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].label, 0);
        assert!(matches!(parse_labeled_tsv("2\tx"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_labeled_tsv("1\tok\nnotab"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_labeled_tsv("1\t   ").is_err());
    }

    #[test]
    fn directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        for (class, name, text) in [("pos", "b.txt", "great"), ("pos", "a.txt", "fine"), ("neg", "x.txt", "awful")] {
            let d = dir.path().join(class);
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join(name), text).unwrap();
        }
        let docs = load_dataset(dir.path()).unwrap();
        let got: Vec<_> = docs.iter().map(|d| (d.label, d.text.as_str())).collect();
        assert_eq!(got, [(0, "awful"), (1, "fine"), (1, "great")]);
    }

    #[test]
    fn token_index_format() {
        let docs = vec![
            IndexedDocument { indices: vec![3, 0, 0], label: 1 },
            IndexedDocument { indices: vec![1, 2, 5], label: 0 },
        ];
        let text = format_token_index(&docs);
        assert_eq!(text, "1 3 0 0\n0 1 2 5\n");
        assert_eq!(parse_token_index(&text).unwrap(), docs);
    }

    fn word() -> impl Strategy<Value = String> {
        prop_oneof![
            prop::sample::select(STOPWORDS.to_vec()).prop_map(str::to_string),
            prop::sample::select(RESIDUES.to_vec()).prop_map(str::to_string),
            prop::sample::select(SMILEYS.to_vec()).prop_map(str::to_string),
            "[a-zA-Z]{1,8}",
        ]
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(s in "[a-zA-Z0-9 :;()\\-<>/'\",.!?PD\u{e9}\t]{0,60}") {
            let once = clean(&s);
            prop_assert_eq!(clean(&once), once);
        }

        #[test]
        fn tokens_never_hold_stopwords_or_brackets(words in prop::collection::vec(word(), 0..30)) {
            let c = cfg();
            let raw = words.join(" ");
            for t in tokenize(&clean(&raw), &c) {
                prop_assert!(!c.stopwords.contains(&t));
                prop_assert!(!t.contains('<') && !t.contains('>'));
            }
        }

        #[test]
        fn smiley_survives_pipeline(words in prop::collection::vec(word(), 0..20), at in 0usize..20) {
            let mut words = words;
            let at = at.min(words.len());
            words.insert(at, ":)".to_string());
            let doc = RawDocument::new(words.join(" "), 1).unwrap();
            let toks = preprocess(&doc, &cfg()).tokens;
            prop_assert!(toks.iter().any(|t| t == ":)"));
        }
    }
}
