//! Frozen pretrained word vectors.
//!
//! Row 0 is the padding row and row 1 the out-of-vocabulary row; both are all
//! zeros. Word rows follow in file order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor2;

pub const PAD_INDEX: usize = 0;
pub const OOV_INDEX: usize = 1;
const RESERVED_ROWS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Vec<f32>,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` pairs. Later duplicates of a word are ignored.
    pub fn from_pairs<I, S>(dim: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut table = EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            matrix: vec![0.0; RESERVED_ROWS * dim],
        };
        for (line, (word, vec)) in pairs.into_iter().enumerate() {
            if vec.len() != dim {
                return Err(Error::DimensionMismatch {
                    line: line + 1,
                    expected: dim,
                    found: vec.len(),
                });
            }
            table.push(word.into(), &vec);
        }
        Ok(table)
    }

    fn push(&mut self, word: String, vec: &[f32]) {
        if self.index.contains_key(&word) {
            return;
        }
        self.index.insert(word.clone(), self.rows());
        self.words.push(word);
        self.matrix.extend_from_slice(vec);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    /// Total rows including PAD and OOV.
    pub fn rows(&self) -> usize {
        self.matrix.len() / self.dim
    }

    pub fn pad_index(&self) -> usize {
        PAD_INDEX
    }

    pub fn oov_index(&self) -> usize {
        OOV_INDEX
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn index_of(&self, word: &str) -> usize {
        self.get(word).unwrap_or(OOV_INDEX)
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.matrix[index * self.dim..(index + 1) * self.dim]
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.get(word).map(|i| self.row(i))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Writes word rows back in the text format `load_vectors` reads.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for v in self.row(i + RESERVED_ROWS) {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn parse_vector_line(line: &str, line_no: usize) -> Result<(String, Vec<f32>)> {
    let mut fields = line.split(' ').filter(|f| !f.is_empty());
    let word = fields.next().ok_or_else(|| Error::Parse {
        line: line_no,
        msg: "expected a word followed by numbers".into(),
    })?;
    let values = fields
        .map(|f| {
            f.parse::<f32>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("non-numeric value {f:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("word {word:?} has no values"),
        });
    }
    Ok((word.to_string(), values))
}

/// Reads `word v1 .. vd` records; the dimension comes from the first record.
pub fn read_vectors(reader: impl BufRead, limit: Option<usize>) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        if let (Some(limit), Some(t)) = (limit, table.as_ref()) {
            if t.vocab_size() >= limit {
                break;
            }
        }
        let (word, values) = parse_vector_line(line, line_no)?;
        let t = table.get_or_insert_with(|| EmbeddingTable {
            dim: values.len(),
            words: Vec::new(),
            index: HashMap::new(),
            matrix: vec![0.0; RESERVED_ROWS * values.len()],
        });
        if values.len() != t.dim {
            return Err(Error::DimensionMismatch {
                line: line_no,
                expected: t.dim,
                found: values.len(),
            });
        }
        t.push(word, &values);
    }
    match table {
        Some(t) if limit != Some(0) => Ok(t),
        _ => Err(Error::NoVectors),
    }
}

pub fn load_vectors(path: &Path, limit: Option<usize>) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_vectors(BufReader::new(file), limit)
}

/// Stacks the table rows of `doc` into an `n x d` matrix.
pub fn embed(doc: &[usize], table: &EmbeddingTable) -> Result<Tensor2> {
    let rows = table.rows();
    let mut t = Tensor2::zeros(doc.len(), table.dim());
    for (r, &idx) in doc.iter().enumerate() {
        if idx >= rows {
            return Err(Error::Shape(format!("index {idx} out of range for {rows} embedding rows")));
        }
        for (dst, &src) in t.row_mut(r).iter_mut().zip(table.row(idx)) {
            *dst = src as f64;
        }
    }
    Ok(t)
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of vectors of length {} and {}", u.len(), v.len())));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Data("cosine of a zero-norm vector".into()));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn cosine_f32(u: &[f32], v: &[f32]) -> Result<f64> {
    let u: Vec<f64> = u.iter().map(|&x| x as f64).collect();
    let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    cosine(&u, &v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::clip_pad;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn table() -> EmbeddingTable {
        read_vectors(
            "that 1 0 0 0\nmovie 0 1 0 0\nwas 0 0 1 0\ngreat 0 0 0 1\n".as_bytes(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn load_counts_rows() {
        let t = read_vectors("cat 1 2 3 4\ndog 5 6 7 8\nemu 0 0 0 1\n".as_bytes(), None).unwrap();
        assert_eq!((t.rows(), t.dim(), t.vocab_size()), (5, 4, 3));
        assert!(t.row(PAD_INDEX).iter().all(|&v| v == 0.0));
        assert!(t.row(OOV_INDEX).iter().all(|&v| v == 0.0));
        assert_eq!(t.vector("dog").unwrap(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(read_vectors("".as_bytes(), None), Err(Error::NoVectors)));
        assert!(matches!(
            read_vectors("cat 1.0 2.0\ndog 1.0\n".as_bytes(), None),
            Err(Error::DimensionMismatch { line: 2, expected: 2, found: 1 })
        ));
        assert!(matches!(read_vectors("cat 1.0 x\n".as_bytes(), None), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_vectors("cat\n".as_bytes(), None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn limit_truncates_vocabulary() {
        let t = read_vectors("a 1\nb 2\nc 3\n".as_bytes(), Some(2)).unwrap();
        assert_eq!(t.words(), ["a", "b"]);
        assert!(matches!(read_vectors("a 1\n".as_bytes(), Some(0)), Err(Error::NoVectors)));
    }

    #[test]
    fn embed_lookup() {
        let t = table();
        let m = embed(&[PAD_INDEX, PAD_INDEX], &t).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 4));
        assert!(m.data().iter().all(|&v| v == 0.0));

        let idx = t.get("that").unwrap();
        assert_eq!(embed(&[idx], &t).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);

        let doc: Vec<usize> = ["that", "movie", "was", "great"].iter().map(|w| t.index_of(w)).collect();
        let m = embed(&doc, &t).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(m.get(r, c), if r == c { 1.0 } else { 0.0 });
            }
        }
        assert!(matches!(embed(&[t.rows()], &t), Err(Error::Shape(_))));
    }

    #[test]
    fn clip_pad_cases() {
        let t = table();
        let toks = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let (a, b) = (t.index_of("that"), t.index_of("movie"));
        assert_eq!(clip_pad(&toks(&["that", "movie"]), 5, PAD_INDEX, &t), [a, b, 0, 0, 0]);
        let seven = toks(&["that", "movie", "was", "great", "zzz", "that", "movie"]);
        assert_eq!(clip_pad(&seven, 5, PAD_INDEX, &t), [a, b, 4, 5, OOV_INDEX]);
        assert_eq!(clip_pad(&seven[..5], 5, PAD_INDEX, &t), [a, b, 4, 5, OOV_INDEX]);
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn embed_after_clip_pad_is_n_by_d(len in 0usize..40, n in 1usize..20) {
            let t = table();
            let toks: Vec<String> = (0..len).map(|i| ["that", "zz", "great"][i % 3].to_string()).collect();
            let m = embed(&clip_pad(&toks, n, PAD_INDEX, &t), &t).unwrap();
            prop_assert_eq!((m.rows(), m.cols()), (n, 4));
        }

        #[test]
        fn dump_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 3), 1..20)) {
            let pairs: Vec<_> = rows.iter().enumerate().map(|(i, v)| (format!("w{i}"), v.clone())).collect();
            let t = EmbeddingTable::from_pairs(3, pairs).unwrap();
            let back = read_vectors(t.dump().as_bytes(), None).unwrap();
            prop_assert_eq!(back.dump(), t.dump());
            prop_assert!(back.matrix.iter().zip(&t.matrix).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in prop::collection::vec(-10.0f64..10.0, 4),
            v in prop::collection::vec(-10.0f64..10.0, 4),
            a in 0.1f64..100.0,
            b in 0.1f64..100.0,
        ) {
            prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
            let c = cosine(&u, &v).unwrap();
            prop_assert!((c - cosine(&v, &u).unwrap()).abs() < 1e-12);
            let au: Vec<f64> = u.iter().map(|x| a * x).collect();
            let bv: Vec<f64> = v.iter().map(|x| b * x).collect();
            prop_assert!((c - cosine(&au, &bv).unwrap()).abs() < 1e-9);
        }
    }
}
