//! Tokenization and word-embedding lookup.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Lowercase, drop every character that is neither alphanumeric nor
/// whitespace, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Word vectors indexed by token.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    vectors: Matrix<f32>,
}

impl EmbeddingTable {
    pub fn new(tokens: Vec<String>, vectors: Matrix<f32>) -> Result<Self> {
        if tokens.len() != vectors.rows() {
            return Err(Error::Shape(format!(
                "{} tokens but {} vectors",
                tokens.len(),
                vectors.rows()
            )));
        }
        let mut vocab = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if vocab.insert(t.clone(), i).is_some() {
                return Err(Error::Embedding {
                    path: "<memory>".into(),
                    line: i + 1,
                    message: format!("duplicate token `{t}`"),
                });
            }
        }
        Ok(Self {
            vocab,
            tokens,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> Option<&[f32]> {
        self.vocab.get(token).map(|&i| self.vectors.row(i))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, t) in self.tokens.iter().enumerate() {
            let mut line = t.clone();
            for v in self.vectors.row(i) {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Vector width of an embedding file, read from its first non-empty line.
pub fn detect_embedding_dim(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let n = line.split_whitespace().count();
        if n == 1 {
            return Err(Error::Embedding {
                path: path.display().to_string(),
                line: i + 1,
                message: "token without a vector".into(),
            });
        }
        if n > 1 {
            return Ok(n - 1);
        }
    }
    Err(Error::Embedding {
        path: path.display().to_string(),
        line: 0,
        message: "empty embedding file".into(),
    })
}

/// Load a whitespace-separated `token v1 ... vE` text file.
pub fn load_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Embedding {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut tokens = Vec::new();
    let mut vocab = HashMap::new();
    let mut data = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(i + 1, format!("unreadable line: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-empty line").to_string();
        let values: Vec<f32> = fields
            .map(|f| f.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(i + 1, format!("bad number: {e}")))?;
        if values.len() != dim {
            return Err(err(
                i + 1,
                format!("expected {dim} values for `{token}`, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(i + 1, format!("non-finite value for `{token}`")));
        }
        if vocab.insert(token.clone(), tokens.len()).is_some() {
            return Err(err(i + 1, format!("duplicate token `{token}`")));
        }
        tokens.push(token);
        data.extend(values);
    }
    let vectors = Matrix::from_vec(tokens.len(), dim, data);
    Ok(EmbeddingTable {
        vocab,
        tokens,
        vectors,
    })
}

/// Concatenated question/answer embedding `[phi_q ; phi_a]`, `L × E`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSequence {
    pub tokens: Vec<String>,
    pub matrix: Matrix<f32>,
    pub question_len: usize,
    pub answer_len: usize,
}

/// Embed question tokens followed by answer tokens. Unknown tokens map to
/// the zero vector.
pub fn embed_qa(q_tokens: &[String], a_tokens: &[String], table: &EmbeddingTable) -> Result<EmbeddedSequence> {
    if q_tokens.is_empty() {
        return Err(Error::Shape("question has no tokens".into()));
    }
    if a_tokens.is_empty() {
        return Err(Error::Shape("answer has no tokens".into()));
    }
    let dim = table.dim();
    let tokens: Vec<String> = q_tokens.iter().chain(a_tokens).cloned().collect();
    let mut data = Vec::with_capacity(tokens.len() * dim);
    for t in &tokens {
        match table.lookup(t) {
            Some(v) => data.extend_from_slice(v),
            None => data.extend(std::iter::repeat(0.0).take(dim)),
        }
    }
    Ok(EmbeddedSequence {
        matrix: Matrix::from_vec(tokens.len(), dim, data),
        tokens,
        question_len: q_tokens.len(),
        answer_len: a_tokens.len(),
    })
}
