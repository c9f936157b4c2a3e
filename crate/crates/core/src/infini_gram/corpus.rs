use super::{NgramError, Result};

/// Token ids split into documents.
///
/// `doc_boundaries` holds the exclusive end position of every document, so
/// the last boundary always equals the corpus length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenCorpus {
    tokens: Vec<u32>,
    doc_boundaries: Vec<usize>,
    vocab_size: u32,
}

impl TokenCorpus {
    /// Validates the invariants. A trailing run of tokens after the last
    /// boundary is treated as one more document.
    pub fn new(tokens: Vec<u32>, mut doc_boundaries: Vec<usize>, vocab_size: u32) -> Result<Self> {
        if tokens.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        if let Some((position, &token)) = tokens.iter().enumerate().find(|(_, &t)| t >= vocab_size)
        {
            return Err(NgramError::TokenOutOfRange {
                token,
                position,
                vocab_size,
            });
        }
        if doc_boundaries.windows(2).any(|w| w[0] >= w[1])
            || doc_boundaries.first() == Some(&0)
            || doc_boundaries.last().is_some_and(|&b| b > tokens.len())
        {
            return Err(NgramError::BadBoundaries);
        }
        if doc_boundaries.last() != Some(&tokens.len()) {
            doc_boundaries.push(tokens.len());
        }
        Ok(Self {
            tokens,
            doc_boundaries,
            vocab_size,
        })
    }

    /// One document per inner vector; empty documents are dropped. The
    /// vocabulary defaults to `max token + 1`.
    pub fn from_documents(docs: &[Vec<u32>], vocab_size: Option<u32>) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut bounds = Vec::new();
        for doc in docs.iter().filter(|d| !d.is_empty()) {
            tokens.extend_from_slice(doc);
            bounds.push(tokens.len());
        }
        let vocab = vocab_size.unwrap_or_else(|| tokens.iter().max().map_or(0, |m| m + 1));
        Self::new(tokens, bounds, vocab)
    }

    /// Parses newline-delimited documents of space-separated decimal ids.
    pub fn parse_text(text: &str, vocab_size: Option<u32>) -> Result<Self> {
        let mut docs = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let doc = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<u32>().map_err(|_| NgramError::Parse {
                        line: ln + 1,
                        text: tok.to_string(),
                    })
                })
                .collect::<Result<Vec<u32>>>()?;
            docs.push(doc);
        }
        Self::from_documents(&docs, vocab_size)
    }

    /// A single document.
    pub fn single(tokens: Vec<u32>) -> Result<Self> {
        Self::from_documents(&[tokens], None)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn doc_boundaries(&self) -> &[usize] {
        &self.doc_boundaries
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Exclusive end of the document containing each position.
    pub(crate) fn doc_ends(&self) -> Vec<usize> {
        let mut ends = Vec::with_capacity(self.tokens.len());
        let mut start = 0;
        for &end in &self.doc_boundaries {
            ends.extend(std::iter::repeat_n(end, end - start));
            start = end;
        }
        ends
    }

    pub fn documents(&self) -> impl Iterator<Item = &[u32]> {
        let mut start = 0;
        self.doc_boundaries.iter().map(move |&end| {
            let doc = &self.tokens[start..end];
            start = end;
            doc
        })
    }
}
