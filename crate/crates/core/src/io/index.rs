use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::{IoError, Result};
use crate::infini_gram::{SuffixIndex, TokenCorpus};

pub const INDEX_MAGIC: &[u8; 8] = b"SGINDEX1";

/// Layout: magic, then `vocab`, `n`, `n_docs` as u64, then `n` u32 tokens,
/// `n_docs` u64 exclusive document ends and `n` u64 suffix-array entries,
/// all little-endian.
pub fn encode_index(index: &SuffixIndex) -> Vec<u8> {
    let corpus = index.corpus();
    let n = corpus.len();
    let bounds = corpus.doc_boundaries();
    let mut out = Vec::with_capacity(32 + 4 * n + 8 * bounds.len() + 8 * n);
    out.extend_from_slice(INDEX_MAGIC);
    for v in [corpus.vocab_size() as u64, n as u64, bounds.len() as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &t in corpus.tokens() {
        out.extend_from_slice(&t.to_le_bytes());
    }
    for &b in bounds {
        out.extend_from_slice(&(b as u64).to_le_bytes());
    }
    for &p in index.suffix_array() {
        out.extend_from_slice(&(p as u64).to_le_bytes());
    }
    out
}

pub fn decode_index(bytes: &[u8]) -> Result<SuffixIndex> {
    if bytes.len() < 8 || &bytes[..8] != INDEX_MAGIC {
        return Err(IoError::BadMagic {
            expected: "SGINDEX1",
        });
    }
    if bytes.len() < 32 {
        return Err(IoError::SizeMismatch {
            expected: 32,
            actual: bytes.len() as u64,
        });
    }
    let vocab = LittleEndian::read_u64(&bytes[8..16]);
    let n = LittleEndian::read_u64(&bytes[16..24]);
    let n_docs = LittleEndian::read_u64(&bytes[24..32]);
    let expected = n
        .checked_mul(12)
        .and_then(|x| n_docs.checked_mul(8).and_then(|d| x.checked_add(d)))
        .unwrap_or(u64::MAX);
    let body = &bytes[32..];
    if expected != body.len() as u64 {
        return Err(IoError::SizeMismatch {
            expected,
            actual: body.len() as u64,
        });
    }
    let vocab = u32::try_from(vocab)
        .map_err(|_| IoError::BadIndex(format!("vocab size {vocab} too large")))?;
    let (n, n_docs) = (n as usize, n_docs as usize);
    let tokens: Vec<u32> = body[..4 * n]
        .chunks_exact(4)
        .map(LittleEndian::read_u32)
        .collect();
    let rest = &body[4 * n..];
    let to_usize = |c: &[u8]| LittleEndian::read_u64(c) as usize;
    let bounds: Vec<usize> = rest[..8 * n_docs].chunks_exact(8).map(to_usize).collect();
    let sa: Vec<usize> = rest[8 * n_docs..].chunks_exact(8).map(to_usize).collect();
    let corpus = TokenCorpus::new(tokens, bounds.clone(), vocab)?;
    if corpus.doc_boundaries() != bounds {
        return Err(IoError::BadIndex(
            "document boundaries must end at the corpus length".into(),
        ));
    }
    SuffixIndex::from_parts(corpus, sa)
        .ok_or_else(|| IoError::BadIndex("suffix array is not a sorted permutation".into()))
}

pub fn write_index(index: &SuffixIndex, path: &Path) -> Result<()> {
    std::fs::write(path, encode_index(index)).map_err(|e| IoError::io(path, e))
}

pub fn read_index(path: &Path) -> Result<SuffixIndex> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_index(&bytes)
}

/// Loads a stored index, or builds one from a text corpus of one document per
/// line with space-separated token ids. The format is chosen by magic bytes.
pub fn load_corpus_or_index(path: &Path, vocab_size: Option<u32>) -> Result<SuffixIndex> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    if bytes.starts_with(INDEX_MAGIC) {
        return decode_index(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|e| IoError::io(path, e))?;
    Ok(SuffixIndex::build(TokenCorpus::parse_text(
        &text, vocab_size,
    )?)?)
}
