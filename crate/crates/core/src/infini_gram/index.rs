use std::cmp::Ordering;

use serde::Serialize;

use super::{NgramError, Result, TokenCorpus};

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Immutable suffix array over a [`TokenCorpus`].
///
/// Suffixes are truncated at their document end, and a document end sorts
/// below every token, so a suffix that is a proper prefix of another sorts
/// first. Matches therefore never cross document boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuffixIndex {
    corpus: TokenCorpus,
    sa: Vec<usize>,
    doc_end: Vec<usize>,
    built_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NgramPrediction {
    /// Dense distribution over the vocabulary.
    #[serde(rename = "probs")]
    pub token_probs: Vec<f64>,
    pub suffix_len_used: usize,
    pub context_count: u64,
}

impl NgramPrediction {
    pub fn prob(&self, token: u32) -> f64 {
        self.token_probs.get(token as usize).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointLikelihood {
    /// Σ ln max(p_i, LOG_FLOOR).
    pub loglik: f64,
    /// Raw per-token probabilities, zeros preserved.
    pub per_token: Vec<f64>,
}

impl SuffixIndex {
    /// Prefix-doubling construction, `O(n log² n)`.
    pub fn build(corpus: TokenCorpus) -> Result<Self> {
        let n = corpus.len();
        if n == 0 {
            return Err(NgramError::EmptyCorpus);
        }
        let doc_end = corpus.doc_ends();
        let toks = corpus.tokens();

        // rank 0 is reserved for "past the document end"
        let mut rank: Vec<usize> = toks.iter().map(|&t| t as usize + 1).collect();
        let mut sa: Vec<usize> = (0..n).collect();
        let mut next = vec![0usize; n];
        let max_doc = max_doc_len(corpus.doc_boundaries());
        let mut k = 1;
        loop {
            let key = |i: usize| (rank[i], if i + k < doc_end[i] { rank[i + k] } else { 0 });
            sa.sort_by_key(|&i| (key(i), i));
            next[sa[0]] = 1;
            for w in 1..n {
                let bump = usize::from(key(sa[w]) != key(sa[w - 1]));
                next[sa[w]] = next[sa[w - 1]] + bump;
            }
            std::mem::swap(&mut rank, &mut next);
            if rank[sa[n - 1]] == n || k >= max_doc {
                break;
            }
            k *= 2;
        }
        Ok(Self {
            built_at: n,
            corpus,
            sa,
            doc_end,
        })
    }

    /// Reassembles an index from a stored suffix array, checking that it is a
    /// permutation in suffix order. Returns `None` if it is not.
    pub fn from_parts(corpus: TokenCorpus, sa: Vec<usize>) -> Option<Self> {
        let n = corpus.len();
        if sa.len() != n {
            return None;
        }
        let mut seen = vec![false; n];
        for &p in &sa {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return None;
            }
        }
        let idx = Self {
            built_at: n,
            doc_end: corpus.doc_ends(),
            corpus,
            sa,
        };
        let sorted = idx
            .sa
            .windows(2)
            .all(|w| idx.suffix(w[0]) <= idx.suffix(w[1]));
        sorted.then_some(idx)
    }

    pub fn corpus(&self) -> &TokenCorpus {
        &self.corpus
    }

    pub fn suffix_array(&self) -> &[usize] {
        &self.sa
    }

    pub fn built_at(&self) -> usize {
        self.built_at
    }

    pub fn vocab_size(&self) -> u32 {
        self.corpus.vocab_size()
    }

    /// The suffix starting at `pos`, cut at its document end.
    pub fn suffix(&self, pos: usize) -> &[u32] {
        &self.corpus.tokens()[pos..self.doc_end[pos]]
    }

    fn head(&self, pos: usize, m: usize) -> &[u32] {
        let end = (pos + m).min(self.doc_end[pos]);
        &self.corpus.tokens()[pos..end]
    }

    /// Half-open range of suffix-array slots whose suffix starts with `pattern`.
    pub fn pattern_range(&self, pattern: &[u32]) -> (usize, usize) {
        let m = pattern.len();
        if m == 0 {
            return (0, self.sa.len());
        }
        let lo = self
            .sa
            .partition_point(|&p| self.head(p, m).cmp(pattern) == Ordering::Less);
        let hi = lo + self.sa[lo..].partition_point(|&p| self.head(p, m) == pattern);
        (lo, hi)
    }

    /// Occurrences of `pattern`; the empty pattern matches every position.
    pub fn pattern_count(&self, pattern: &[u32]) -> u64 {
        let (lo, hi) = self.pattern_range(pattern);
        (hi - lo) as u64
    }

    /// Counts of each token following `pattern`, plus their total.
    pub fn continuation_counts(&self, pattern: &[u32]) -> (Vec<u64>, u64) {
        let (lo, hi) = self.pattern_range(pattern);
        let mut counts = vec![0u64; self.vocab_size() as usize];
        let mut total = 0;
        let toks = self.corpus.tokens();
        for &p in &self.sa[lo..hi] {
            let q = p + pattern.len();
            if q < self.doc_end[p] {
                counts[toks[q] as usize] += 1;
                total += 1;
            }
        }
        (counts, total)
    }

    /// Next-token distribution from the longest context suffix that occurs
    /// with at least one continuation, falling back to corpus unigrams.
    pub fn next_token(&self, context: &[u32]) -> NgramPrediction {
        let mut best: Option<(usize, Vec<u64>, u64, u64)> = None;
        // having a continuation is monotone in suffix length, so stop at the first failure
        for len in 1..=context.len() {
            let s = &context[context.len() - len..];
            let count = self.pattern_count(s);
            if count == 0 {
                break;
            }
            let (counts, total) = self.continuation_counts(s);
            if total == 0 {
                break;
            }
            best = Some((len, counts, total, count));
        }
        match best {
            Some((len, counts, total, count)) => NgramPrediction {
                token_probs: normalize(&counts, total),
                suffix_len_used: len,
                context_count: count,
            },
            None => self.unigram(),
        }
    }

    pub fn unigram(&self) -> NgramPrediction {
        let mut counts = vec![0u64; self.vocab_size() as usize];
        for &t in self.corpus.tokens() {
            counts[t as usize] += 1;
        }
        let n = self.corpus.len() as u64;
        NgramPrediction {
            token_probs: normalize(&counts, n),
            suffix_len_used: 0,
            context_count: n,
        }
    }

    /// Joint log-likelihood of `target` given `prefix`, one token at a time.
    pub fn joint_loglik(&self, prefix: &[u32], target: &[u32]) -> Result<JointLikelihood> {
        if target.is_empty() {
            return Err(NgramError::EmptyTarget);
        }
        let mut ctx = prefix.to_vec();
        let mut per_token = Vec::with_capacity(target.len());
        let mut loglik = 0.0;
        for &t in target {
            let p = self.next_token(&ctx).prob(t);
            loglik += p.max(LOG_FLOOR).ln();
            per_token.push(p);
            ctx.push(t);
        }
        Ok(JointLikelihood { loglik, per_token })
    }
}

fn normalize(counts: &[u64], total: u64) -> Vec<f64> {
    let t = total as f64;
    counts.iter().map(|&c| c as f64 / t).collect()
}

fn max_doc_len(bounds: &[usize]) -> usize {
    let mut start = 0;
    let mut best = 0;
    for &b in bounds {
        best = best.max(b - start);
        start = b;
    }
    best
}
