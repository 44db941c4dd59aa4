//! Interpolated n-gram language model.
//!
//! Exposes the three capabilities the attack needs from a target model:
//! a next-token distribution, a sequence loss, and token representations
//! for the contrastive decoder's similarity term.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TokenId};
use crate::error::{Error, Result};
use crate::seeds::{self, STREAM_EMBED};

/// Maximum model order; contexts pack into a u128 as 16-bit fields.
pub const MAX_ORDER: usize = 8;
/// Maximum vocabulary trainable with dense co-occurrence embeddings.
pub const MAX_VOCAB: usize = 8192;

pub const DEFAULT_ORDER: usize = 5;
pub const DEFAULT_ADD_K: f64 = 0.01;
pub const DEFAULT_EMBED_DIM: usize = 32;

/// Default interpolation weights: doubling per order, so the longest
/// observed context dominates while short orders keep smoothing sane.
pub fn default_lambdas(order: usize) -> Vec<f64> {
    (0..order).map(|i| (1u64 << i.min(63)) as f64).collect()
}

/// Query surface of a trained model.
///
/// Implementations must be safe for unlimited concurrent readers.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Probability of every token given `context`; sums to 1.
    /// Only the trailing tokens the model can condition on are used.
    fn next_dist(&self, context: &[TokenId]) -> Vec<f64>;

    /// Dense representation of one token.
    fn token_repr(&self, token: TokenId) -> Result<&[f64]>;

    fn repr_dim(&self) -> usize;

    /// Mean per-token negative log-likelihood of `continuation` after `prefix`.
    fn sequence_loss(&self, prefix: &[TokenId], continuation: &[TokenId]) -> Result<f64> {
        if continuation.is_empty() {
            return Err(Error::Argument("sequence_loss needs a non-empty continuation".into()));
        }
        let mut context = prefix.to_vec();
        let mut total = 0.0;
        for &tok in continuation {
            let dist = self.next_dist(&context);
            let p = dist
                .get(tok as usize)
                .copied()
                .ok_or_else(|| Error::Argument(format!("token {tok} outside vocabulary")))?;
            total += -(p.max(f64::MIN_POSITIVE)).ln();
            context.push(tok);
        }
        Ok(total / continuation.len() as f64)
    }
}

/// Count table for one n-gram order, laid out as flat sorted arrays.
///
/// `keys[i]` is the packed context, `totals[i]` its occurrence count, and
/// `succ_offsets[i]..succ_offsets[i+1]` indexes its successor tokens/counts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct OrderTable {
    context_len: usize,
    keys: Vec<u128>,
    totals: Vec<u64>,
    succ_offsets: Vec<u32>,
    succ_tokens: Vec<TokenId>,
    succ_counts: Vec<u32>,
}

impl OrderTable {
    fn lookup(&self, key: u128) -> Option<(u64, &[TokenId], &[u32])> {
        let i = self.keys.binary_search(&key).ok()?;
        let lo = self.succ_offsets[i] as usize;
        let hi = self.succ_offsets[i + 1] as usize;
        Some((self.totals[i], &self.succ_tokens[lo..hi], &self.succ_counts[lo..hi]))
    }
}

fn pack(context: &[TokenId]) -> u128 {
    let mut key = 0u128;
    for &t in context {
        key = (key << 16) | t as u128;
    }
    key
}

/// Trained interpolated n-gram model with token co-occurrence embeddings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NGramModel {
    order: usize,
    add_k: f64,
    lambdas: Vec<f64>,
    vocab_size: usize,
    tables: Vec<OrderTable>,
    embed_dim: usize,
    /// Row-major `vocab_size x embed_dim`, rows L2-normalized.
    embeddings: Vec<f64>,
}

fn validate_hyperparams(order: usize, add_k: f64, lambdas: &[f64]) -> Result<Vec<f64>> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::Config(format!("order must be in 1..={MAX_ORDER}, got {order}")));
    }
    if !(add_k > 0.0) {
        return Err(Error::Config(format!("add_k must be positive, got {add_k}")));
    }
    if lambdas.len() != order {
        return Err(Error::Config(format!(
            "need {order} interpolation weights, got {}",
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|&l| l < 0.0 || !l.is_finite()) {
        return Err(Error::Config("interpolation weights must be non-negative and finite".into()));
    }
    let sum: f64 = lambdas.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Config("interpolation weights must not all be zero".into()));
    }
    Ok(lambdas.iter().map(|l| l / sum).collect())
}

/// Tabulate counts for every order 1..=`order` and build embeddings.
pub fn train_ngram(
    corpus: &Corpus,
    order: usize,
    add_k: f64,
    lambdas: &[f64],
    embed_dim: usize,
    seed: u64,
) -> Result<NGramModel> {
    let lambdas = validate_hyperparams(order, add_k, lambdas)?;
    let vocab_size = corpus.vocab.len();
    if vocab_size == 0 || vocab_size > MAX_VOCAB {
        return Err(Error::Training(format!("vocab size {vocab_size} outside 1..={MAX_VOCAB}")));
    }
    if embed_dim == 0 {
        return Err(Error::Config("embed_dim must be positive".into()));
    }
    if corpus.docs.iter().all(|d| d.is_empty()) {
        return Err(Error::Training("corpus has no tokens".into()));
    }
    for doc in &corpus.docs {
        if let Some(&t) = doc.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::Training(format!("token id {t} outside vocab of {vocab_size}")));
        }
    }

    let mut tables = Vec::with_capacity(order);
    for n in 1..=order {
        let context_len = n - 1;
        let mut counts: HashMap<(u128, TokenId), u32> = HashMap::new();
        for doc in &corpus.docs {
            for t in context_len..doc.len() {
                let key = pack(&doc[t - context_len..t]);
                *counts.entry((key, doc[t])).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<((u128, TokenId), u32)> = counts.into_iter().collect();
        entries.sort_unstable();

        let mut table = OrderTable {
            context_len,
            keys: Vec::new(),
            totals: Vec::new(),
            succ_offsets: vec![0],
            succ_tokens: Vec::new(),
            succ_counts: Vec::new(),
        };
        for ((key, tok), count) in entries {
            if table.keys.last() != Some(&key) {
                table.keys.push(key);
                table.totals.push(0);
                table.succ_offsets.push(*table.succ_offsets.last().unwrap());
            }
            *table.totals.last_mut().unwrap() += count as u64;
            *table.succ_offsets.last_mut().unwrap() += 1;
            table.succ_tokens.push(tok);
            table.succ_counts.push(count);
        }
        tables.push(table);
    }

    let embeddings = build_embeddings(corpus, vocab_size, embed_dim, seed);
    Ok(NGramModel { order, add_k, lambdas, vocab_size, tables, embed_dim, embeddings })
}

/// PPMI co-occurrence rows (window +/-2), projected to `embed_dim` with a
/// seeded Rademacher matrix and L2-normalized. Tokens with no co-occurrence
/// fall back to a seeded unit vector so every id has a valid representation.
fn build_embeddings(corpus: &Corpus, vocab_size: usize, embed_dim: usize, seed: u64) -> Vec<f64> {
    let v = vocab_size;
    let mut cooc = vec![0u32; v * v];
    for doc in &corpus.docs {
        for i in 0..doc.len() {
            for off in 1..=2usize {
                if i + off >= doc.len() {
                    break;
                }
                let (a, b) = (doc[i] as usize, doc[i + off] as usize);
                cooc[a * v + b] += 1;
                cooc[b * v + a] += 1;
            }
        }
    }
    let row_sums: Vec<f64> = (0..v)
        .map(|a| (0..v).map(|b| cooc[a * v + b] as f64).sum())
        .collect();
    let total: f64 = row_sums.iter().sum();

    let scale = 1.0 / (embed_dim as f64).sqrt();
    let mut rng = seeds::stream_rng(seed, &[STREAM_EMBED]);
    let projection: Vec<f64> = (0..v * embed_dim)
        .map(|_| if rng.gen::<bool>() { scale } else { -scale })
        .collect();

    let mut out = vec![0.0; v * embed_dim];
    for a in 0..v {
        let row = &mut out[a * embed_dim..(a + 1) * embed_dim];
        if row_sums[a] > 0.0 {
            for b in 0..v {
                let c = cooc[a * v + b] as f64;
                if c == 0.0 {
                    continue;
                }
                let pmi = (c * total / (row_sums[a] * row_sums[b])).ln();
                if pmi <= 0.0 {
                    continue;
                }
                let g = &projection[b * embed_dim..(b + 1) * embed_dim];
                for (o, gj) in row.iter_mut().zip(g) {
                    *o += pmi * gj;
                }
            }
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in row.iter_mut() {
                *x /= norm;
            }
        } else {
            let mut fallback = seeds::stream_rng(seed, &[STREAM_EMBED, 1 + a as u64]);
            for x in row.iter_mut() {
                *x = if fallback.gen::<bool>() { scale } else { -scale };
            }
        }
    }
    out
}

impl NGramModel {
    /// Model with no counts: the next-token distribution is exactly uniform.
    pub fn untrained(vocab_size: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 || embed_dim == 0 {
            return Err(Error::Config("untrained model needs positive vocab and embed_dim".into()));
        }
        let scale = 1.0 / (embed_dim as f64).sqrt();
        let mut embeddings = vec![0.0; vocab_size * embed_dim];
        for (a, row) in embeddings.chunks_mut(embed_dim).enumerate() {
            let mut rng = seeds::stream_rng(seed, &[STREAM_EMBED, 1 + a as u64]);
            for x in row.iter_mut() {
                *x = if rng.gen::<bool>() { scale } else { -scale };
            }
        }
        Ok(Self {
            order: 1,
            add_k: 1.0,
            lambdas: vec![1.0],
            vocab_size,
            tables: vec![OrderTable {
                context_len: 0,
                keys: Vec::new(),
                totals: Vec::new(),
                succ_offsets: vec![0],
                succ_tokens: Vec::new(),
                succ_counts: Vec::new(),
            }],
            embed_dim,
            embeddings,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, bincode::serialize(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(bincode::deserialize(&fs::read(path)?)?)
    }

    /// Mean perplexity of the model over its own (or any) corpus.
    pub fn corpus_perplexity(&self, corpus: &Corpus) -> f64 {
        let mut nll = 0.0;
        let mut tokens = 0usize;
        for doc in &corpus.docs {
            for t in 0..doc.len() {
                let dist = self.next_dist(&doc[..t]);
                nll += -(dist[doc[t] as usize].max(f64::MIN_POSITIVE)).ln();
                tokens += 1;
            }
        }
        if tokens == 0 {
            return f64::NAN;
        }
        (nll / tokens as f64).exp()
    }
}

impl LanguageModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_dist(&self, context: &[TokenId]) -> Vec<f64> {
        let v = self.vocab_size;
        let kv = self.add_k * v as f64;
        let mut dist = vec![0.0; v];
        let mut uniform_acc = 0.0;
        for (table, &lambda) in self.tables.iter().zip(&self.lambdas) {
            if lambda == 0.0 {
                continue;
            }
            let entry = if context.len() >= table.context_len {
                table.lookup(pack(&context[context.len() - table.context_len..]))
            } else {
                None
            };
            match entry {
                Some((total, tokens, counts)) => {
                    let denom = total as f64 + kv;
                    uniform_acc += lambda * self.add_k / denom;
                    for (&tok, &c) in tokens.iter().zip(counts) {
                        dist[tok as usize] += lambda * c as f64 / denom;
                    }
                }
                None => uniform_acc += lambda / v as f64,
            }
        }
        for p in dist.iter_mut() {
            *p += uniform_acc;
        }
        dist
    }

    fn token_repr(&self, token: TokenId) -> Result<&[f64]> {
        let i = token as usize;
        if i >= self.vocab_size {
            return Err(Error::Argument(format!(
                "token id {token} outside vocab of {}",
                self.vocab_size
            )));
        }
        Ok(&self.embeddings[i * self.embed_dim..(i + 1) * self.embed_dim])
    }

    fn repr_dim(&self) -> usize {
        self.embed_dim
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocab;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn corpus_from_docs(vocab_size: usize, docs: Vec<Vec<TokenId>>) -> Corpus {
        Corpus { vocab: Vocab::numeric(vocab_size), docs, canaries: BTreeMap::new() }
    }

    /// a=0, b=1 in a two-token vocabulary.
    fn bigram_toy() -> NGramModel {
        let corpus = corpus_from_docs(2, vec![vec![0, 1, 0, 1, 0]]);
        train_ngram(&corpus, 2, 1.0, &[0.0, 1.0], 4, 9).unwrap()
    }

    #[test]
    fn bigram_counts_match_hand_tally() {
        let model = bigram_toy();
        // a -> b occurs twice out of two continuations of a.
        let dist = model.next_dist(&[0]);
        assert!((dist[1] - 0.75).abs() < 1e-12);
        assert!((dist[0] - 0.25).abs() < 1e-12);
        // b -> a occurs twice out of two continuations of b.
        let dist = model.next_dist(&[1]);
        assert!((dist[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn repeated_token_corpus_prefers_that_token() {
        let corpus = corpus_from_docs(4, vec![vec![2, 2, 2, 2]]);
        let model = train_ngram(&corpus, 2, 0.01, &[1.0, 1.0], 4, 0).unwrap();
        let dist = model.next_dist(&[2]);
        let argmax = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 2);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = corpus_from_docs(8, vec![vec![0, 1, 2, 3, 4, 5], vec![5, 4, 3, 2]]);
        let a = train_ngram(&corpus, 3, 0.5, &[1.0, 2.0, 4.0], 8, 11).unwrap();
        let b = train_ngram(&corpus, 3, 0.5, &[1.0, 2.0, 4.0], 8, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_model_is_uniform() {
        let model = NGramModel::untrained(256, 8, 3).unwrap();
        let dist = model.next_dist(&[5, 6, 7]);
        for &p in &dist {
            assert!((p - 1.0 / 256.0).abs() < 1e-15);
        }
    }

    #[test]
    fn distributions_normalize() {
        let corpus = corpus_from_docs(8, vec![vec![0, 1, 2, 1, 0, 3, 7, 6, 5]]);
        let model = train_ngram(&corpus, 4, 0.01, &[1.0, 2.0, 4.0, 8.0], 8, 2).unwrap();
        for ctx in [&[][..], &[1], &[0, 1], &[7, 7, 7, 7, 7]] {
            let dist = model.next_dist(ctx);
            let sum: f64 = dist.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "sum {sum} for {ctx:?}");
            assert!(dist.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn unigram_only_weights_ignore_context() {
        let corpus = corpus_from_docs(8, vec![vec![0, 0, 1, 2, 3, 0, 1]]);
        let model = train_ngram(&corpus, 3, 0.1, &[1.0, 0.0, 0.0], 4, 0).unwrap();
        assert_eq!(model.next_dist(&[3, 2]), model.next_dist(&[0, 0]));
        assert_eq!(model.next_dist(&[]), model.next_dist(&[7]));
    }

    #[test]
    fn sequence_loss_identities() {
        let model = bigram_toy();
        // P(b|a) = 0.75 under pure-bigram weights.
        let loss = model.sequence_loss(&[0], &[1]).unwrap();
        assert!((loss - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((loss - 0.2877).abs() < 1e-4);

        let uniform = NGramModel::untrained(256, 4, 0).unwrap();
        let loss = uniform.sequence_loss(&[1, 2], &[3, 4, 5]).unwrap();
        assert!((loss - (256f64).ln()).abs() < 1e-12);
        assert!((loss - 5.545).abs() < 1e-3);

        assert!(uniform.sequence_loss(&[1], &[]).is_err());
    }

    #[test]
    fn loss_zero_under_certainty() {
        // Deterministic chain 0 -> 1 -> 2 with pure-bigram weights and tiny
        // smoothing gives loss within smoothing distance of zero.
        let corpus = corpus_from_docs(4, vec![vec![0, 1, 2]; 50]);
        let model = train_ngram(&corpus, 2, 1e-9, &[0.0, 1.0], 4, 0).unwrap();
        let loss = model.sequence_loss(&[0], &[1, 2]).unwrap();
        assert!(loss < 1e-8, "loss {loss}");
    }

    #[test]
    fn empty_corpus_fails_training() {
        let corpus = corpus_from_docs(4, vec![]);
        assert!(matches!(
            train_ngram(&corpus, 2, 0.01, &[1.0, 1.0], 4, 0),
            Err(Error::Training(_))
        ));
        let corpus = corpus_from_docs(4, vec![vec![], vec![]]);
        assert!(matches!(
            train_ngram(&corpus, 2, 0.01, &[1.0, 1.0], 4, 0),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn reprs_are_unit_norm_and_self_similar() {
        let corpus = corpus_from_docs(16, vec![vec![0, 1, 2, 3, 0, 1, 2, 3]]);
        let model = train_ngram(&corpus, 2, 0.01, &[1.0, 1.0], 16, 5).unwrap();
        for t in 0..16 {
            let r = model.token_repr(t).unwrap();
            let norm: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "token {t} norm {norm}");
            assert!((cosine(r, r) - 1.0).abs() < 1e-9);
        }
        assert!(model.token_repr(16).is_err());
    }

    #[test]
    fn cooccurrence_raises_similarity() {
        // Pairwise counts: C(0,1)=C(0,2)=C(1,2)=20, C(3,3)=30, so with
        // row sums (40,40,40,30) and total 150 every PPMI entry above is
        // ln(1.875). Rows 0 and 1 then have cosine 0.5 before projection
        // while rows 2 and 3 have disjoint support (cosine 0); tokens 2 and
        // 3 never share a window.
        let mut docs = vec![vec![0, 1]; 20];
        docs.extend(vec![vec![0, 2]; 20]);
        docs.extend(vec![vec![1, 2]; 20]);
        docs.extend(vec![vec![3, 3]; 15]);
        let corpus = corpus_from_docs(4, docs);
        let model = train_ngram(&corpus, 2, 0.01, &[1.0, 1.0], 64, 12).unwrap();
        let sim_ab = cosine(model.token_repr(0).unwrap(), model.token_repr(1).unwrap());
        let sim_cd = cosine(model.token_repr(2).unwrap(), model.token_repr(3).unwrap());
        assert!(sim_ab > 0.2, "co-occurring pair similarity {sim_ab} lost under projection");
        assert!(
            sim_cd <= sim_ab,
            "never co-occurring pair ({sim_cd}) should not exceed always co-occurring pair ({sim_ab})"
        );
    }

    #[test]
    fn model_file_roundtrips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = corpus_from_docs(8, vec![vec![0, 1, 2, 3, 4, 5, 6, 7, 0, 2, 4]]);
        let model = train_ngram(&corpus, 3, 0.01, &[1.0, 2.0, 4.0], 8, 3).unwrap();
        let p1 = dir.path().join("m1.bin");
        let p2 = dir.path().join("m2.bin");
        model.save(&p1).unwrap();
        model.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let loaded = NGramModel::load(&p1).unwrap();
        assert_eq!(model, loaded);
        for ctx in [&[][..], &[0], &[1, 2], &[7, 0, 2]] {
            assert_eq!(model.next_dist(ctx), loaded.next_dist(ctx));
        }
    }

    #[test]
    fn hyperparameter_validation() {
        let corpus = corpus_from_docs(4, vec![vec![0, 1]]);
        assert!(train_ngram(&corpus, 0, 0.01, &[], 4, 0).is_err());
        assert!(train_ngram(&corpus, 1, 0.0, &[1.0], 4, 0).is_err());
        assert!(train_ngram(&corpus, 2, 0.01, &[1.0], 4, 0).is_err());
        assert!(train_ngram(&corpus, 2, 0.01, &[-1.0, 2.0], 4, 0).is_err());
        assert!(train_ngram(&corpus, 2, 0.01, &[0.0, 0.0], 4, 0).is_err());
        assert!(train_ngram(&corpus, 2, 0.01, &[1.0, 1.0], 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn next_dist_always_normalizes(
            seed in 0u64..1000,
            ctx in proptest::collection::vec(0u32..8, 0..6),
        ) {
            let mut rng = seeds::stream_rng(seed, &[77]);
            let doc: Vec<TokenId> = (0..100).map(|_| rng.gen_range(0..8)).collect();
            let corpus = corpus_from_docs(8, vec![doc]);
            let model = train_ngram(&corpus, 3, 0.05, &[1.0, 2.0, 4.0], 4, seed).unwrap();
            let dist = model.next_dist(&ctx);
            let sum: f64 = dist.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(dist.iter().all(|&p| p > 0.0));
        }
    }
}
