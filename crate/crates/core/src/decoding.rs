//! Candidate-suffix decoders over a [`LanguageModel`].
//!
//! Four strategies: greedy, top-k sampling, length-synchronous beam search,
//! and contrastive search with a degeneration penalty. Every operation is a
//! pure function of (model, arguments, seed); ties break toward the lowest
//! token id so results are identical across platforms and thread counts.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::lm::{cosine, LanguageModel};
use crate::seeds::{self, STREAM_DECODE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    TopkSample,
    Beam,
    Contrastive,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "topk_sample" => Ok(Self::TopkSample),
            "beam" => Ok(Self::Beam),
            "contrastive" => Ok(Self::Contrastive),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?}; expected greedy, topk_sample, beam, or contrastive"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::Greedy => "greedy",
            Self::TopkSample => "topk_sample",
            Self::Beam => "beam",
            Self::Contrastive => "contrastive",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub strategy: Strategy,
    pub suffix_len: usize,
    /// Generations per prefix; greedy always yields exactly one.
    pub num_generations: usize,
    /// Degeneration penalty weight for contrastive search.
    pub alpha: f64,
    /// Candidate pool size (contrastive) or sampling restriction (top-k).
    pub k: usize,
    pub beam_width: usize,
    pub seed: u64,
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if self.suffix_len == 0 {
            return Err(Error::Config("suffix_len must be at least 1".into()));
        }
        if self.num_generations == 0 {
            return Err(Error::Config("num_generations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        Ok(())
    }
}

/// One decoded suffix. `score` is the summed model log-probability of the
/// emitted tokens, regardless of strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub suffix: Vec<TokenId>,
    pub score: f64,
}

fn ln_p(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).ln()
}

fn argmax_tie_lowest(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate().skip(1) {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest entries, ordered by probability descending
/// then index ascending.
fn top_k_indices(dist: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_unstable_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn greedy_decode<M: LanguageModel + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    suffix_len: usize,
) -> Generation {
    let mut context = prefix.to_vec();
    let mut suffix = Vec::with_capacity(suffix_len);
    let mut score = 0.0;
    for _ in 0..suffix_len {
        let dist = model.next_dist(&context);
        let tok = argmax_tie_lowest(&dist);
        score += ln_p(dist[tok]);
        suffix.push(tok as TokenId);
        context.push(tok as TokenId);
    }
    Generation { suffix, score }
}

/// `m` sequences sampled from the top-`k` renormalized next-token
/// distribution. Generation `g` draws from its own RNG stream, so the list
/// is deterministic per (seed, index) and stable under any evaluation order.
pub fn topk_sample<M: LanguageModel + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    suffix_len: usize,
    k: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<Generation>> {
    if k == 0 || k > model.vocab_size() {
        return Err(Error::Argument(format!(
            "sampling k must be in 1..={}, got {k}",
            model.vocab_size()
        )));
    }
    let mut out = Vec::with_capacity(m);
    for g in 0..m {
        let mut rng = seeds::stream_rng(seed, &[g as u64]);
        let mut context = prefix.to_vec();
        let mut suffix = Vec::with_capacity(suffix_len);
        let mut score = 0.0;
        for _ in 0..suffix_len {
            let dist = model.next_dist(&context);
            let pool = top_k_indices(&dist, k);
            let tok = sample_from_pool(&dist, &pool, &mut rng);
            score += ln_p(dist[tok]);
            suffix.push(tok as TokenId);
            context.push(tok as TokenId);
        }
        out.push(Generation { suffix, score });
    }
    Ok(out)
}

fn sample_from_pool<R: Rng>(dist: &[f64], pool: &[usize], rng: &mut R) -> usize {
    let total: f64 = pool.iter().map(|&i| dist[i]).sum();
    if total <= 0.0 {
        return pool[0];
    }
    let r = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for &i in pool {
        acc += dist[i];
        if r < acc {
            return i;
        }
    }
    *pool.last().unwrap()
}

/// Length-synchronous beam search maximizing summed log-probability.
/// Beams come back sorted by score descending, ties by lexicographic
/// token order ascending.
pub fn beam_search<M: LanguageModel + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    suffix_len: usize,
    beam_width: usize,
    m: usize,
) -> Result<Vec<Generation>> {
    if beam_width < m {
        return Err(Error::Argument(format!(
            "beam_width {beam_width} cannot be smaller than requested generations {m}"
        )));
    }
    if beam_width == 0 {
        return Err(Error::Argument("beam_width must be at least 1".into()));
    }
    let mut beams = vec![Generation { suffix: Vec::new(), score: 0.0 }];
    let mut context = Vec::with_capacity(prefix.len() + suffix_len);
    for _ in 0..suffix_len {
        let mut expanded = Vec::with_capacity(beams.len() * model.vocab_size());
        for beam in &beams {
            context.clear();
            context.extend_from_slice(prefix);
            context.extend_from_slice(&beam.suffix);
            let dist = model.next_dist(&context);
            for (tok, &p) in dist.iter().enumerate() {
                let mut suffix = Vec::with_capacity(beam.suffix.len() + 1);
                suffix.extend_from_slice(&beam.suffix);
                suffix.push(tok as TokenId);
                expanded.push(Generation { suffix, score: beam.score + ln_p(p) });
            }
        }
        expanded.sort_unstable_by(|a, b| {
            b.score.partial_cmp(&a.score).unwrap().then_with(|| a.suffix.cmp(&b.suffix))
        });
        expanded.truncate(beam_width);
        beams = expanded;
    }
    beams.truncate(m);
    Ok(beams)
}

struct ContrastiveState<'m, M: ?Sized> {
    model: &'m M,
    alpha: f64,
    k: usize,
    /// Representations of every context token seen so far.
    context_reprs: Vec<Vec<f64>>,
}

impl<'m, M: LanguageModel + ?Sized> ContrastiveState<'m, M> {
    fn new(model: &'m M, prefix: &[TokenId], alpha: f64, k: usize) -> Result<Self> {
        let mut state =
            Self { model, alpha, k, context_reprs: Vec::with_capacity(prefix.len()) };
        for &t in prefix {
            state.push_repr(t)?;
        }
        Ok(state)
    }

    fn push_repr(&mut self, token: TokenId) -> Result<()> {
        self.context_reprs.push(self.model.token_repr(token)?.to_vec());
        Ok(())
    }

    /// Degeneration penalty: the maximum similarity of `token` to any
    /// context token, zero when the context is empty.
    fn max_similarity(&self, token: TokenId) -> Result<f64> {
        let repr = self.model.token_repr(token)?;
        let mut best = 0.0f64;
        for (i, ctx) in self.context_reprs.iter().enumerate() {
            let sim = cosine(repr, ctx);
            if i == 0 || sim > best {
                best = sim;
            }
        }
        Ok(best)
    }

    /// Pick from the top-k pool of `dist` by the contrastive objective,
    /// ties toward the lowest token id.
    fn choose(&self, dist: &[f64]) -> Result<usize> {
        let pool = top_k_indices(dist, self.k);
        let mut best_tok = usize::MAX;
        let mut best_score = f64::NEG_INFINITY;
        for &tok in &pool {
            let sim = self.max_similarity(tok as TokenId)?;
            let score = (1.0 - self.alpha) * dist[tok] - self.alpha * sim;
            if score > best_score || (score == best_score && tok < best_tok) {
                best_score = score;
                best_tok = tok;
            }
        }
        Ok(best_tok)
    }
}

/// Deterministic contrastive search: each step picks, among the top-k
/// next tokens, the one maximizing `(1-alpha) * P(v|ctx)` minus `alpha`
/// times its highest similarity to any context token (prefix included).
pub fn contrastive_search<M: LanguageModel + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    suffix_len: usize,
    alpha: f64,
    k: usize,
) -> Result<Generation> {
    validate_contrastive(alpha, k)?;
    let mut state = ContrastiveState::new(model, prefix, alpha, k)?;
    let mut context = prefix.to_vec();
    let mut suffix = Vec::with_capacity(suffix_len);
    let mut score = 0.0;
    for _ in 0..suffix_len {
        let dist = model.next_dist(&context);
        let tok = state.choose(&dist)?;
        score += ln_p(dist[tok]);
        suffix.push(tok as TokenId);
        context.push(tok as TokenId);
        state.push_repr(tok as TokenId)?;
    }
    Ok(Generation { suffix, score })
}

fn validate_contrastive(alpha: f64, k: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    Ok(())
}

/// Continue contrastively after forcing `first` as the first suffix token.
fn contrastive_continue<M: LanguageModel + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    first: TokenId,
    first_ln_p: f64,
    suffix_len: usize,
    alpha: f64,
    k: usize,
) -> Result<Generation> {
    let mut state = ContrastiveState::new(model, prefix, alpha, k)?;
    let mut context = prefix.to_vec();
    let mut suffix = Vec::with_capacity(suffix_len);
    let mut score = first_ln_p;
    suffix.push(first);
    context.push(first);
    state.push_repr(first)?;
    for _ in 1..suffix_len {
        let dist = model.next_dist(&context);
        let tok = state.choose(&dist)?;
        score += ln_p(dist[tok]);
        suffix.push(tok as TokenId);
        context.push(tok as TokenId);
        state.push_repr(tok as TokenId)?;
    }
    Ok(Generation { suffix, score })
}

/// Multi-candidate contrastive decoding. Generation 0 is the plain search;
/// generations 1..m-1 sample their first token from the top-k renormalized
/// distribution and continue deterministically. Since a forced first token
/// fixes the whole sequence, continuations are memoized per distinct first
/// token; results are identical to decoding each generation from scratch.
pub fn contrastive_multi<M: LanguageModel + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    suffix_len: usize,
    alpha: f64,
    k: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<Generation>> {
    validate_contrastive(alpha, k)?;
    if m == 0 {
        return Err(Error::Argument("num_generations must be at least 1".into()));
    }
    if suffix_len == 0 {
        return Err(Error::Argument("suffix_len must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(m);
    let plain = contrastive_search(model, prefix, suffix_len, alpha, k)?;
    let mut by_first: HashMap<TokenId, Generation> = HashMap::new();
    by_first.insert(plain.suffix[0], plain.clone());
    out.push(plain);

    if m > 1 {
        let first_dist = model.next_dist(prefix);
        let pool = top_k_indices(&first_dist, k);
        for g in 1..m {
            let mut rng = seeds::stream_rng(seed, &[g as u64]);
            let first = sample_from_pool(&first_dist, &pool, &mut rng) as TokenId;
            let gen = match by_first.get(&first) {
                Some(g) => g.clone(),
                None => {
                    let gen = contrastive_continue(
                        model,
                        prefix,
                        first,
                        ln_p(first_dist[first as usize]),
                        suffix_len,
                        alpha,
                        k,
                    )?;
                    by_first.insert(first, gen.clone());
                    gen
                }
            };
            out.push(gen);
        }
    }
    Ok(out)
}

/// Decode every candidate for one sample. The per-sample RNG stream is
/// derived from `params.seed` and `sample_id`, so samples can be decoded
/// concurrently in any order without changing any result.
pub fn decode_sample<M: LanguageModel + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    sample_id: u32,
    params: &DecodeParams,
) -> Result<Vec<Generation>> {
    params.validate()?;
    let seed = seeds::mix(params.seed, &[STREAM_DECODE, sample_id as u64]);
    match params.strategy {
        Strategy::Greedy => Ok(vec![greedy_decode(model, prefix, params.suffix_len)]),
        Strategy::TopkSample => topk_sample(
            model,
            prefix,
            params.suffix_len,
            params.k,
            params.num_generations,
            seed,
        ),
        Strategy::Beam => beam_search(
            model,
            prefix,
            params.suffix_len,
            params.beam_width,
            params.num_generations,
        ),
        Strategy::Contrastive => contrastive_multi(
            model,
            prefix,
            params.suffix_len,
            params.alpha,
            params.k,
            params.num_generations,
            seed,
        ),
    }
}

/// One row of the generations file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub sample_id: u32,
    pub gen_index: usize,
    pub suffix: Vec<TokenId>,
    pub score: f64,
}

pub fn write_generations_jsonl(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_generations_jsonl(path: &Path) -> Result<Vec<GenerationRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
