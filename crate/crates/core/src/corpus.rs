//! Synthetic token corpora with controlled sequence duplication.
//!
//! A corpus is a set of background documents drawn from an order-2 Markov
//! process, with canary sequences injected a controlled number of times.
//! Canaries are carved into prefix/suffix extraction samples downstream.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{self, STREAM_BACKGROUND, STREAM_CANARY, STREAM_INJECT, STREAM_MARKOV};

pub type TokenId = u32;

/// Tokens per background block. Blocks move together in the Markov process,
/// so tokens in one block see near-identical co-occurrence neighborhoods.
const BACKGROUND_BLOCK_SIZE: usize = 13;

/// Probability that a step continues from the predecessor token's private
/// successor pool instead of its block's successor blocks.
const BACKGROUND_MIX: f64 = 0.10;

/// Probability of an unconditioned uniform token.
const BACKGROUND_JUMP: f64 = 0.03;

/// Size of each token's private successor pool.
const BACKGROUND_PRIVATE_SUPPORT: usize = 4;

/// Token vocabulary with contiguous integer ids.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    lookup: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if lookup.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate vocab token {tok:?}")));
            }
        }
        Ok(Self { tokens, lookup })
    }

    /// Vocabulary whose tokens are the decimal ids themselves.
    pub fn numeric(size: usize) -> Self {
        Self::new((0..size).map(|i| i.to_string()).collect()).expect("numeric tokens are distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.lookup.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::new(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.tokens
    }
}

/// Parameters controlling corpus synthesis.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusSpec {
    pub vocab_size: usize,
    pub n_background_docs: usize,
    /// Background tokens per document, before canary insertion.
    pub doc_len: usize,
    pub n_canaries: usize,
    pub canary_len: usize,
    /// Duplication multiplicity per canary; length must equal `n_canaries`.
    pub dup_counts: Vec<u32>,
    pub seed: u64,
}

impl CorpusSpec {
    /// Default desk scale: finishes in seconds and yields a memorization
    /// gradient across duplication buckets.
    pub fn desk_scale(seed: u64) -> Self {
        let choices = [1u32, 2, 5, 10, 25];
        let n_canaries = 400;
        Self {
            vocab_size: 256,
            n_background_docs: 2000,
            doc_len: 200,
            n_canaries,
            canary_len: 100,
            dup_counts: (0..n_canaries).map(|i| choices[i % choices.len()]).collect(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 16 {
            return Err(Error::Config(format!(
                "vocab_size must be at least 16, got {}",
                self.vocab_size
            )));
        }
        if self.n_background_docs == 0 || self.doc_len == 0 {
            return Err(Error::Config("corpus must have at least one non-empty background document".into()));
        }
        if self.dup_counts.len() != self.n_canaries {
            return Err(Error::Config(format!(
                "dup_counts has {} entries for {} canaries",
                self.dup_counts.len(),
                self.n_canaries
            )));
        }
        if self.n_canaries > 0 {
            if self.canary_len == 0 {
                return Err(Error::Config("canary_len must be positive".into()));
            }
            if self.canary_len > self.doc_len {
                return Err(Error::Config(format!(
                    "canary_len {} exceeds doc_len {}",
                    self.canary_len, self.doc_len
                )));
            }
            if let Some(&bad) = self.dup_counts.iter().find(|&&d| d == 0) {
                return Err(Error::Config(format!("dup_counts entries must be >= 1, got {bad}")));
            }
        }
        Ok(())
    }
}

/// One injected canary sequence and its duplication count.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Canary {
    pub tokens: Vec<TokenId>,
    pub dup_count: u32,
}

/// A synthesized corpus: documents plus the canary index.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Corpus {
    pub vocab: Vocab,
    pub docs: Vec<Vec<TokenId>>,
    pub canaries: BTreeMap<u32, Canary>,
}

/// One benchmark item: a prefix the attacker sees and the suffix to recover.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ExtractionSample {
    pub sample_id: u32,
    pub prefix: Vec<TokenId>,
    pub suffix: Vec<TokenId>,
    pub dup_count: u32,
}

/// Blocks chain along a seeded random permutation, so every block has
/// exactly one primary successor and the stationary distribution stays
/// uniform across blocks.
fn block_permutation(seed: u64, n_blocks: usize) -> Vec<usize> {
    let mut rng = seeds::stream_rng(seed, &[STREAM_MARKOV, 0]);
    let mut perm: Vec<usize> = (0..n_blocks).collect();
    for i in (1..n_blocks).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// One step of the background Markov process.
///
/// The transition table is hierarchical and derived lazily from the seed, so
/// it is never stored. A step usually moves to the successor of the current
/// token's block along the block permutation; the chance of skipping one
/// block ahead depends on the block of the token two back, giving the table
/// its order-2 dependence. A per-token private pool and a uniform jump
/// component overlay the block structure.
fn background_next<R: Rng>(seed: u64, vocab_size: usize, a: TokenId, b: TokenId, rng: &mut R) -> TokenId {
    let v = vocab_size as TokenId;
    let r: f64 = rng.gen();
    if r < BACKGROUND_JUMP {
        return rng.gen_range(0..v);
    }
    if r < BACKGROUND_JUMP + BACKGROUND_MIX {
        let mut pool = seeds::stream_rng(seed, &[STREAM_MARKOV, 1, b as u64]);
        let pick = rng.gen_range(0..BACKGROUND_PRIVATE_SUPPORT);
        let mut tok = 0;
        for _ in 0..=pick {
            tok = pool.gen_range(0..v);
        }
        return tok;
    }
    let block_size = BACKGROUND_BLOCK_SIZE.min(vocab_size);
    let n_blocks = vocab_size.div_ceil(block_size);
    let (block_a, block_b) = (a as usize / block_size, b as usize / block_size);
    let perm = block_permutation(seed, n_blocks);
    let step = perm[block_b];
    let skip = perm[step];
    let mut weight = seeds::stream_rng(seed, &[STREAM_MARKOV, 2, block_a as u64, block_b as u64]);
    let skip_prob: f64 = weight.gen_range(0.10..0.35);
    let block = if rng.gen::<f64>() < skip_prob { skip } else { step };
    let lo = (block * block_size) as TokenId;
    let hi = (((block + 1) * block_size).min(vocab_size)) as TokenId;
    rng.gen_range(lo..hi)
}

fn synth_background_doc(spec: &CorpusSpec, doc_idx: usize) -> Vec<TokenId> {
    let mut rng = seeds::stream_rng(spec.seed, &[STREAM_BACKGROUND, doc_idx as u64]);
    let v = spec.vocab_size as TokenId;
    let mut doc = Vec::with_capacity(spec.doc_len);
    while doc.len() < spec.doc_len.min(2) {
        doc.push(rng.gen_range(0..v));
    }
    while doc.len() < spec.doc_len {
        let (a, b) = (doc[doc.len() - 2], doc[doc.len() - 1]);
        doc.push(background_next(spec.seed, spec.vocab_size, a, b, &mut rng));
    }
    doc
}

/// Synthesize a corpus from `spec`, generating canaries from the seed.
pub fn synth_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut canaries = Vec::with_capacity(spec.n_canaries);
    let v = spec.vocab_size as TokenId;
    for c in 0..spec.n_canaries {
        let mut rng = seeds::stream_rng(spec.seed, &[STREAM_CANARY, c as u64]);
        loop {
            let tokens: Vec<TokenId> = (0..spec.canary_len).map(|_| rng.gen_range(0..v)).collect();
            if !canaries.iter().any(|(t, _)| *t == tokens) {
                canaries.push((tokens, spec.dup_counts[c]));
                break;
            }
        }
    }
    synth_corpus_with_canaries(spec, &canaries)
}

/// Synthesize a corpus around an explicit canary set (used by the security
/// game, where membership of each canary must be controlled by the caller).
pub fn synth_corpus_with_canaries(spec: &CorpusSpec, canaries: &[(Vec<TokenId>, u32)]) -> Result<Corpus> {
    spec.validate()?;
    let mut docs: Vec<Vec<TokenId>> = (0..spec.n_background_docs)
        .map(|d| synth_background_doc(spec, d))
        .collect();

    // Insertion schedule: each copy picks a host document and a boundary
    // offset in its background text. Insertions never split a canary because
    // offsets index background boundaries only.
    let mut rng = seeds::stream_rng(spec.seed, &[STREAM_INJECT]);
    let mut insertions: Vec<Vec<(usize, usize, u32)>> = vec![Vec::new(); docs.len()];
    for (canary_id, (_, dup)) in canaries.iter().enumerate() {
        for copy in 0..*dup {
            let doc = rng.gen_range(0..docs.len());
            let pos = rng.gen_range(0..=spec.doc_len);
            insertions[doc].push((pos, canary_id, copy));
        }
    }
    for (doc, mut slots) in docs.iter_mut().zip(insertions) {
        if slots.is_empty() {
            continue;
        }
        slots.sort_unstable();
        let background = std::mem::take(doc);
        let mut out = Vec::with_capacity(background.len() + slots.len() * spec.canary_len);
        let mut slot_iter = slots.into_iter().peekable();
        for pos in 0..=background.len() {
            while slot_iter.peek().is_some_and(|&(p, _, _)| p == pos) {
                let (_, canary_id, _) = slot_iter.next().unwrap();
                out.extend_from_slice(&canaries[canary_id].0);
            }
            if pos < background.len() {
                out.push(background[pos]);
            }
        }
        *doc = out;
    }

    let canary_index = canaries
        .iter()
        .enumerate()
        .map(|(id, (tokens, dup))| (id as u32, Canary { tokens: tokens.clone(), dup_count: *dup }))
        .collect();
    Ok(Corpus {
        vocab: Vocab::numeric(spec.vocab_size),
        docs,
        canaries: canary_index,
    })
}

/// Carve canaries into prefix/suffix samples, dropping any whose prefix is
/// followed by more than one distinct full-length continuation in the corpus.
pub fn extract_samples(corpus: &Corpus, prefix_len: usize, suffix_len: usize) -> Result<Vec<ExtractionSample>> {
    if prefix_len == 0 || suffix_len == 0 {
        return Err(Error::Argument("prefix_len and suffix_len must be positive".into()));
    }
    if let Some((id, c)) = corpus
        .canaries
        .iter()
        .find(|(_, c)| c.tokens.len() < prefix_len + suffix_len)
    {
        return Err(Error::Argument(format!(
            "canary {id} has {} tokens, need prefix_len + suffix_len = {}",
            c.tokens.len(),
            prefix_len + suffix_len
        )));
    }

    // Index every document position by its leading token pair so the
    // uniqueness scan does not rescan the whole corpus per canary.
    let key = |window: &[TokenId]| -> u64 {
        if window.len() >= 2 {
            ((window[0] as u64) << 32) | window[1] as u64
        } else {
            window[0] as u64
        }
    };
    let mut index: HashMap<u64, Vec<(usize, usize)>> = HashMap::new();
    let probe = prefix_len.min(2);
    for (d, doc) in corpus.docs.iter().enumerate() {
        for start in 0..doc.len().saturating_sub(probe - 1) {
            index.entry(key(&doc[start..start + probe])).or_default().push((d, start));
        }
    }

    let mut samples = Vec::new();
    for (&id, canary) in &corpus.canaries {
        let prefix = &canary.tokens[..prefix_len];
        let suffix = &canary.tokens[prefix_len..prefix_len + suffix_len];
        let mut unique = true;
        if let Some(positions) = index.get(&key(&prefix[..probe])) {
            'occurrences: for &(d, start) in positions {
                let doc = &corpus.docs[d];
                if doc.len() < start + prefix_len + suffix_len {
                    continue;
                }
                if &doc[start..start + prefix_len] != prefix {
                    continue;
                }
                let continuation = &doc[start + prefix_len..start + prefix_len + suffix_len];
                if continuation != suffix {
                    unique = false;
                    break 'occurrences;
                }
            }
        }
        if unique {
            samples.push(ExtractionSample {
                sample_id: id,
                prefix: prefix.to_vec(),
                suffix: suffix.to_vec(),
                dup_count: canary.dup_count,
            });
        }
    }
    Ok(samples)
}

/// Order-preserving split at `floor(train_frac * len)`.
pub fn split_samples(
    samples: Vec<ExtractionSample>,
    train_frac: f64,
) -> Result<(Vec<ExtractionSample>, Vec<ExtractionSample>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Argument(format!("train_frac must be in (0, 1), got {train_frac}")));
    }
    let cut = (train_frac * samples.len() as f64).floor() as usize;
    let mut train = samples;
    let test = train.split_off(cut);
    Ok((train, test))
}

impl Corpus {
    /// Write documents as space-separated token ids, one per line, with a
    /// JSON sidecar holding the vocab and canary index.
    pub fn save(&self, docs_path: &Path, meta_path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(docs_path)?);
        for doc in &self.docs {
            let mut first = true;
            for t in doc {
                if !first {
                    write!(w, " ")?;
                }
                write!(w, "{t}")?;
                first = false;
            }
            writeln!(w)?;
        }
        w.flush()?;
        let meta = CorpusMeta { vocab: self.vocab.clone(), canaries: self.canaries.clone() };
        fs::write(meta_path, serde_json::to_string(&meta)?)?;
        Ok(())
    }

    pub fn load(docs_path: &Path, meta_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(docs_path)?;
        let mut docs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut doc = Vec::new();
            for field in line.split_whitespace() {
                let id: TokenId = field
                    .parse()
                    .map_err(|_| Error::Config(format!("corpus line {}: bad token id {field:?}", lineno + 1)))?;
                doc.push(id);
            }
            docs.push(doc);
        }
        let meta: CorpusMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
        Ok(Corpus { vocab: meta.vocab, docs, canaries: meta.canaries })
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusMeta {
    vocab: Vocab,
    canaries: BTreeMap<u32, Canary>,
}

pub fn write_samples_jsonl(path: &Path, samples: &[ExtractionSample]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_jsonl(path: &Path) -> Result<Vec<ExtractionSample>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
