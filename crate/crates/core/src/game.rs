//! Membership security game: per trial, a fresh world is synthesized with a
//! random half of a canary pool injected into the training corpus, a model
//! is trained, and an adversary with black-box query access guesses whether
//! a challenged canary was a member.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{synth_corpus_with_canaries, CorpusSpec, TokenId};
use crate::error::{Error, Result};
use crate::lm::{
    default_lambdas, train_ngram, LanguageModel, NGramModel, DEFAULT_ADD_K, DEFAULT_EMBED_DIM,
    DEFAULT_ORDER,
};
use crate::seeds::{self, STREAM_CANARY, STREAM_GAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    /// Always guesses member; wins exactly when the fair bit lands on 0.
    Constant,
    /// Guesses member when the challenged sequence's loss is below a
    /// threshold calibrated on a disjoint split of known members and
    /// known non-members.
    LossThreshold,
}

impl FromStr for Adversary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "loss_threshold" => Ok(Self::LossThreshold),
            other => Err(Error::Argument(format!(
                "unknown adversary {other:?}; expected constant|loss_threshold"
            ))),
        }
    }
}

impl fmt::Display for Adversary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Constant => "constant",
            Self::LossThreshold => "loss_threshold",
        })
    }
}

/// One played round: challenge bit, challenged sequence, guess, outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameTranscript {
    pub b: u8,
    pub x: Vec<TokenId>,
    pub b_hat: u8,
    pub win: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub trials: usize,
    pub wins: usize,
    pub win_rate: f64,
    /// Fraction of trials whose challenge bit was 0 (member drawn).
    pub bit_zero_fraction: f64,
    pub transcripts: Vec<GameTranscript>,
}

fn mean_loss<M: LanguageModel + ?Sized>(model: &M, sequences: &[&Vec<TokenId>]) -> Result<f64> {
    let mut total = 0.0;
    for seq in sequences {
        total += model.sequence_loss(&[], seq)?;
    }
    Ok(total / sequences.len() as f64)
}

fn play_trial(
    spec: &CorpusSpec,
    adversary: Adversary,
    train_model: bool,
    trial: u64,
) -> Result<GameTranscript> {
    let trial_seed = seeds::mix(spec.seed, &[STREAM_GAME, trial]);
    let mut rng = seeds::stream_rng(trial_seed, &[STREAM_GAME]);

    let pool = spec.n_canaries;
    let v = spec.vocab_size as TokenId;
    let mut pool_canaries: Vec<Vec<TokenId>> = Vec::with_capacity(pool);
    for c in 0..pool {
        let mut crng = seeds::stream_rng(trial_seed, &[STREAM_CANARY, c as u64]);
        loop {
            let tokens: Vec<TokenId> =
                (0..spec.canary_len).map(|_| crng.gen_range(0..v)).collect();
            if !pool_canaries.contains(&tokens) {
                pool_canaries.push(tokens);
                break;
            }
        }
    }

    let mut order: Vec<usize> = (0..pool).collect();
    order.shuffle(&mut rng);
    let half = pool / 2;
    let members: Vec<usize> = order[..half].to_vec();
    let non_members: Vec<usize> = order[half..].to_vec();

    let injected: Vec<(Vec<TokenId>, u32)> = members
        .iter()
        .enumerate()
        .map(|(i, &idx)| {
            (pool_canaries[idx].clone(), spec.dup_counts[i % spec.dup_counts.len()])
        })
        .collect();
    let world_spec = CorpusSpec {
        n_canaries: injected.len(),
        dup_counts: injected.iter().map(|(_, d)| *d).collect(),
        seed: trial_seed,
        ..spec.clone()
    };
    let corpus = synth_corpus_with_canaries(&world_spec, &injected)?;
    let model = if train_model {
        train_ngram(
            &corpus,
            DEFAULT_ORDER,
            DEFAULT_ADD_K,
            &default_lambdas(DEFAULT_ORDER),
            DEFAULT_EMBED_DIM,
            trial_seed,
        )?
    } else {
        NGramModel::untrained(spec.vocab_size, DEFAULT_EMBED_DIM, trial_seed)?
    };

    let calib = half / 2;
    let member_calib: Vec<&Vec<TokenId>> =
        members[..calib].iter().map(|&i| &pool_canaries[i]).collect();
    let non_member_calib: Vec<&Vec<TokenId>> =
        non_members[..calib].iter().map(|&i| &pool_canaries[i]).collect();
    let member_challenge = &members[calib..];
    let non_member_challenge = &non_members[calib..];

    let b: u8 = rng.gen_range(0..2);
    let x = if b == 0 {
        &pool_canaries[member_challenge[rng.gen_range(0..member_challenge.len())]]
    } else {
        &pool_canaries[non_member_challenge[rng.gen_range(0..non_member_challenge.len())]]
    };

    let b_hat: u8 = match adversary {
        Adversary::Constant => 0,
        Adversary::LossThreshold => {
            let tau =
                0.5 * (mean_loss(&model, &member_calib)? + mean_loss(&model, &non_member_calib)?);
            if model.sequence_loss(&[], x)? < tau {
                0
            } else {
                1
            }
        }
    };

    Ok(GameTranscript { b, x: x.clone(), b_hat, win: b == b_hat })
}

/// Play `trials` independent rounds of the membership game. `spec`
/// describes each trial's world: `n_canaries` is the full pool size (an
/// even count of at least 4), of which a random half becomes members with
/// duplication cycled from `dup_counts`. With `train_model` false the
/// adversary faces an untrained uniform model.
pub fn security_game(
    spec: &CorpusSpec,
    adversary: Adversary,
    trials: usize,
    train_model: bool,
) -> Result<GameOutcome> {
    if trials == 0 {
        return Err(Error::Argument("security game needs at least one trial".into()));
    }
    if spec.n_canaries < 4 || spec.n_canaries % 2 != 0 {
        return Err(Error::Argument(format!(
            "canary pool must be even and at least 4, got {}",
            spec.n_canaries
        )));
    }
    spec.validate()?;

    let transcripts: Vec<GameTranscript> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| play_trial(spec, adversary, train_model, trial))
        .collect::<Result<Vec<_>>>()?;

    let wins = transcripts.iter().filter(|t| t.win).count();
    let zeros = transcripts.iter().filter(|t| t.b == 0).count();
    Ok(GameOutcome {
        trials,
        wins,
        win_rate: wins as f64 / trials as f64,
        bit_zero_fraction: zeros as f64 / trials as f64,
        transcripts,
    })
}

/// Pool spec sized so a trial synthesizes and trains in milliseconds.
pub fn small_game_spec(seed: u64, member_dup: u32) -> CorpusSpec {
    CorpusSpec {
        vocab_size: 64,
        n_background_docs: 80,
        doc_len: 100,
        n_canaries: 8,
        canary_len: 24,
        dup_counts: vec![member_dup; 8],
        seed,
    }
}
