use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::LmConfig;
use super::linear_lr;
use super::majority::Example;
use crate::attnet::{argmax, batch_backward, AdamState, AttnModel, ModelShape};
use crate::linalg::Mat;
use crate::par::Exec;
use crate::rng::{derive_seed, stream, tag};
use crate::{Error, Result};

/// First-order Markov chain over `0..vocab` with a row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    transitions: Mat,
}

impl MarkovChain {
    /// Rows are `softmax(concentration * z)` with standard-normal `z`.
    pub fn random(vocab: usize, concentration: f64, rng: &mut impl Rng) -> Result<Self> {
        check_vocab(vocab)?;
        let mut t = Mat::zeros(vocab, vocab);
        for i in 0..vocab {
            let z: Vec<f64> = (0..vocab)
                .map(|_| concentration * Distribution::<f64>::sample(&StandardNormal, &mut *rng))
                .collect();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for (j, v) in e.into_iter().enumerate() {
                t.set(i, j, v / s);
            }
        }
        Ok(MarkovChain { transitions: t })
    }

    /// Each token `i` is always followed by `successor[i]`.
    pub fn deterministic(successor: &[usize]) -> Result<Self> {
        let vocab = successor.len();
        check_vocab(vocab)?;
        let mut t = Mat::zeros(vocab, vocab);
        for (i, &s) in successor.iter().enumerate() {
            if s >= vocab {
                return Err(Error::TokenOutOfRange { token: s, vocab });
            }
            t.set(i, s, 1.0);
        }
        Ok(MarkovChain { transitions: t })
    }

    pub fn uniform(vocab: usize) -> Result<Self> {
        check_vocab(vocab)?;
        let p = 1.0 / vocab as f64;
        Ok(MarkovChain {
            transitions: Mat::from_fn(vocab, vocab, |_, _| p),
        })
    }

    pub fn vocab(&self) -> usize {
        self.transitions.rows()
    }

    pub fn transitions(&self) -> &Mat {
        &self.transitions
    }

    /// Expected next-token cross-entropy of the true chain under its
    /// stationary-free empirical use: mean row entropy.
    pub fn mean_row_entropy(&self) -> f64 {
        let h: f64 = self
            .transitions
            .iter_rows()
            .map(|r| -r.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
            .sum();
        h / self.vocab() as f64
    }

    /// `len` tokens, the first uniform over the vocabulary.
    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<usize> {
        let rows: Vec<WeightedIndex<f64>> = self
            .transitions
            .iter_rows()
            .map(|r| WeightedIndex::new(r).expect("stochastic row"))
            .collect();
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut cur = rng.random_range(0..self.vocab());
        out.push(cur);
        for _ in 1..len {
            cur = rows[cur].sample(rng);
            out.push(cur);
        }
        out
    }
}

fn check_vocab(vocab: usize) -> Result<()> {
    if vocab < 2 {
        return Err(Error::Config(format!("vocab must be >= 2, got {vocab}")));
    }
    Ok(())
}

/// Next-token examples: `labels[i] = tokens[i + 1]` of the underlying stream.
#[derive(Debug, Clone, PartialEq)]
pub struct LmDataset {
    pub chain: MarkovChain,
    pub sequences: Vec<Example>,
}

pub fn examples_from_chain(
    chain: &MarkovChain,
    seed: u64,
    seq_len: usize,
    size: usize,
) -> Result<Vec<Example>> {
    if seq_len < 1 {
        return Err(Error::Config("seq_len must be >= 1".into()));
    }
    let mut rng = stream(seed, &[tag::DATA]);
    Ok((0..size)
        .map(|_| {
            let s = chain.sample(seq_len + 1, &mut rng);
            Example {
                tokens: s[..seq_len].to_vec(),
                labels: s[1..].to_vec(),
            }
        })
        .collect())
}

/// A seeded random chain and `size` sequences drawn from it.
pub fn gen_lm_dataset(seed: u64, vocab: usize, seq_len: usize, size: usize) -> Result<LmDataset> {
    gen_lm_dataset_with(seed, vocab, seq_len, size, 2.0)
}

pub(crate) fn gen_lm_dataset_with(
    seed: u64,
    vocab: usize,
    seq_len: usize,
    size: usize,
    concentration: f64,
) -> Result<LmDataset> {
    let chain = MarkovChain::random(vocab, concentration, &mut stream(seed, &[tag::CHAIN]))?;
    let sequences = examples_from_chain(&chain, seed, seq_len, size)?;
    Ok(LmDataset { chain, sequences })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRecord {
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

pub(crate) fn eval_lm(model: &AttnModel, data: &[Example]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0usize;
    let mut total = 0usize;
    for ex in data {
        let trace = model.forward(&ex.tokens)?;
        loss += crate::attnet::cross_entropy(&trace.logits, &ex.labels)? * ex.labels.len() as f64;
        for (row, &y) in trace.logits.iter_rows().zip(&ex.labels) {
            hits += usize::from(argmax(row) == y);
        }
        total += ex.labels.len();
    }
    let total = total.max(1) as f64;
    Ok((loss / total, hits as f64 / total))
}

/// Output of `train_lm`: the trained model, its curve and held-out data.
#[derive(Debug, Clone)]
pub struct LmRun {
    pub model: AttnModel,
    pub records: Vec<LmRecord>,
    pub test: Vec<Example>,
}

/// Trains a one-layer causal model with learned positions on Markov data.
pub fn train_lm(config: &LmConfig, exec: Exec) -> Result<LmRun> {
    config.validate()?;
    let seed = derive_seed(config.master_seed, &[tag::DATA]);
    let chain = MarkovChain::random(
        config.vocab,
        config.concentration,
        &mut stream(seed, &[tag::CHAIN]),
    )?;
    let train = examples_from_chain(&chain, seed, config.seq_len, config.train_size)?;
    let test = examples_from_chain(
        &chain,
        derive_seed(seed, &[tag::EVAL]),
        config.seq_len,
        config.test_size,
    )?;
    train_lm_on(config, &train, test, exec)
}

pub(crate) fn train_lm_on(
    config: &LmConfig,
    train: &[Example],
    test: Vec<Example>,
    exec: Exec,
) -> Result<LmRun> {
    use rand::seq::SliceRandom;

    let shape = ModelShape {
        vocab: config.vocab,
        d: config.d,
        k_out: config.vocab,
        max_len: Some(config.seq_len),
    };
    let mut init_rng = stream(config.master_seed, &[tag::INIT]);
    let mut model = AttnModel::init(shape, config.variant, true, config.init_std, &mut init_rng)?;
    let mut adam = AdamState::new(&model.params);
    let mut shuffle_rng = stream(config.master_seed, &[tag::SHUFFLE]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let batch_size = config.batch_size.min(train.len()).max(1);
    let mut cursor = 0usize;
    let mut records = Vec::new();
    let mut window = (0.0, 0usize);
    for step in 0..config.total_steps {
        if cursor + batch_size > order.len() {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let batch: Vec<(&[usize], &[usize])> = order[cursor..cursor + batch_size]
            .iter()
            .map(|&i| (train[i].tokens.as_slice(), train[i].labels.as_slice()))
            .collect();
        cursor += batch_size;
        let (loss, grads) = batch_backward(&model, &batch, exec)?;
        adam.step(
            &mut model.params,
            &grads,
            linear_lr(config.lr, step, config.total_steps),
        )?;
        window.0 += loss;
        window.1 += 1;
        let done = step + 1;
        if done % config.eval_interval == 0 || done == config.total_steps {
            let (test_loss, test_accuracy) = eval_lm(&model, &test)?;
            records.push(LmRecord {
                step: done,
                train_loss: window.0 / window.1 as f64,
                test_loss,
                test_accuracy,
            });
            window = (0.0, 0);
        }
    }
    Ok(LmRun {
        model,
        records,
        test,
    })
}
