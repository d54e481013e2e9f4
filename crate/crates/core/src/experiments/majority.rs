use rand::seq::SliceRandom;
use rand::Rng;

use super::config::MajorityConfig;
use super::linear_lr;
use super::metrics::{MajorityOutcome, MetricRecord, MetricsLog, RunSummary, Summary};
use crate::attnet::{argmax, batch_backward, AdamState, AttnModel, ModelShape};
use crate::geometry::LayerNormVariant;
use crate::par::{map_range, Exec};
use crate::rng::{derive_seed, stream, tag};
use crate::{Error, Result};

/// A token sequence and its per-position targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MajorityData {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

/// The most frequent class, or `None` when the top count is shared.
pub fn majority_label(tokens: &[usize], n_classes: usize) -> Option<usize> {
    let mut counts = vec![0usize; n_classes];
    for &t in tokens {
        counts[t] += 1;
    }
    let best = *counts.iter().max()?;
    let mut winners = counts.iter().enumerate().filter(|(_, &c)| c == best);
    let (label, _) = winners.next()?;
    winners.next().is_none().then_some(label)
}

fn sample_example(rng: &mut impl Rng, seq_len: usize, n_classes: usize) -> Example {
    loop {
        let tokens: Vec<usize> = (0..seq_len).map(|_| rng.random_range(0..n_classes)).collect();
        if let Some(label) = majority_label(&tokens, n_classes) {
            return Example {
                labels: vec![label; seq_len],
                tokens,
            };
        }
    }
}

/// Uniform random sequences, resampled until the majority is unique; every
/// position is labelled with the majority class.
pub fn gen_majority_dataset(config: &MajorityConfig, seed: u64) -> Result<MajorityData> {
    if config.seq_len < 1 {
        return Err(Error::Config("seq_len must be >= 1".into()));
    }
    if config.n_classes < 2 {
        return Err(Error::Config("n_classes must be >= 2".into()));
    }
    let mut rng = stream(seed, &[tag::DATA]);
    let mut draw = |count: usize| {
        (0..count)
            .map(|_| sample_example(&mut rng, config.seq_len, config.n_classes))
            .collect()
    };
    let train = draw(config.train_size);
    let test = draw(config.test_size);
    Ok(MajorityData { train, test })
}

pub(crate) fn accuracy(model: &AttnModel, data: &[Example]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for ex in data {
        let trace = model.forward(&ex.tokens)?;
        for (row, &y) in trace.logits.iter_rows().zip(&ex.labels) {
            hits += usize::from(argmax(row) == y);
            total += 1;
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}

fn mean_angle(model: &AttnModel, data: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        total += model.forward(&ex.tokens)?.mean_query_angle()?;
    }
    Ok(total / data.len().max(1) as f64)
}

struct RunResult {
    records: Vec<MetricRecord>,
    summary: RunSummary,
}

fn train_one(
    config: &MajorityConfig,
    variant: LayerNormVariant,
    seed_index: usize,
    exec: Exec,
) -> Result<RunResult> {
    let s = seed_index as u64;
    let data = gen_majority_dataset(config, derive_seed(config.master_seed, &[tag::DATA, s]))?;
    // Same initial weights for every variant at a given seed.
    let mut init_rng = stream(config.master_seed, &[tag::INIT, s]);
    let shape = ModelShape {
        vocab: config.n_classes,
        d: config.d,
        k_out: config.n_classes,
        max_len: None,
    };
    let mut model = AttnModel::init(shape, variant, false, config.init_std, &mut init_rng)?;
    let mut adam = AdamState::new(&model.params);
    let mut shuffle_rng = stream(config.master_seed, &[tag::SHUFFLE, s]);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0usize;
    let angle_set = &data.test[..config.angle_eval_size.min(data.test.len())];

    let mut records = Vec::new();
    let mut window_loss = 0.0;
    let mut window_steps = 0usize;
    let batch_size = config.batch_size.min(data.train.len());

    for step in 0..config.total_steps {
        if cursor + batch_size > order.len() {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let batch: Vec<(&[usize], &[usize])> = order[cursor..cursor + batch_size]
            .iter()
            .map(|&i| (data.train[i].tokens.as_slice(), data.train[i].labels.as_slice()))
            .collect();
        cursor += batch_size;
        let (loss, grads) = batch_backward(&model, &batch, exec)?;
        if step == 0 {
            records.push(MetricRecord {
                variant: variant.name().to_string(),
                seed: seed_index,
                step: 0,
                train_loss: loss,
                test_accuracy: accuracy(&model, &data.test)?,
                mean_query_angle_deg: mean_angle(&model, angle_set)?,
            });
        }
        adam.step(
            &mut model.params,
            &grads,
            linear_lr(config.lr, step, config.total_steps),
        )?;
        window_loss += loss;
        window_steps += 1;
        let done = step + 1;
        if done % config.eval_interval == 0 || done == config.total_steps {
            records.push(MetricRecord {
                variant: variant.name().to_string(),
                seed: seed_index,
                step: done,
                train_loss: window_loss / window_steps as f64,
                test_accuracy: accuracy(&model, &data.test)?,
                mean_query_angle_deg: mean_angle(&model, angle_set)?,
            });
            window_loss = 0.0;
            window_steps = 0;
        }
    }
    let summary = RunSummary::from_records(
        variant.name(),
        seed_index,
        &records,
        config.loss_threshold,
        config.accuracy_threshold,
    );
    Ok(RunResult { records, summary })
}

/// Trains a fresh model for every `(variant, seed)` pair.
pub fn run_majority(config: &MajorityConfig, exec: Exec) -> Result<MajorityOutcome> {
    config.validate()?;
    let runs: Vec<(LayerNormVariant, usize)> = config
        .variants
        .iter()
        .flat_map(|&v| (0..config.n_seeds).map(move |s| (v, s)))
        .collect();
    let results = map_range(exec, runs.len(), |i| {
        let (variant, seed) = runs[i];
        train_one(config, variant, seed, exec)
    });
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for r in results {
        let r = r?;
        records.extend(r.records);
        summaries.push(r.summary);
    }
    Ok(MajorityOutcome {
        log: MetricsLog { records },
        summary: Summary {
            loss_threshold: config.loss_threshold,
            accuracy_threshold: config.accuracy_threshold,
            runs: summaries,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_oracle(tokens: &[usize], k: usize) -> Option<usize> {
        // Separate route: sort and scan runs.
        let mut sorted = tokens.to_vec();
        sorted.sort_unstable();
        let mut best: Option<(usize, usize)> = None;
        let mut tie = false;
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            let run = j - i;
            match best {
                Some((_, b)) if run == b => tie = true,
                Some((_, b)) if run < b => {}
                _ => {
                    best = Some((sorted[i], run));
                    tie = false;
                }
            }
            i = j;
        }
        assert!(sorted.iter().all(|&t| t < k));
        if tie {
            None
        } else {
            best.map(|(c, _)| c)
        }
    }

    #[test]
    fn majority_of_worked_example() {
        // a,a,b,b,b,c,c -> b everywhere
        let tokens = [0, 0, 1, 1, 1, 2, 2];
        assert_eq!(majority_label(&tokens, 3), Some(1));
        assert_eq!(majority_label(&[0, 0, 1, 1], 3), None);
        assert_eq!(majority_label(&[2], 3), Some(2));
    }

    #[test]
    fn generated_labels_match_counting_oracle() {
        let cfg = MajorityConfig {
            train_size: 1000,
            test_size: 10,
            ..Default::default()
        };
        let data = gen_majority_dataset(&cfg, 3).unwrap();
        for ex in &data.train {
            let oracle = count_oracle(&ex.tokens, cfg.n_classes).expect("no ties");
            assert!(ex.labels.iter().all(|&l| l == oracle));
            assert_eq!(ex.tokens.len(), cfg.seq_len);
        }
        let single = MajorityConfig {
            seq_len: 1,
            train_size: 50,
            test_size: 1,
            ..Default::default()
        };
        for ex in gen_majority_dataset(&single, 1).unwrap().train {
            assert_eq!(ex.labels, ex.tokens);
        }
        let bad = MajorityConfig {
            seq_len: 0,
            ..Default::default()
        };
        assert!(matches!(gen_majority_dataset(&bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn untrained_identity_model_is_at_chance() {
        let cfg = MajorityConfig {
            train_size: 10,
            test_size: 2000,
            ..Default::default()
        };
        let data = gen_majority_dataset(&cfg, 11).unwrap();
        let mut rng = stream(5, &[tag::INIT]);
        let model = AttnModel::init(
            ModelShape {
                vocab: 5,
                d: 8,
                k_out: 5,
                max_len: None,
            },
            LayerNormVariant::Identity,
            false,
            0.02,
            &mut rng,
        )
        .unwrap();
        let acc = accuracy(&model, &data.test).unwrap();
        assert!((acc - 0.2).abs() <= 0.05, "accuracy {acc}");
    }

    #[test]
    fn small_runs_are_reproducible() {
        let cfg = MajorityConfig {
            seq_len: 6,
            n_classes: 3,
            train_size: 200,
            test_size: 50,
            batch_size: 32,
            total_steps: 30,
            eval_interval: 10,
            n_seeds: 2,
            angle_eval_size: 20,
            ..Default::default()
        };
        let a = run_majority(&cfg, Exec::Serial).unwrap();
        let b = crate::par::with_threads(3, || run_majority(&cfg, Exec::Parallel)).unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.log.records.len(), 2 * 2 * 4);
        assert_eq!(a.summary, b.summary);
    }
}
