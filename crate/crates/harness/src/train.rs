use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use somni_core::optim::{Adam, AdamConfig};
use somni_core::{GradBuffer, Prepared, PrecisionGuard, SOmninet, Tape};

use crate::data::Corpus;
use crate::error::{HarnessError, Result};
use crate::eval::{aggregate, evaluate_samples, score_output, thread_count, SampleResult};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::run_config::RunConfig;

pub struct TrainOutcome {
    pub model: SOmninet,
    pub log: MetricsLog,
    /// Mean training loss over the last epoch.
    pub final_loss: f64,
    /// Epoch (1-based) with the lowest mean validation loss.
    pub best_epoch: usize,
}

/// Model sized for the corpus: task heads and schema come from the data,
/// the vocabulary from the training texts, the scaler from training rows.
pub fn build_model(cfg: &RunConfig, corpus: &Corpus) -> Result<SOmninet> {
    let mut mc = cfg.model.clone();
    mc.tasks = corpus.tasks.clone();
    mc.schema = corpus.schema.clone();
    let mut model = SOmninet::new(mc, corpus.tokenizer(cfg.train.vocab))?;
    model.fit_scaler(&corpus.train);
    Ok(model)
}

/// Batches of one epoch: each task's samples are shuffled and cut into
/// batches, and batches alternate round-robin across tasks.
pub fn epoch_batches(prepared: &[Prepared], tasks: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut per_task: Vec<std::collections::VecDeque<Vec<usize>>> = (0..tasks)
        .map(|t| {
            let mut idx: Vec<usize> = (0..prepared.len()).filter(|&i| prepared[i].task_id == t).collect();
            idx.shuffle(rng);
            idx.chunks(batch).map(<[usize]>::to_vec).collect()
        })
        .collect();
    let mut out = Vec::new();
    while per_task.iter().any(|q| !q.is_empty()) {
        for q in per_task.iter_mut() {
            if let Some(b) = q.pop_front() {
                out.push(b);
            }
        }
    }
    out
}

fn save_checkpoint(model: &SOmninet, cfg: &RunConfig, dir: &Path) -> Result<()> {
    model.save(dir)?;
    std::fs::write(dir.join("run.txt"), cfg.to_text())?;
    Ok(())
}

/// Trains one model on every task of the corpus. With `out`, writes
/// `best/` and `last/` checkpoints, `metrics.csv` and `run.txt`.
pub fn run_train(cfg: &RunConfig, corpus: &Corpus, out: Option<&Path>) -> Result<TrainOutcome> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(HarnessError::Config(problems));
    }
    if corpus.train.is_empty() {
        return Err(HarnessError::Run("no training samples".into()));
    }
    let _guard = PrecisionGuard::new(cfg.train.precision);
    let mut model = build_model(cfg, corpus)?;
    let prepared: Vec<Prepared> = corpus.train.iter().map(|s| model.prepare(s)).collect::<somni_core::Result<_>>()?;
    let mut adam = Adam::new(&model.store, AdamConfig { lr: cfg.train.learning_rate, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(7);
    let mut log = MetricsLog::new();
    let (mut final_loss, mut best) = (f64::NAN, (0, f64::INFINITY));
    let start = Instant::now();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("run.txt"), cfg.to_text())?;
    }
    for epoch in 1..=cfg.train.epochs {
        let mut results = Vec::with_capacity(prepared.len());
        for batch in epoch_batches(&prepared, model.cfg.tasks.len(), cfg.train.batch_size, &mut rng) {
            let mut grads = GradBuffer::zeros_like(&model.store);
            for &i in &batch {
                let p = &prepared[i];
                let mut tape = Tape::with_params(&model.store);
                let fwd = model.forward(&mut tape, p, false)?;
                let loss = model.loss(&mut tape, &fwd, &p.target)?;
                let (l, score) = (tape.value(loss)[0], score_output(tape.value(fwd.output), &p.target));
                if !l.is_finite() {
                    return Err(HarnessError::Run(format!("non-finite loss at epoch {epoch}")));
                }
                tape.backward(loss)?.accumulate_into(&mut grads);
                results.push(SampleResult { task: p.task_id, loss: l, score });
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.store, &grads, cfg.train.precision);
        }
        final_loss = results.iter().map(|r| r.loss).sum::<f64>() / results.len() as f64;
        let mut splits = vec![("train", aggregate(&model, &results))];
        if !corpus.val.is_empty() {
            let val = evaluate_samples(&model, &corpus.val, thread_count())?;
            splits.push(("val", aggregate(&model, &val)));
        }
        let seconds = start.elapsed().as_secs_f64();
        for (split, metrics) in &splits {
            for m in metrics {
                log.push(MetricsRow { epoch, split: split.to_string(), task: m.task.clone(), samples: m.samples, loss: m.loss, kind: m.kind, value: m.value, seconds })?;
            }
        }
        let (_, last) = splits.last().expect("train split present");
        let val_loss = last.iter().map(|m| m.loss).sum::<f64>() / last.len().max(1) as f64;
        if let Some(dir) = out {
            save_checkpoint(&model, cfg, &dir.join("last"))?;
            if val_loss < best.1 {
                save_checkpoint(&model, cfg, &dir.join("best"))?;
            }
            std::fs::write(dir.join("metrics.csv"), log.to_csv())?;
        }
        if val_loss < best.1 {
            best = (epoch, val_loss);
        }
    }
    Ok(TrainOutcome { model, log, final_loss, best_epoch: best.0 })
}
