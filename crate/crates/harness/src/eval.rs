use somni_core::{Label, PrecisionGuard, SOmninet, Sample, Target, TaskKind, Tape};

use crate::error::{HarnessError, Result};
use crate::metrics::MetricKind;

/// Aggregate of one task over a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskMetrics {
    pub task: String,
    pub kind: MetricKind,
    pub samples: usize,
    pub loss: f64,
    pub value: f64,
}

/// Loss and metric contribution of one sample: correctness for
/// classification, per-pixel mean absolute error for generation.
#[derive(Clone, Copy, Debug)]
pub struct SampleResult {
    pub task: usize,
    pub loss: f64,
    pub score: f64,
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn score_output(output: &[f64], target: &Target) -> f64 {
    match target {
        Target::Class(c) => f64::from(u8::from(argmax(output) == *c)),
        Target::Frame(f) => output.iter().zip(f.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / f.numel() as f64,
    }
}

pub fn evaluate_sample(model: &SOmninet, sample: &Sample) -> Result<SampleResult> {
    let p = model.prepare(sample)?;
    let mut tape = Tape::with_params(&model.store);
    let out = model.forward(&mut tape, &p, false)?;
    let loss = model.loss(&mut tape, &out, &p.target)?;
    Ok(SampleResult { task: sample.task_id, loss: tape.value(loss)[0], score: score_output(tape.value(out.output), &p.target) })
}

/// Worker count from `SOMNI_THREADS`, defaulting to 1.
pub fn thread_count() -> usize {
    std::env::var("SOMNI_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

/// Per-sample results in input order, computed on up to `threads` workers
/// over read-only weights.
pub fn evaluate_samples(model: &SOmninet, samples: &[Sample], threads: usize) -> Result<Vec<SampleResult>> {
    let threads = threads.clamp(1, samples.len().max(1));
    if threads == 1 {
        return samples.iter().map(|s| evaluate_sample(model, s)).collect();
    }
    let chunk = samples.len().div_ceil(threads);
    let precision = somni_core::precision();
    let parts: Vec<Result<Vec<SampleResult>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples.chunks(chunk).map(|c| scope.spawn(move || {
                    let _guard = PrecisionGuard::new(precision);
                    c.iter().map(|s| evaluate_sample(model, s)).collect()
                })).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(HarnessError::Run("evaluation worker panicked".into())))).collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Per-task mean loss and metric; tasks without samples are omitted.
pub fn aggregate(model: &SOmninet, results: &[SampleResult]) -> Vec<TaskMetrics> {
    model
        .cfg
        .tasks
        .iter()
        .enumerate()
        .filter_map(|(t, spec)| {
            let rs: Vec<&SampleResult> = results.iter().filter(|r| r.task == t).collect();
            if rs.is_empty() {
                return None;
            }
            let n = rs.len() as f64;
            let kind = match spec.kind {
                TaskKind::Classify { .. } => MetricKind::Accuracy,
                TaskKind::Generate { .. } => MetricKind::Mae,
            };
            Some(TaskMetrics {
                task: spec.name.clone(),
                kind,
                samples: rs.len(),
                loss: rs.iter().map(|r| r.loss).sum::<f64>() / n,
                value: rs.iter().map(|r| r.score).sum::<f64>() / n,
            })
        })
        .collect()
}

/// Evaluates without touching the weights.
pub fn run_eval(model: &SOmninet, samples: &[Sample]) -> Result<Vec<TaskMetrics>> {
    for s in samples {
        if s.task_id >= model.cfg.tasks.len() {
            return Err(HarnessError::Run(format!("sample for task {} but the checkpoint has {} task heads", s.task_id, model.cfg.tasks.len())));
        }
        let kind = &model.cfg.tasks[s.task_id].kind;
        let fits = matches!((kind, &s.label), (TaskKind::Classify { .. }, Label::Class(_)) | (TaskKind::Generate { .. }, Label::Frame(_)));
        if !fits {
            return Err(HarnessError::Run(format!("label of a task-{} sample does not match head `{}`", s.task_id, model.cfg.tasks[s.task_id].name)));
        }
    }
    let results = evaluate_samples(model, samples, thread_count())?;
    Ok(aggregate(model, &results))
}
