use std::process::Command;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use somni_core::decoder::GeneratorHead;
use somni_core::model::Head;
use somni_core::synth::ToyTask;
use somni_core::{Image, Label, SOmninet};
use somni_harness::eval::{evaluate_samples, score_output};
use somni_harness::experiments::{sign_test, stream_maps};
use somni_harness::export::{export_attention, load_for_export, map_pgm};
use somni_harness::metrics::mean_sd;
use somni_harness::*;
use tempfile::tempdir;

fn cfg(text: &str) -> RunConfig {
    RunConfig::from_text(text).unwrap()
}

const SMOKE: &str = "task = two_question\ntrain = 64\nval = 16\ntest = 16\nepochs = 1\nbatch_size = 16\nfreeze_vision = true\n";

#[test]
fn one_epoch_writes_loadable_checkpoints() {
    let c = cfg(SMOKE);
    let corpus = load_corpus(&c).unwrap();
    let dir = tempdir().unwrap();
    let out = run_train(&c, &corpus, Some(dir.path())).unwrap();
    for f in ["run.txt", "metrics.csv", "best/run.txt", "last/run.txt", "last/manifest.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let loaded = SOmninet::load(&dir.path().join("last")).unwrap();
    assert_eq!(run_eval(&loaded, &corpus.test).unwrap(), run_eval(&out.model, &corpus.test).unwrap());
    let log = MetricsLog::from_csv(&std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(log, out.log);
    assert_eq!(RunConfig::load(&dir.path().join("run.txt")).unwrap(), c);
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn same_config_and_seed_reproduce_the_final_loss() {
    let c = cfg(SMOKE);
    let corpus = load_corpus(&c).unwrap();
    let a = run_train(&c, &corpus, None).unwrap();
    let b = run_train(&c, &load_corpus(&c).unwrap(), None).unwrap();
    assert!((a.final_loss - b.final_loss).abs() <= 1e-6);
    assert_eq!(a.model.store.get(a.model.store.find("head.answer.out.w").unwrap()), b.model.store.get(b.model.store.find("head.answer.out.w").unwrap()));
    let c2 = c.clone().with_seed(1);
    let d = run_train(&c2, &corpus, None).unwrap();
    assert_ne!(a.final_loss, d.final_loss);
}

#[test]
fn one_trunk_trains_classification_and_generation() {
    let c = cfg("task = two_question,next_frame\ntrain = 48\nval = 8\ntest = 8\nepochs = 10\nbatch_size = 4\nfreeze_vision = true\n");
    let corpus = load_corpus(&c).unwrap();
    assert_eq!(corpus.tasks.len(), 2);
    let out = run_train(&c, &corpus, None).unwrap();
    for task in ["answer", "next_frame"] {
        let curve: Vec<f64> = out.log.curve("train", task).map(|r| r.loss).collect();
        assert_eq!(curve.len(), 10);
        assert!(curve[9] < curve[0], "{task}: {curve:?}");
    }
    assert!(out.model.heads.iter().any(|h| matches!(h, Head::Generate(_))));
}

fn zero_generator(model: &mut SOmninet) {
    for h in &model.heads {
        if let Head::Generate(GeneratorHead { stages, .. }) = h {
            let (w, b) = *stages.last().unwrap();
            model.store.get_mut(w).data_mut().fill(0.0);
            model.store.get_mut(b).data_mut().fill(0.0);
        }
    }
}

#[test]
fn evaluation_trivial_cases() {
    let c = cfg("task = next_frame\ntrain = 4\nval = 2\ntest = 6\nfreeze_vision = true\n");
    let mut corpus = load_corpus(&c).unwrap();
    let mut model = build_model(&c, &corpus).unwrap();
    zero_generator(&mut model);
    for s in corpus.test.iter_mut() {
        s.label = Label::Frame(Image::filled(32, 32, 3, 0.0));
    }
    let m = run_eval(&model, &corpus.test).unwrap();
    assert_eq!((m[0].kind, m[0].value, m[0].samples), (MetricKind::Mae, 0.0, 6));

    let c = cfg("task = structured_joint\ntrain = 4\nval = 2\ntest = 10\n");
    let corpus = load_corpus(&c).unwrap();
    let mut model = build_model(&c, &corpus).unwrap();
    let out = &model.heads[0];
    let Head::Classify(head) = out else { panic!() };
    let (w, b) = (head.out.w, head.out.b.unwrap());
    model.store.get_mut(w).data_mut().fill(0.0);
    model.store.get_mut(b).data_mut().copy_from_slice(&[0.0, 5.0]);
    let ones: Vec<_> = corpus.test.iter().filter(|s| s.label == Label::Class(1)).cloned().collect();
    assert!(!ones.is_empty());
    assert_eq!(run_eval(&model, &ones).unwrap()[0].value, 1.0);
    assert_eq!(score_output(&[0.1, 0.9], &somni_core::Target::Class(1)), 1.0);
}

#[test]
fn evaluation_ignores_shard_order_and_thread_count() {
    let c = cfg("task = two_question\ntrain = 8\nval = 2\ntest = 24\n");
    let corpus = load_corpus(&c).unwrap();
    let model = build_model(&c, &corpus).unwrap();
    let a = run_eval(&model, &corpus.test).unwrap();
    let mut shuffled = corpus.test.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let b = run_eval(&model, &shuffled).unwrap();
    assert_eq!(a[0].value, b[0].value);
    assert!((a[0].loss - b[0].loss).abs() < 1e-12);
    let one = evaluate_samples(&model, &corpus.test, 1).unwrap();
    let three = evaluate_samples(&model, &corpus.test, 3).unwrap();
    assert_eq!(one.iter().map(|r| r.loss).collect::<Vec<_>>(), three.iter().map(|r| r.loss).collect::<Vec<_>>());
}

#[test]
fn evaluation_rejects_mismatched_heads() {
    let c = cfg("task = two_question\ntrain = 8\nval = 2\ntest = 4\n");
    let corpus = load_corpus(&c).unwrap();
    let model = build_model(&c, &corpus).unwrap();
    let other = load_corpus(&cfg("task = next_frame\ntrain = 2\nval = 2\ntest = 2\n")).unwrap();
    assert!(run_eval(&model, &other.test).is_err());
    let mut wrong = corpus.test[0].clone();
    wrong.task_id = 3;
    assert!(run_eval(&model, &[wrong]).is_err());
}

#[test]
fn configuration_problems_are_listed_together() {
    let err = RunConfig::from_text("bogus = 1\nsa_order = sideways\nepochs = many\n").unwrap_err();
    let HarnessError::Config(problems) = err else { panic!("{err}") };
    assert_eq!(problems.len(), 3, "{problems:?}");
    assert!(problems[0].starts_with("line 1") && problems[2].starts_with("line 3"));
    assert!(RunConfig::from_text("dim = 30\n").is_err());
    assert!(RunConfig::from_text("tasks = answer:classify:8\n").is_err());
    assert!(RunConfig::from_text("batch_size = 0\n").is_err());
    assert!(RunConfig::from_text("cca_heads = 5\n").is_err());
    let c = cfg("task = video_sentiment,svqa\nseed = 4\nseeds = 1,2\nlearning_rate = 0.01\n");
    assert_eq!((c.model.seed, c.train.seed, c.seeds.clone()), (4, 4, vec![1, 2]));
    assert_eq!(c.tasks, vec![ToyTask::VideoSentiment, ToyTask::Svqa]);
    assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
}

#[test]
fn exported_maps_cover_every_cache_pair_and_head() {
    let c = cfg("task = svqa\ntrain = 40\nval = 4\ntest = 4\n");
    let corpus = load_corpus(&c).unwrap();
    let model = build_model(&c, &corpus).unwrap();
    let dir = tempdir().unwrap();
    let maps = export_attention(&model, &corpus.test[0], dir.path()).unwrap();
    // 3 cache pairs, each attended in both directions, by 4 heads.
    assert_eq!(maps.len(), 24);
    assert_eq!(std::fs::read_to_string(dir.path().join("index.tsv")).unwrap().lines().count(), 25);
    let text_tokens = model.tokenizer.tokenize(corpus.test[0].text.as_deref().unwrap()).len();
    let t_s = maps.iter().find(|m| m.stream == "t_s").unwrap();
    assert_eq!((t_s.rows, t_s.cols), (text_tokens, 6));
    for m in &maps {
        let csv = std::fs::read_to_string(dir.path().join(&m.csv)).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), m.cols + 1);
        for line in lines {
            let sum: f64 = line.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        let pgm = std::fs::read(dir.path().join(&m.pgm)).unwrap();
        let header = format!("P5\n{} {}\n255\n", m.cols, m.rows);
        assert!(pgm.starts_with(header.as_bytes()));
        assert_eq!(pgm.len(), header.len() + m.rows * m.cols);
    }
    assert_eq!(stream_maps(&model, &corpus.test[0], "p_t").unwrap().len(), 4);
    let pgm = map_pgm(&somni_core::Tensor::new(vec![1, 2], vec![0.25, 0.5]).unwrap());
    assert_eq!(&pgm[pgm.len() - 2..], &[128, 255]);
}

#[test]
fn export_requires_attention_enabled_checkpoints() {
    let mut c = cfg(SMOKE);
    c.train.export_attention = false;
    let corpus = load_corpus(&c).unwrap();
    let dir = tempdir().unwrap();
    run_train(&c, &corpus, Some(dir.path())).unwrap();
    assert!(load_for_export(&dir.path().join("last")).is_err());
    c.train.export_attention = true;
    let dir2 = tempdir().unwrap();
    run_train(&c, &corpus, Some(dir2.path())).unwrap();
    assert!(load_for_export(&dir2.path().join("last")).is_ok());
}

#[test]
fn metrics_log_is_append_only() {
    let row = |epoch| MetricsRow { epoch, split: "train".into(), task: "t".into(), samples: 1, loss: 0.5, kind: MetricKind::Accuracy, value: 1.0, seconds: 0.1 };
    let mut log = MetricsLog::new();
    log.push(row(1)).unwrap();
    log.push(row(1)).unwrap();
    log.push(row(2)).unwrap();
    assert!(log.push(row(1)).is_err());
    assert_eq!(MetricsLog::from_csv(&log.to_csv()).unwrap(), log);
    assert!(MetricsLog::from_csv("nonsense\n").is_err());
}

#[test]
fn statistics_helpers() {
    assert_eq!(sign_test(5, 0), 1.0 / 32.0);
    assert_eq!(sign_test(0, 0), 1.0);
    assert!((sign_test(4, 1) - 6.0 / 32.0).abs() < 1e-15);
    let (m, sd) = mean_sd(&[1.0, 2.0, 3.0]);
    assert_eq!((m, sd), (2.0, 1.0));
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_somni");
    let dir = tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "task = structured_joint\ntrain = 8\nval = 4\ntest = 4\nepochs = 1\n").unwrap();
    let run = |args: &[&str]| Command::new(bin).args(args).output().unwrap();
    let c = config.to_str().unwrap();
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    assert!(run(&["generate", "--config", c, "--out", dir.path().join("data").to_str().unwrap()]).status.success());
    assert!(run(&["train", "--config", c, "--out", o]).status.success());
    let ckpt = out.join("best");
    let ck = ckpt.to_str().unwrap();
    let eval = run(&["eval", "--checkpoint", ck]);
    assert!(eval.status.success());
    assert!(String::from_utf8_lossy(&eval.stdout).contains("accuracy"));
    assert!(run(&["attn-export", "--checkpoint", ck, "--out", dir.path().join("maps").to_str().unwrap()]).status.success());
    assert!(run(&["params", "--config", c]).status.success());
    assert!(!run(&["eval"]).status.success());
    assert!(!run(&["train", "--config", c]).status.success());
    assert!(!run(&["attn-export", "--checkpoint", ck, "--out", o, "--sample", "99"]).status.success());
    std::fs::write(&config, "epochs = -1\n").unwrap();
    assert!(!run(&["params", "--config", c]).status.success());
    assert!(!run(&["experiment", "nothing"]).status.success());
}
