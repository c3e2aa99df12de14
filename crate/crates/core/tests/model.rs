mod common;

use std::time::Instant;

use common::*;
use somni_core::gradcheck::grad_check_params;
use somni_core::{Label, Tape};

#[test]
fn full_model_gradients_match_finite_differences() {
    let model = tiny_model();
    let mut r = rng(3);
    let sample = full_sample(&mut r, 16, 0);
    let cls = model.prepare(&sample).unwrap();
    let mut gen_sample = sample.clone();
    gen_sample.task_id = 1;
    gen_sample.label = Label::Frame(random_image(&mut r, 16));
    let gen = model.prepare(&gen_sample).unwrap();
    let start = Instant::now();
    let report = grad_check_params(
        &model.store,
        |tape: &mut Tape<'_>| {
            let a = model.forward(tape, &cls, false)?;
            let la = model.loss(tape, &a, &cls.target)?;
            let b = model.forward(tape, &gen, false)?;
            let lb = model.loss(tape, &b, &gen.target)?;
            tape.add(la, lb)
        },
        1e-5,
        3,
        17,
    )
    .unwrap();
    let mut sorted = report.probes.clone();
    sorted.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    for p in sorted.iter().take(6) {
        eprintln!("{} [{}] analytic {:e} numeric {:e} rel {:e}", p.param, p.coord, p.analytic, p.numeric, p.rel_error);
    }
    let worst = report.worst().unwrap();
    eprintln!(
        "{} probes in {:.1?}; worst {} [{}]: analytic {:e} numeric {:e} rel {:e}",
        report.probes.len(),
        start.elapsed(),
        worst.param,
        worst.coord,
        worst.analytic,
        worst.numeric,
        worst.rel_error
    );
    assert!(report.probes.len() >= 200);
    assert!(report.max_rel_error() < 1e-4);
}

use somni_core::decoder::{ClassifierHead, Decoder, GeneratorHead};
use somni_core::model::{Head, ModelConfig, SOmninet, TaskSpec};
use somni_core::{ParamStore, Sample, Tensor};

fn decoder() -> (ParamStore, Decoder) {
    let mut store = ParamStore::new();
    let d = Decoder::new(&mut store, &mut rng(30), 8, 2, 2, 3).unwrap();
    (store, d)
}

fn block(tape: &mut Tape<'_>, seed: u64, n: usize) -> somni_core::Var {
    use rand::Rng;
    let mut r = rng(seed);
    tape.constant(Tensor::from_fn(&[n, 8], |_| r.random_range(-1.0..1.0)))
}

#[test]
fn decoder_skips_empty_caches() {
    let (store, dec) = decoder();
    let mut tape = Tape::with_params(&store);
    let zt = block(&mut tape, 1, 5);
    let empty = block(&mut tape, 2, 0);
    let out = dec.decode(&mut tape, 0, zt, empty).unwrap();
    assert_eq!(tape.shape(out.h), &[1, 8]);
    assert!(out.gates.is_empty() && out.spatial_weights.is_empty());
    assert_eq!(out.text_weights.len(), 2);
    assert!(dec.decode(&mut tape, 3, zt, empty).is_err());
}

#[test]
fn tasks_produce_distinct_outputs() {
    let (store, dec) = decoder();
    let mut tape = Tape::with_params(&store);
    let (zt, zp) = (block(&mut tape, 3, 4), block(&mut tape, 4, 6));
    let a = dec.decode(&mut tape, 0, zt, zp).unwrap().h;
    let b = dec.decode(&mut tape, 1, zt, zp).unwrap().h;
    let a2 = dec.decode(&mut tape, 0, zt, zp).unwrap().h;
    assert_ne!(tape.value(a), tape.value(b));
    assert_eq!(tape.value(a), tape.value(a2));
}

#[test]
fn saturated_gate_equals_ungated_attention() {
    let (mut store, dec) = decoder();
    for l in &dec.layers {
        store.get_mut(l.gate.b.unwrap()).data_mut().fill(1e3);
    }
    let mut tape = Tape::with_params(&store);
    let (zt, zp) = (block(&mut tape, 5, 4), block(&mut tape, 6, 6));
    let gated = dec.decode(&mut tape, 2, zt, zp).unwrap();
    let plain = dec.decode_ungated(&mut tape, 2, zt, zp).unwrap();
    assert!(gated.gates.iter().all(|&g| tape.value(g).iter().all(|&v| v == 1.0)));
    assert_eq!(tape.value(gated.h), tape.value(plain.h));
}

#[test]
fn gate_parameters_receive_gradient() {
    let (store, dec) = decoder();
    let mut tape = Tape::with_params(&store);
    let (zt, zp) = (block(&mut tape, 7, 4), block(&mut tape, 8, 6));
    let out = dec.decode(&mut tape, 1, zt, zp).unwrap();
    assert!(out.gates.iter().all(|&g| tape.value(g).iter().all(|&v| v > 0.0 && v < 1.0)));
    let l = tape.sum(out.h).unwrap();
    let sq = tape.mul(out.h, out.h).unwrap();
    let l2 = tape.sum(sq).unwrap();
    let loss = tape.add(l, l2).unwrap();
    let g = tape.backward(loss).unwrap();
    let gw = g.param(dec.layers[0].gate.w).unwrap();
    assert!(gw.iter().any(|&v| v != 0.0));
}

#[test]
fn classifier_zero_fills_missing_structured_slot() {
    let mut store = ParamStore::new();
    let head = ClassifierHead::new(&mut store, &mut rng(9), "c", 8, 2);
    let mut tape = Tape::with_params(&store);
    let h = block(&mut tape, 10, 1);
    let empty = block(&mut tape, 0, 0);
    let zeros = tape.constant(Tensor::zeros(&[3, 8]));
    let a = head.classify(&mut tape, h, empty).unwrap();
    let b = head.classify(&mut tape, h, zeros).unwrap();
    assert_eq!(tape.shape(a), &[1, 2]);
    assert_eq!(tape.value(a), tape.value(b));
    let zs = block(&mut tape, 11, 3);
    let mut swapped = tape.tensor(zs);
    let (r1, r2) = (swapped.row(1).to_vec(), swapped.row(2).to_vec());
    swapped.data_mut()[8..16].copy_from_slice(&r2);
    swapped.data_mut()[16..24].copy_from_slice(&r1);
    let zs2 = tape.constant(swapped);
    let c = head.classify(&mut tape, h, zs).unwrap();
    let d = head.classify(&mut tape, h, zs2).unwrap();
    assert_eq!(tape.value(c), tape.value(d));
    assert_eq!(store.count_trainable(true), 0);
}

#[test]
fn generator_emits_bounded_frames() {
    let mut store = ParamStore::new();
    let g = GeneratorHead::new(&mut store, &mut rng(12), "g", 8, 32, 32, 3).unwrap();
    let mut tape = Tape::with_params(&store);
    let h = block(&mut tape, 13, 1);
    let h = tape.scale(h, 50.0).unwrap();
    let f = g.generate(&mut tape, h).unwrap();
    assert_eq!(tape.shape(f), &[3, 32, 32]);
    assert!(tape.value(f).iter().all(|v| (-1.0..=1.0).contains(v)));
    let target = tape.tensor(f);
    let l = tape.l1_loss(f, &target).unwrap();
    assert_eq!(tape.value(l), &[0.0]);
    assert!(GeneratorHead::new(&mut store, &mut rng(0), "bad", 8, 24, 32, 3).is_err());
}

#[test]
fn parameter_count_formula_matches_construction() {
    let base = tiny_config();
    let variants = [
        base.clone(),
        ModelConfig { cca_layers: 2, freeze_vision: true, ..base.clone() },
        ModelConfig { fusion: somni_core::fusion::FusionMode::NoCca, schema: None, ..base.clone() },
        ModelConfig { decoder_layers: 2, temporal_layers: 3, patch: 1, patch_stride: 1, ..base.clone() },
        ModelConfig { tasks: vec![TaskSpec::classify("a", 4), TaskSpec::classify("b", 7)], ..ModelConfig::desk() },
    ];
    for cfg in variants {
        let m = SOmninet::new(cfg.clone(), tokenizer()).unwrap();
        for exclude in [false, true] {
            assert_eq!(m.count_params(exclude), cfg.count_params(m.tokenizer.len(), exclude), "{cfg:?}");
        }
    }
}

#[test]
fn parameter_count_grows_with_cross_attention_depth() {
    let v = 1000;
    let base = ModelConfig::desk();
    let deeper = ModelConfig { cca_layers: 2, ..base.clone() };
    assert!(deeper.count_params(v, true) > base.count_params(v, true));
    let wide = ModelConfig::full_width();
    assert!(wide.problems().is_empty());
    assert_eq!(wide.grid_side(), 7);
}

#[test]
fn checkpoint_round_trip_reproduces_outputs() {
    let model = tiny_model();
    let dir = std::env::temp_dir().join(format!("somni-ckpt-{}", std::process::id()));
    model.save(&dir).unwrap();
    let loaded = SOmninet::load(&dir).unwrap();
    let mut r = rng(14);
    for task in [0, 1] {
        let s = full_sample(&mut r, 16, task);
        let (a, b) = (model.prepare(&s).unwrap(), loaded.prepare(&s).unwrap());
        assert_eq!(model.infer(&a).unwrap(), loaded.infer(&b).unwrap());
    }
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    std::fs::write(dir.join("manifest.txt"), manifest.replace("head.cls.out.w", "head.other.out.w")).unwrap();
    assert!(SOmninet::load(&dir).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn variable_structured_source_counts_share_weights() {
    let model = tiny_model();
    let mut r = rng(15);
    let base = full_sample(&mut r, 16, 0);
    let sch = schema();
    for n in [0usize, 1, 2, 5] {
        let s = Sample { structured: (0..n).map(|_| structured(&mut r, &sch)).collect(), ..base.clone() };
        let p = model.prepare(&s).unwrap();
        let mut tape = Tape::with_params(&model.store);
        let out = model.forward(&mut tape, &p, false).unwrap();
        assert_eq!(out.caches.s.len(), n * 6);
        assert_eq!(tape.shape(out.output), &[1, 3]);
        assert_eq!(model.infer(&p).unwrap(), tape.tensor(out.output));
    }
}

#[test]
fn prepare_rejects_mismatched_labels() {
    let model = tiny_model();
    let mut s = full_sample(&mut rng(16), 16, 0);
    s.label = Label::Class(3);
    assert!(model.prepare(&s).is_err());
    s.task_id = 1;
    assert!(model.prepare(&s).is_err());
    s.task_id = 7;
    assert!(model.prepare(&s).is_err());
    assert!(matches!(model.heads[1], Head::Generate(_)));
}

#[test]
fn config_text_round_trip_and_unknown_keys() {
    let cfg = ModelConfig { sa_order: somni_core::fusion::SaOrder::Early, schema: None, ..tiny_config() };
    assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    assert!(ModelConfig::from_text("dim = 32\nbogus = 1\n").is_err());
    assert!(ModelConfig::from_text("sa_order = sideways\n").is_err());
    let bad = ModelConfig { dim: 30, cca_heads: 7, ..ModelConfig::desk() };
    assert!(bad.problems().len() >= 3);
}
