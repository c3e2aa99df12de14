mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use somni_core::cache::{patchify, patchify_tensor, pool_frame, unpatchify, Domain, DomainEncoder, Origin, PatchCoord, PatchGeometry, PositionalTables};
use somni_core::nn::Linear;
use somni_core::peripherals::{FeatureMap, MapSource};
use somni_core::{Error, Label, ParamStore, Sample, Tape, Tensor};

fn random_map(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(&[c, h, w], |_| r.random_range(-1.0..1.0))
}

#[test]
fn patch_counts_follow_the_area_formula() {
    for (side_h, side_w, p) in [(14, 14, 2), (8, 8, 2), (8, 8, 4), (6, 9, 3), (12, 4, 2), (10, 10, 5)] {
        let geom = PatchGeometry::square(p);
        let (patches, _) = patchify_tensor(&random_map(0, 3, side_h, side_w), geom).unwrap();
        assert_eq!(patches.shape(), &[side_h * side_w / (p * p), p * p * 3]);
    }
    let (p, _) = patchify_tensor(&random_map(0, 3, 14, 14), PatchGeometry::square(2)).unwrap();
    assert_eq!(p.rows(), 49);
}

#[test]
fn unit_patches_are_pixel_vectors() {
    let map = random_map(1, 4, 3, 5);
    let (p, coords) = patchify_tensor(&map, PatchGeometry::square(1)).unwrap();
    assert_eq!(p.shape(), &[15, 4]);
    for (k, c) in coords.iter().enumerate() {
        for ch in 0..4 {
            assert_eq!(p.get(&[k, ch]), map.get(&[ch, c.y, c.x]));
        }
    }
}

#[test]
fn patches_enumerate_row_major() {
    let (_, coords) = patchify_tensor(&random_map(2, 1, 4, 6), PatchGeometry::square(2)).unwrap();
    let xy: Vec<(usize, usize)> = coords.iter().map(|c| (c.x, c.y)).collect();
    assert_eq!(xy, vec![(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]);
}

#[test]
fn overlapping_stride_is_supported() {
    let geom = PatchGeometry { p_h: 2, p_w: 2, stride: 1 };
    let (p, _) = patchify_tensor(&random_map(3, 2, 4, 4), geom).unwrap();
    assert_eq!(p.rows(), 9);
}

#[test]
fn oversized_patch_is_a_config_error() {
    let err = patchify_tensor(&random_map(0, 1, 3, 8), PatchGeometry::square(4)).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn eight_by_eight_round_trip() {
    let map = random_map(4, 32, 8, 8);
    let geom = PatchGeometry::square(2);
    let (p, _) = patchify_tensor(&map, geom).unwrap();
    assert_eq!(p.rows(), 16);
    assert_eq!(unpatchify(&p, 32, 8, 8, geom).unwrap(), map);
}

proptest! {
    #[test]
    fn patchify_round_trips(c in 1usize..4, gh in 1usize..5, gw in 1usize..5, p in 1usize..4, seed in 0u64..1000) {
        let (h, w) = (gh * p, gw * p);
        let map = random_map(seed, c, h, w);
        let geom = PatchGeometry::square(p);
        let (patches, _) = patchify_tensor(&map, geom).unwrap();
        prop_assert_eq!(patches.rows(), (h * w) / (p * p));
        prop_assert_eq!(unpatchify(&patches, c, h, w, geom).unwrap(), map);
    }
}

#[test]
fn tape_patchify_matches_tensor_patchify() {
    let map = random_map(5, 3, 6, 6);
    let geom = PatchGeometry::square(3);
    let mut tape = Tape::new();
    let grid = tape.constant(map.clone());
    let seq = patchify(&mut tape, &FeatureMap { grid, source: MapSource::Frame(2) }, geom).unwrap();
    let (expected, _) = patchify_tensor(&map, geom).unwrap();
    assert_eq!(tape.tensor(seq.patches), expected);
    assert!(seq.coords.iter().all(|c| c.f == 2));
}

#[test]
fn patch_projection_matches_row_oracle() {
    let mut store = ParamStore::new();
    let e = Linear::new(&mut store, &mut rng(6), "e", 12, 5, false);
    let patches = random_map(7, 1, 4, 12).reshape(&[4, 12]).unwrap();
    let mut tape = Tape::with_params(&store);
    let x = tape.constant(patches.clone());
    let y = e.forward(&mut tape, x).unwrap();
    let y = tape.tensor(y);
    let w = store.get(e.w);
    for r in 0..4 {
        for c in 0..5 {
            let oracle: f64 = (0..12).map(|k| patches.get(&[r, k]) * w.get(&[k, c])).sum();
            assert!((y.get(&[r, c]) - oracle).abs() < 1e-12);
        }
    }
    let zeros = tape.constant(Tensor::zeros(&[2, 12]));
    let z = e.forward(&mut tape, zeros).unwrap();
    assert!(tape.value(z).iter().all(|&v| v == 0.0));
}

#[test]
fn positional_embedding_splits_quarter_quarter_half() {
    let mut store = ParamStore::new();
    let tables = PositionalTables::new(&mut store, &mut rng(8), 7, 5, 512).unwrap();
    let coords = [
        PatchCoord { x: 1, y: 2, f: 0 },
        PatchCoord { x: 1, y: 2, f: 3 },
        PatchCoord { x: 1, y: 2, f: 0 },
    ];
    let mut tape = Tape::with_params(&store);
    let e = tables.embed(&mut tape, &coords).unwrap();
    let e = tape.tensor(e);
    assert_eq!(e.shape(), &[3, 512]);
    assert_eq!(e.row(0), e.row(2));
    assert_eq!(&e.row(0)[..256], &e.row(1)[..256]);
    assert_ne!(&e.row(0)[256..], &e.row(1)[256..]);
    assert_eq!(&e.row(0)[..128], store.get(tables.x).row(1));
    assert_eq!(&e.row(0)[128..256], store.get(tables.y).row(2));
    assert_eq!(&e.row(1)[256..], store.get(tables.f).row(3));
    assert!(tables.embed(&mut tape, &[PatchCoord { x: 7, y: 0, f: 0 }]).is_err());
    assert!(PositionalTables::new(&mut store, &mut rng(0), 2, 2, 10).is_err());
}

#[test]
fn domain_stamp_distinguishes_domains() {
    let mut store = ParamStore::new();
    let dom = DomainEncoder::new(&mut store, &mut rng(9), 8, 3);
    let mut tape = Tape::with_params(&store);
    let row = tape.constant(random_map(10, 1, 1, 8).reshape(&[1, 8]).unwrap());
    let a = dom.apply(&mut tape, row, Domain::Text as usize).unwrap();
    let b = dom.apply(&mut tape, row, Domain::Spatial as usize).unwrap();
    assert_eq!(tape.shape(a), &[1, 8]);
    assert_ne!(tape.value(a), tape.value(b));
    let empty = tape.constant(Tensor::zeros(&[0, 8]));
    let e = dom.apply(&mut tape, empty, Domain::Frame as usize).unwrap();
    assert_eq!(tape.shape(e), &[0, 8]);
    assert!(dom.apply(&mut tape, row, 4).is_err());
}

#[test]
fn frame_pool_is_the_mean() {
    let rows = random_map(11, 1, 5, 6).reshape(&[5, 6]).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(rows.clone());
    let p = pool_frame(&mut tape, x).unwrap();
    let p = tape.tensor(p);
    for c in 0..6 {
        let mean = (0..5).map(|r| rows.get(&[r, c])).sum::<f64>() / 5.0;
        assert!((p.get(&[0, c]) - mean).abs() < 1e-12);
    }
    let same = tape.constant(Tensor::from_fn(&[3, 2], |i| [0.25, -1.5][i % 2]));
    let pooled = pool_frame(&mut tape, same).unwrap();
    assert_eq!(tape.value(pooled), &[0.25, -1.5]);
    let empty = tape.constant(Tensor::zeros(&[0, 2]));
    assert!(pool_frame(&mut tape, empty).is_err());
}

fn caches_for(sample: &Sample) -> (usize, usize, usize, Vec<Origin>, Vec<Origin>) {
    let model = tiny_model();
    let p = model.prepare(sample).unwrap();
    let mut tape = Tape::with_params(&model.store);
    let c = model.build_caches(&mut tape, &p).unwrap();
    for cache in [&c.s, &c.t, &c.p] {
        assert_eq!(tape.shape(cache.entries), &[cache.len(), 16]);
    }
    (c.s.len(), c.t.len(), c.p.len(), c.t.origin.clone(), c.s.origin.clone())
}

#[test]
fn image_only_sample_fills_only_the_spatial_cache() {
    let mut r = rng(12);
    let s = Sample { image: Some(random_image(&mut r, 16)), video: None, text: None, structured: vec![], label: Label::Class(0), task_id: 0 };
    let (ns, nt, np, _, _) = caches_for(&s);
    assert_eq!((ns, nt, np), (0, 0, 4));
}

#[test]
fn cache_sizes_track_inputs() {
    let mut r = rng(13);
    let mut s = full_sample(&mut r, 16, 0);
    let q = tokenizer().tokenize(s.text.as_deref().unwrap()).len();
    let (ns, nt, np, t_origin, s_origin) = caches_for(&s);
    assert_eq!(ns, 2 * (1 + 5));
    assert_eq!(s_origin[0], Origin::StructuredWhole);
    assert_eq!(s_origin[6], Origin::StructuredWhole);
    assert_eq!(nt, q + 2);
    assert!(t_origin[..q].iter().all(|&o| o == Origin::TextToken));
    assert!(t_origin[q..].iter().all(|&o| o == Origin::FramePool));
    assert_eq!(np, 3 * 4);

    let frames = s.video.clone().unwrap();
    s.video = Some(frames.iter().chain(&frames).cloned().collect());
    let (_, nt2, np2, _, _) = caches_for(&s);
    assert_eq!(nt2 - q, 2 * (nt - q));
    assert_eq!(np2 - 4, 2 * (np - 4));
}

#[test]
fn cache_construction_is_deterministic() {
    let model = tiny_model();
    let s = full_sample(&mut rng(14), 16, 0);
    let p = model.prepare(&s).unwrap();
    let run = || {
        let mut tape = Tape::with_params(&model.store);
        let c = model.build_caches(&mut tape, &p).unwrap();
        [c.s.entries, c.t.entries, c.p.entries].map(|v| tape.tensor(v))
    };
    assert_eq!(run(), run());
}
