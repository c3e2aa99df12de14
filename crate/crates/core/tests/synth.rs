use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use somni_core::synth::categorical::{mi_permutation_test, mutual_information, SUM_TOL};
use somni_core::synth::cluster::KMEANS_ITERATIONS;
use somni_core::synth::importance::top_scored;
use somni_core::synth::scene::{Scene, SceneObject, COLORS, RGB};
use somni_core::synth::svqa::{assemble_svqa, base_sample, important_elements, random_word_embedding, MAX_EMPTY_RATE};
use somni_core::synth::tasks::{next_frame, previous_frame_mae, structured_joint, two_question, HUE_ENTRY};
use somni_core::synth::*;
use somni_core::Label;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn single_major_prior_follows_the_normalization_rule() {
    // 0.8 / (0.8 + 3 * 0.1) = 8/11, not the commonly quoted 0.7.
    let f = prior_from_majors(4, &[0]).unwrap();
    assert!(close(f.probs(), &[8.0 / 11.0, 1.0 / 11.0, 1.0 / 11.0, 1.0 / 11.0], 1e-12));
    assert!((f.probs()[0] - 0.7).abs() > 0.02);
}

#[test]
fn two_major_prior_follows_the_normalization_rule() {
    // normalize(0.8, 0.8, 0.1) = (0.471, 0.471, 0.059), not (0.45, 0.45, 0.1).
    let f = prior_from_majors(3, &[0, 1]).unwrap();
    assert!(close(f.probs(), &[8.0 / 17.0, 8.0 / 17.0, 1.0 / 17.0], 1e-12));
    assert!((f.probs()[0] - 0.45).abs() > 0.015);
    assert!(prior_from_majors(3, &[3]).is_err());
}

#[test]
fn mixing_examples() {
    let x = CategoricalDistribution::uniform(4).unwrap();
    let y = CategoricalDistribution::new(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
    assert!(close(x.mix(&y).unwrap().probs(), &[0.475, 0.175, 0.175, 0.175], 1e-12));
    assert_eq!(y.mix(&y).unwrap(), y);
    assert!(x.mix(&CategoricalDistribution::uniform(3).unwrap()).is_err());
}

#[test]
fn invalid_distributions_are_rejected() {
    assert!(CategoricalDistribution::new(vec![0.5, 0.6]).is_err());
    assert!(CategoricalDistribution::new(vec![1.5, -0.5]).is_err());
    assert!(CategoricalDistribution::new(vec![]).is_err());
    assert!(CategoricalDistribution::from_weights(&[0.0, 0.0]).is_err());
    assert_eq!(CategoricalDistribution::empirical(&[0, 0]).unwrap().probs(), &[0.5, 0.5]);
}

#[test]
fn dirichlet_mean_matches_the_prior() {
    let mut r = rng(1);
    for (n, majors) in [(4, vec![0]), (3, vec![0, 1]), (5, vec![2])] {
        let f = prior_from_majors(n, &majors).unwrap();
        let alpha: Vec<f64> = f.probs().iter().map(|p| categorical::SHARPNESS * p).collect();
        let mut mean = vec![0.0; n];
        let draws = 10_000;
        for _ in 0..draws {
            let d = dirichlet(&alpha, &mut r).unwrap();
            assert!((d.probs().iter().sum::<f64>() - 1.0).abs() <= SUM_TOL);
            for (m, p) in mean.iter_mut().zip(d.probs()) {
                *m += p / draws as f64;
            }
        }
        assert!(close(&mean, f.probs(), 0.01), "{mean:?} vs {:?}", f.probs());
    }
}

#[test]
fn perturbed_frequencies_track_z() {
    let mut r = rng(2);
    let mut values: Vec<usize> = (0..10_000).map(|_| r.random_range(1..=4)).collect();
    let p = perturb_feature(&mut values, 4, &prior_from_majors(4, &[2]).unwrap(), &mut r).unwrap();
    let mut counts = [0usize; 4];
    for v in &values {
        counts[v - 1] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / values.len() as f64).collect();
    assert!(close(&freq, p.z.probs(), 0.02), "{freq:?} vs {:?}", p.z.probs());
}

#[test]
fn empty_values_survive_perturbation() {
    let mut r = rng(3);
    let mut values = vec![0, 1, 0, 2, 3, 0];
    perturb_feature(&mut values, 3, &prior_from_majors(3, &[0]).unwrap(), &mut r).unwrap();
    assert_eq!([values[0], values[2], values[5]], [0, 0, 0]);
    assert!(values.iter().all(|&v| v <= 3));
    assert!(perturb_feature(&mut [4], 3, &prior_from_majors(3, &[0]).unwrap(), &mut r).is_err());
    assert!(perturb_feature(&mut [1], 3, &prior_from_majors(4, &[0]).unwrap(), &mut r).is_err());
}

proptest! {
    #[test]
    fn mixed_distributions_sum_to_one(weights in proptest::collection::vec(0.0f64..5.0, 1..12), seed in 0u64..1000) {
        prop_assume!(weights.iter().sum::<f64>() > 1e-6);
        let x = CategoricalDistribution::from_weights(&weights).unwrap();
        let alpha: Vec<f64> = weights.iter().map(|w| w + 0.05).collect();
        let y = dirichlet(&alpha, &mut rng(seed)).unwrap();
        let z = x.mix(&y).unwrap();
        prop_assert!((z.probs().iter().sum::<f64>() - 1.0).abs() <= SUM_TOL);
        prop_assert!(z.probs().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn combination_pool_never_repeats(n in 1usize..9, seed in 0u64..500) {
        let cap = n + n * (n - 1) / 2;
        let combos = major_combinations(n, cap, seed).unwrap();
        let mut sorted = combos.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), combos.len());
        prop_assert!(combos.iter().flatten().all(|&c| c < n));
        prop_assert!(major_combinations(n, cap + 1, seed).is_err());
        prop_assert_eq!(major_combinations(n, cap, seed).unwrap(), combos);
    }

    #[test]
    fn samples_stay_in_range(weights in proptest::collection::vec(0.0f64..1.0, 1..8), seed in 0u64..1000) {
        prop_assume!(weights.iter().sum::<f64>() > 1e-6);
        let d = CategoricalDistribution::from_weights(&weights).unwrap();
        let mut r = rng(seed);
        for _ in 0..50 {
            let s = d.sample(&mut r);
            prop_assert!(s < weights.len() && weights[s] > 0.0);
        }
    }
}

#[test]
fn perturbation_plants_label_signal() {
    let mut r = rng(4);
    let classes = 3;
    let labels: Vec<usize> = (0..600).map(|i| i % classes).collect();
    let mut feature: Vec<usize> = (0..600).map(|_| r.random_range(1..=4)).collect();
    let combos = major_combinations(4, classes, 9).unwrap();
    for (k, combo) in combos.iter().enumerate() {
        let idx: Vec<usize> = (0..600).filter(|&i| labels[i] == k).collect();
        let mut col: Vec<usize> = idx.iter().map(|&i| feature[i]).collect();
        perturb_feature(&mut col, 4, &prior_from_majors(4, combo).unwrap(), &mut r).unwrap();
        for (&i, v) in idx.iter().zip(col) {
            feature[i] = v;
        }
    }
    let (mi, p) = mi_permutation_test(&feature, &labels, 199, &mut r);
    assert!(mi > 0.0 && p < 0.01, "mi {mi} p {p}");
}

#[test]
fn mutual_information_examples() {
    assert_eq!(mutual_information(&[0, 1, 0, 1], &[0, 0, 1, 1]), 0.0);
    assert!((mutual_information(&[0, 1, 0, 1], &[1, 0, 1, 0]) - 2f64.ln()).abs() < 1e-12);
    assert_eq!(mutual_information(&[], &[]), 0.0);
}

#[test]
fn svqa_features_meet_the_statistics() {
    let cfg = SyntheticGenConfig::default();
    let (gen, clustered, _) = assemble_svqa(400, &cfg, 0).unwrap();
    assert_eq!(clustered.schema.features.len(), 5);
    assert!(clustered.empty_rate() < MAX_EMPTY_RATE, "{}", clustered.empty_rate());
    let labels: Vec<usize> = gen.iter().map(|g| if let Label::Class(c) = g.sample.label { c } else { unreachable!() }).collect();
    let mut r = rng(5);
    for f in 0..5 {
        let column: Vec<usize> = gen.iter().map(|g| g.sample.structured[0].categorical[f]).collect();
        let (_, p) = mi_permutation_test(&column, &labels, 199, &mut r);
        assert!(p < 0.01, "feature {f}: p {p}");
    }
    let data = gen_numeric(2, 8, 0.1, 500, &mut rng(6)).unwrap();
    let hits = data.vectors.iter().zip(&data.labels).filter(|(v, &l)| nearest_centroid(&data.centroids, v) == l).count();
    assert!(hits as f64 / data.vectors.len() as f64 > 0.95);
}

#[test]
fn numeric_generation_validates_sigma() {
    assert!(gen_numeric(2, 3, 0.0, 5, &mut rng(0)).is_err());
    let d = gen_numeric(3, 2, 0.5, 4, &mut rng(0)).unwrap();
    assert_eq!((d.vectors.len(), d.labels.len(), d.centroids.len()), (12, 12, 3));
    assert_eq!(nearest_centroid(&[vec![0.0], vec![2.0]], &[1.0]), 0);
}

#[test]
fn kmeans_reduces_clusters_with_warning() {
    let pts = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]];
    let km = kmeans(&pts, 5, KMEANS_ITERATIONS, &mut rng(7)).unwrap();
    assert_eq!(km.centroids.len(), 2);
    assert!(km.warning.is_some());
    assert_eq!(km.assignments[0], km.assignments[1]);
    assert_ne!(km.assignments[0], km.assignments[2]);
    assert!(kmeans(&[], 2, 1, &mut rng(0)).is_err());
}

#[test]
fn kmeans_is_deterministic_and_separates_blobs() {
    let mut r = rng(8);
    let pts: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 3) as f64 * 10.0 + r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)]).collect();
    let a = kmeans(&pts, 3, KMEANS_ITERATIONS, &mut rng(9)).unwrap();
    let b = kmeans(&pts, 3, KMEANS_ITERATIONS, &mut rng(9)).unwrap();
    assert_eq!(a.assignments, b.assignments);
    for i in 0..60 {
        assert_eq!(a.assignments[i], a.assignments[i % 3]);
    }
    assert!(a.warning.is_none());
}

#[test]
fn top_scores_break_ties_by_position() {
    let s = [0.5, 0.9, 0.5, 0.9, 0.1];
    let top: Vec<usize> = top_scored(&s, 3).iter().map(|t| t.index).collect();
    assert_eq!(top, vec![1, 3, 0]);
    assert!(top_scored(&s, 0).is_empty());
    assert_eq!(top_scored(&s, 10).len(), 5);
    let imp = extract_important(&ImportanceScores { words: vec![0.1, 0.2], regions: vec![] }, 1, 2);
    assert_eq!(imp.words[0].index, 1);
    assert!(imp.regions.is_empty());
}

#[test]
fn oracle_returns_the_planted_word_first() {
    let mut r = rng(10);
    let bases: Vec<_> = (0..4).map(|k| base_sample(k, &mut r)).collect();
    let oracle = OracleProvider { scores: bases.iter().map(|b| b.oracle.clone()).collect() };
    let cfg = SyntheticGenConfig::default();
    let els = important_elements(&bases, &oracle, &cfg, &|w| random_word_embedding(w, 4, 0)).unwrap();
    for (i, b) in bases.iter().enumerate() {
        let first = els.iter().find(|e| e.sample == i && e.kind == ElementKind::Word).unwrap();
        let words: Vec<&str> = b.text.split_whitespace().collect();
        assert_eq!(first.key, words[5]);
        assert_eq!(first.score, 1.0);
        assert_eq!(els.iter().filter(|e| e.sample == i).count(), cfg.words + cfg.regions);
    }
    assert!(oracle.scores(9, &somni_core::Sample { image: None, video: None, text: None, structured: vec![], label: Label::Class(0), task_id: 0 }).is_err());
}

#[test]
fn word_embeddings_depend_only_on_word_and_seed() {
    assert_eq!(random_word_embedding("red", 8, 1), random_word_embedding("red", 8, 1));
    assert_ne!(random_word_embedding("red", 8, 1), random_word_embedding("red", 8, 2));
    assert_ne!(random_word_embedding("red", 8, 1), random_word_embedding("blue", 8, 1));
}

#[test]
fn irrelevant_question_position_is_balanced() {
    let mut r = rng(11);
    let n = 20_000;
    let before = (0..n).filter(|_| two_question(&mut r, 2).annotation["irrelevant"] == "before").count();
    assert!((before as f64 / n as f64 - 0.5).abs() < 0.02);
}

#[test]
fn two_question_annotations_point_at_the_answer() {
    let mut r = rng(12);
    for _ in 0..200 {
        let g = two_question(&mut r, 3);
        let words: Vec<&str> = g.sample.text.as_deref().unwrap().split_whitespace().collect();
        let (a, b) = g.annotation["relevant_words"].split_once("..").unwrap();
        let (a, b): (usize, usize) = (a.parse().unwrap(), b.parse().unwrap());
        assert_eq!(b - a, if words[a + 1] == "color" { 6 } else { 7 });
        let kw: usize = g.annotation["keyword"].parse().unwrap();
        assert!(a <= kw && kw < b);
        let Label::Class(answer) = g.sample.label else { panic!() };
        assert_eq!(tasks::answer_name(answer), g.annotation["answer"]);
    }
}

#[test]
fn rendered_cells_carry_object_colors() {
    let obj = SceneObject::at_cell(0, 2, (1, 3));
    let img = Scene::new(vec![obj]).render();
    let (y, x) = (8 + 4, 24 + 4);
    assert_eq!((0..3).map(|c| img.at(y, x, c)).collect::<Vec<_>>(), RGB[2].to_vec());
    assert_eq!(img.at(0, 0, 0), 0.0);
    assert_eq!(Scene::cell_index((1, 3)), 7);
}

#[test]
fn structured_joint_labels_follow_the_hued_object() {
    let mut r = rng(13);
    for _ in 0..200 {
        let g = structured_joint(&mut r, 2, 1);
        let hue = g.sample.structured[0].categorical[0] - 1;
        assert!(hue < COLORS.len());
        let patch: usize = g.annotation["object_patch"].parse().unwrap();
        let img = g.sample.image.as_ref().unwrap();
        let (cy, cx) = ((patch / 4) * 8 + 3, (patch % 4) * 8 + 3);
        let rgb: Vec<f64> = (0..3).map(|c| img.at(cy, cx, c)).collect();
        assert_eq!(rgb, RGB[hue].to_vec());
        assert_eq!(g.sample.label, Label::Class(usize::from(patch < 8)));
        assert_eq!(g.annotation["correlated_entry"], HUE_ENTRY.to_string());
    }
    assert!(structured_joint(&mut r, 2, 0).sample.structured.is_empty());
    assert_eq!(structured_joint(&mut r, 2, 3).sample.structured.len(), 3);
}

#[test]
fn next_frame_continues_the_motion() {
    let mut r = rng(14);
    let g = next_frame(&mut r, 3);
    let frames = g.sample.video.as_ref().unwrap();
    assert_eq!(frames.len(), 3);
    assert!(previous_frame_mae(&g.sample).unwrap() > 0.0);
    let Label::Frame(target) = &g.sample.label else { panic!() };
    assert_eq!(frames[0].mean_abs_diff(&frames[1]), frames[1].mean_abs_diff(&frames[2]));
    assert_eq!(frames[2].mean_abs_diff(target), frames[1].mean_abs_diff(&frames[2]));
}

fn files(dir: &std::path::Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn temp(name: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("somni-synth-{name}-{}", std::process::id()))
}

#[test]
fn same_seed_writes_identical_files() {
    for task in ToyTask::ALL {
        let mut cfg = DatasetConfig::new(task, 12, 4, 4, 3);
        cfg.gen.per_class = 10;
        let (a, b) = (temp(&format!("a-{}", task.name())), temp(&format!("b-{}", task.name())));
        write_dataset(&assemble_dataset(&cfg).unwrap(), &a).unwrap();
        write_dataset(&assemble_dataset(&cfg).unwrap(), &b).unwrap();
        let (fa, fb) = (files(&a), files(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{}", task.name());
        cfg.seed = 4;
        let c = temp(&format!("c-{}", task.name()));
        write_dataset(&assemble_dataset(&cfg).unwrap(), &c).unwrap();
        assert_ne!(files(&c), fa);
        for d in [a, b, c] {
            std::fs::remove_dir_all(d).unwrap();
        }
    }
}

#[test]
fn written_datasets_read_back() {
    for task in ToyTask::ALL {
        let mut cfg = DatasetConfig::new(task, 6, 3, 3, 5);
        cfg.sources = 2;
        let ds = assemble_dataset(&cfg).unwrap();
        let dir = temp(&format!("rt-{}", task.name()));
        write_dataset(&ds, &dir).unwrap();
        let back = read_dataset(&dir, true).unwrap();
        assert_eq!(back.config, ds.config);
        assert_eq!(back.tasks, ds.tasks);
        assert_eq!(back.schema, ds.schema);
        assert_eq!(back.splits, ds.splits, "{}", task.name());
        let blind = read_dataset(&dir, false).unwrap();
        assert!(blind.splits.iter().all(|s| s.annotations.iter().all(|a| a.is_empty())));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn split_sizes_do_not_perturb_other_splits() {
    let a = assemble_dataset(&DatasetConfig::new(ToyTask::TwoQuestion, 5, 3, 3, 1)).unwrap();
    let b = assemble_dataset(&DatasetConfig::new(ToyTask::TwoQuestion, 9, 3, 3, 1)).unwrap();
    assert_eq!(a.split("val").unwrap(), b.split("val").unwrap());
    assert_eq!(a.split("train").unwrap().samples[..5], b.split("train").unwrap().samples[..5]);
    assert!(a.split("dev").is_err());
}

#[test]
fn dataset_config_round_trips_and_validates() {
    let mut cfg = DatasetConfig::new(ToyTask::Svqa, 10, 2, 2, 7);
    cfg.set("sigma", "0.25").unwrap();
    assert_eq!(DatasetConfig::from_text(&somni_core::config::render_kv(&cfg.to_kv())).unwrap(), cfg);
    assert!(DatasetConfig::from_text("task = svqa\nclasses = 9\nobjects = 7\n").is_err());
    assert!(DatasetConfig::from_text("task = nope\n").is_err());
    assert!(DatasetConfig::from_text("flavour = 1\n").is_err());
    assert!(assemble_dataset(&DatasetConfig { objects: 9, ..DatasetConfig::new(ToyTask::TwoQuestion, 1, 1, 1, 0) }).is_err());
}
