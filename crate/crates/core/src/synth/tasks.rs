use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::dataset::Annotation;
use super::scene::{coin, distinct, random_cells, Scene, SceneObject, COLORS, EXTENT, GRID, SHAPES, SIDE};
use crate::peripherals::StructuredSchema;
use crate::sample::{Image, Label, Sample, StructuredSample};
use crate::tensor::Precision;

/// One generated record plus its ground-truth annotation.
#[derive(Clone, Debug)]
pub struct Generated {
    pub sample: Sample,
    pub annotation: Annotation,
}

/// Answer classes of the question tasks: four colors then four shapes.
pub const ANSWER_CLASSES: usize = COLORS.len() + SHAPES.len();

pub fn answer_name(class: usize) -> &'static str {
    if class < COLORS.len() {
        COLORS[class]
    } else {
        SHAPES[class - COLORS.len()]
    }
}

/// A question about one attribute of one object, asked through the other.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Question {
    /// "what color is the <shape> ?"
    ColorOf(usize),
    /// "what shape is the <color> thing ?"
    ShapeOf(usize),
}

impl Question {
    pub fn text(self) -> String {
        match self {
            Self::ColorOf(s) => format!("what color is the {} ?", SHAPES[s]),
            Self::ShapeOf(c) => format!("what shape is the {} thing ?", COLORS[c]),
        }
    }

    /// Index of the word naming the referent.
    pub fn keyword(self) -> usize {
        4
    }

    pub fn answer(self, objects: &[SceneObject]) -> Option<usize> {
        match self {
            Self::ColorOf(s) => objects.iter().find(|o| o.shape == s).map(|o| o.color),
            Self::ShapeOf(c) => objects.iter().find(|o| o.color == c).map(|o| COLORS.len() + o.shape),
        }
    }

    pub fn referent(self, objects: &[SceneObject]) -> Option<&SceneObject> {
        objects.iter().find(|o| match self {
            Self::ColorOf(s) => o.shape == s,
            Self::ShapeOf(c) => o.color == c,
        })
    }
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Scene with `n` objects of pairwise distinct shapes and colors.
pub fn distinct_objects(rng: &mut ChaCha8Rng, n: usize) -> Vec<SceneObject> {
    let shapes = distinct(rng, SHAPES.len(), n);
    let colors = distinct(rng, COLORS.len(), n);
    let cells = random_cells(rng, n);
    (0..n).map(|i| SceneObject::at_cell(shapes[i], colors[i], cells[i])).collect()
}

fn question_about(rng: &mut ChaCha8Rng, target: &SceneObject) -> Question {
    if coin(rng) {
        Question::ColorOf(target.shape)
    } else {
        Question::ShapeOf(target.color)
    }
}

/// A question whose referent is absent from the scene.
fn absent_question(rng: &mut ChaCha8Rng, objects: &[SceneObject]) -> Question {
    loop {
        let q = if coin(rng) { Question::ColorOf(rng.random_range(0..SHAPES.len())) } else { Question::ShapeOf(rng.random_range(0..COLORS.len())) };
        if q.referent(objects).is_none() {
            return q;
        }
    }
}

/// Two objects, one question about one of them, and an irrelevant question
/// about an absent object placed before or after it with equal probability.
pub fn two_question(rng: &mut ChaCha8Rng, objects: usize) -> Generated {
    let objs = distinct_objects(rng, objects);
    let target = rng.random_range(0..objs.len());
    let relevant = question_about(rng, &objs[target]);
    let irrelevant = absent_question(rng, &objs);
    let before = coin(rng);
    let (rel, irr) = (relevant.text(), irrelevant.text());
    let (text, start) = if before { (format!("{irr} {rel}"), word_count(&irr)) } else { (format!("{rel} {irr}"), 0) };
    let answer = relevant.answer(&objs).expect("referent is present");
    let cell = objs[target].cell();
    let mut annotation = Annotation::new();
    annotation.insert("irrelevant".into(), if before { "before" } else { "after" }.into());
    annotation.insert("relevant_words".into(), format!("{}..{}", start, start + word_count(&rel)));
    annotation.insert("keyword".into(), (start + relevant.keyword()).to_string());
    annotation.insert("target_patch".into(), Scene::cell_index(cell).to_string());
    annotation.insert("answer".into(), answer_name(answer).into());
    let sample = Sample {
        image: Some(Scene::new(objs).render()),
        video: None,
        text: Some(text),
        structured: vec![],
        label: Label::Class(answer),
        task_id: 0,
    };
    Generated { sample, annotation }
}

/// Schema of the structured joint task: feature 0 names a color, features
/// 1..5 are noise.
pub fn joint_schema() -> StructuredSchema {
    let mut schema = StructuredSchema::uniform(&[COLORS.len(), 3, 3, 3, 3], 2);
    schema.features[0].name = "hue".into();
    schema.features[0].states = std::iter::once("EMPTY".to_string()).chain(COLORS.iter().map(|c| c.to_string())).collect();
    schema
}

/// Entry index of the hue entity within one structured source of the cache.
pub const HUE_ENTRY: usize = 1;

/// `objects` differently colored objects; the structured hue names one of
/// them and the label is 1 when that object sits in the top half of the
/// grid. Only the first source carries the signal; further sources are
/// noise.
pub fn structured_joint(rng: &mut ChaCha8Rng, objects: usize, sources: usize) -> Generated {
    let objs = distinct_objects(rng, objects.clamp(1, COLORS.len()));
    let target = rng.random_range(0..objs.len());
    let (row, _) = objs[target].cell();
    let top = row < GRID / 2;
    let entry = |rng: &mut ChaCha8Rng, hue: usize| StructuredSample {
        categorical: std::iter::once(hue + 1).chain((0..4).map(|_| rng.random_range(0..4))).collect(),
        numeric: (0..2).map(|_| Precision::F32.round(rng.random_range(-1.0..1.0))).collect(),
    };
    let mut structured = vec![entry(rng, objs[target].color)];
    for _ in 1..sources {
        let h = rng.random_range(0..COLORS.len());
        structured.push(entry(rng, h));
    }
    let mut annotation = Annotation::new();
    annotation.insert("object_patch".into(), Scene::cell_index(objs[target].cell()).to_string());
    annotation.insert("correlated_entry".into(), HUE_ENTRY.to_string());
    annotation.insert("top".into(), u8::from(top).to_string());
    let sample = Sample {
        image: Some(Scene::new(objs).render()),
        video: None,
        text: None,
        structured: if sources == 0 { vec![] } else { structured },
        label: Label::Class(usize::from(top)),
        task_id: 0,
    };
    Generated { sample, annotation }
}

/// Per-frame displacement of moving objects in pixels.
pub const STEP: usize = 4;

fn moving_object(rng: &mut ChaCha8Rng, steps: usize, axis_vertical: bool, forward: bool) -> (SceneObject, isize, isize) {
    let travel = STEP * steps;
    let span = SIDE - EXTENT - travel;
    let along = rng.random_range(0..=span) + if forward { 0 } else { travel };
    let across = rng.random_range(0..=SIDE - EXTENT);
    let (y, x) = if axis_vertical { (along, across) } else { (across, along) };
    let obj = SceneObject { shape: rng.random_range(0..SHAPES.len()), color: rng.random_range(0..COLORS.len()), y, x, extent: EXTENT };
    let d = if forward { STEP as isize } else { -(STEP as isize) };
    let (dy, dx) = if axis_vertical { (d, 0) } else { (0, d) };
    (obj, dy, dx)
}

fn frames_of(background: [f64; 3], obj: &SceneObject, dy: isize, dx: isize, n: usize) -> Vec<Image> {
    (0..n)
        .map(|f| {
            let mut o = obj.clone();
            o.y = (o.y as isize + dy * f as isize) as usize;
            o.x = (o.x as isize + dx * f as isize) as usize;
            Scene { background, objects: vec![o] }.render()
        })
        .collect()
}

/// An object moving up or down across `frames` frames with a caption;
/// label 1 when it moves up.
pub fn video_sentiment(rng: &mut ChaCha8Rng, frames: usize) -> Generated {
    let up = coin(rng);
    let (obj, dy, dx) = moving_object(rng, frames - 1, true, !up);
    let text = format!("the {} {} is moving", COLORS[obj.color], SHAPES[obj.shape]);
    let video = frames_of([0.0; 3], &obj, dy, dx, frames);
    let mut annotation = Annotation::new();
    annotation.insert("direction".into(), if up { "up" } else { "down" }.into());
    let sample = Sample { image: None, video: Some(video), text: Some(text), structured: vec![], label: Label::Class(usize::from(up)), task_id: 0 };
    Generated { sample, annotation }
}

pub const BACKGROUNDS: [[f64; 3]; 4] = [[-0.5, -0.5, -0.5], [0.25, -0.25, -0.5], [-0.5, 0.25, 0.25], [0.0, 0.0, 0.0]];

/// An object moving at constant velocity over a per-sample background; the
/// target is the frame after the last input frame.
pub fn next_frame(rng: &mut ChaCha8Rng, frames: usize) -> Generated {
    let background = BACKGROUNDS[rng.random_range(0..BACKGROUNDS.len())];
    let (vertical, forward) = (coin(rng), coin(rng));
    let (obj, dy, dx) = moving_object(rng, frames, vertical, forward);
    let mut all = frames_of(background, &obj, dy, dx, frames + 1);
    let target = all.pop().expect("frames + 1 > 0");
    let mut annotation = Annotation::new();
    annotation.insert("velocity".into(), format!("{dy},{dx}"));
    let sample = Sample { image: None, video: Some(all), text: None, structured: vec![], label: Label::Frame(target), task_id: 0 };
    Generated { sample, annotation }
}

/// Mean absolute error of predicting the last input frame as the next one.
pub fn previous_frame_mae(sample: &Sample) -> Option<f64> {
    match (&sample.video, &sample.label) {
        (Some(frames), Label::Frame(target)) => frames.last().map(|last| last.mean_abs_diff(target)),
        _ => None,
    }
}
