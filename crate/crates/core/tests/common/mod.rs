#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use somni_core::peripherals::{StructuredSchema, Tokenizer};
use somni_core::{Image, Label, ModelConfig, SOmninet, Sample, StructuredSample, TaskSpec};

pub fn random_image(rng: &mut ChaCha8Rng, side: usize) -> Image {
    let data = (0..side * side * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    Image::new(side, side, 3, data).unwrap()
}

pub fn schema() -> StructuredSchema {
    StructuredSchema::uniform(&[3, 4, 2, 3, 2], 4)
}

pub fn structured(rng: &mut ChaCha8Rng, schema: &StructuredSchema) -> StructuredSample {
    StructuredSample {
        categorical: schema.features.iter().map(|f| rng.random_range(0..f.states.len())).collect(),
        numeric: (0..schema.numeric_dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

pub fn tokenizer() -> Tokenizer {
    Tokenizer::build(["what color is the cube", "is the ball red", "how many things are there"], 12)
}

/// A small model with one classification and one generation task.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        dim: 16,
        d_dom: 4,
        d_m: 8,
        image_size: 16,
        max_frames: 4,
        max_tokens: 16,
        text_heads: 2,
        cca_heads: 2,
        sa_heads: 2,
        temporal_heads: 4,
        decoder_heads: 2,
        tasks: vec![TaskSpec::classify("cls", 3), TaskSpec::generate("gen", 16, 16, 3)],
        schema: Some(schema()),
        seed: 5,
        ..ModelConfig::desk()
    }
}

pub fn tiny_model() -> SOmninet {
    SOmninet::new(tiny_config(), tokenizer()).unwrap()
}

/// A sample carrying every modality.
pub fn full_sample(rng: &mut ChaCha8Rng, side: usize, task_id: usize) -> Sample {
    let s = schema();
    let label = if task_id == 0 { Label::Class(1) } else { Label::Frame(random_image(rng, side)) };
    Sample {
        image: Some(random_image(rng, side)),
        video: Some(vec![random_image(rng, side), random_image(rng, side)]),
        text: Some("what colour is the cube".into()),
        structured: vec![structured(rng, &s), structured(rng, &s)],
        label,
        task_id,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
