//! Modality encoders producing intermediate encodings.

pub mod structured;
pub mod text;
pub mod tokenizer;
pub mod vision;

pub use structured::{CategoricalFeature, MinMaxScaler, StructuredEncoding, StructuredPeripheral, StructuredSchema, EMPTY};
pub use text::TextPeripheral;
pub use tokenizer::Tokenizer;
pub use vision::{FeatureMap, MapSource, VisionPeripheral, VISION_STRIDE};
