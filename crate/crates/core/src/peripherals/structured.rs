use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{init, ParamId, ParamStore};
use crate::sample::StructuredSample;
use crate::tensor::Tensor;

pub const EMPTY: &str = "EMPTY";

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalFeature {
    pub name: String,
    /// State 0 is always `EMPTY`.
    pub states: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructuredSchema {
    pub features: Vec<CategoricalFeature>,
    pub numeric_dim: usize,
}

impl StructuredSchema {
    /// Builds features named `f0..` with `EMPTY` plus `n` states `s1..sn` each.
    pub fn uniform(feature_states: &[usize], numeric_dim: usize) -> Self {
        let features = feature_states
            .iter()
            .enumerate()
            .map(|(i, &n)| CategoricalFeature {
                name: format!("f{i}"),
                states: std::iter::once(EMPTY.to_string()).chain((1..=n).map(|s| format!("s{s}"))).collect(),
            })
            .collect();
        StructuredSchema { features, numeric_dim }
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.features {
            if f.states.len() < 2 {
                return Err(Error::Schema(format!("feature {} needs at least 2 states", f.name)));
            }
            if f.states[0] != EMPTY {
                return Err(Error::Schema(format!("feature {} must start with {EMPTY}", f.name)));
            }
        }
        Ok(())
    }

    /// Width of the one-hot block; `EMPTY` encodes as all zeros.
    pub fn one_hot_dim(&self) -> usize {
        self.features.iter().map(|f| f.states.len() - 1).sum()
    }

    pub fn check(&self, s: &StructuredSample) -> Result<()> {
        if s.categorical.len() != self.features.len() {
            return Err(Error::Schema(format!(
                "sample has {} categorical values, schema declares {}",
                s.categorical.len(),
                self.features.len()
            )));
        }
        for (f, &v) in self.features.iter().zip(&s.categorical) {
            if v >= f.states.len() {
                return Err(Error::Schema(format!(
                    "feature {}: state {v} outside {} states",
                    f.name,
                    f.states.len()
                )));
            }
        }
        if s.numeric.len() != self.numeric_dim {
            return Err(Error::Schema(format!(
                "sample has {} numeric values, schema declares {}",
                s.numeric.len(),
                self.numeric_dim
            )));
        }
        if s.numeric.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite numeric value".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("SCHEMA 1\n");
        writeln!(s, "NUMERIC {}", self.numeric_dim).unwrap();
        for f in &self.features {
            writeln!(s, "FEATURE {} {}", f.name, f.states.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("SCHEMA 1") {
            return Err(Error::Format("schema file must start with `SCHEMA 1`".into()));
        }
        let mut numeric_dim = None;
        let mut features = Vec::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("NUMERIC") => {
                    let n = parts.next().and_then(|v| v.parse().ok());
                    numeric_dim = Some(n.ok_or_else(|| Error::Format(format!("bad NUMERIC line: {line}")))?);
                }
                Some("FEATURE") => {
                    let name = parts.next().ok_or_else(|| Error::Format(format!("bad FEATURE line: {line}")))?;
                    features.push(CategoricalFeature {
                        name: name.to_string(),
                        states: parts.map(str::to_string).collect(),
                    });
                }
                _ => return Err(Error::Format(format!("unknown schema line: {line}"))),
            }
        }
        let schema = StructuredSchema {
            features,
            numeric_dim: numeric_dim.ok_or_else(|| Error::Format("schema lacks NUMERIC".into()))?,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Min-max statistics held as frozen parameters so they travel with checkpoints.
pub struct MinMaxScaler {
    pub min: ParamId,
    pub max: ParamId,
}

impl MinMaxScaler {
    pub fn new(store: &mut ParamStore, dim: usize) -> Self {
        MinMaxScaler {
            min: store.add("structured.scale.min", Tensor::zeros(&[dim]), false),
            max: store.add("structured.scale.max", Tensor::full(&[dim], 1.0), false),
        }
    }

    pub fn fit<'a>(&self, store: &mut ParamStore, rows: impl IntoIterator<Item = &'a [f64]>) {
        let dim = store.get(self.min).numel();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut seen = false;
        for r in rows {
            seen = true;
            for (k, &v) in r.iter().enumerate().take(dim) {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        if !seen {
            return;
        }
        store.get_mut(self.min).data_mut().copy_from_slice(&lo);
        store.get_mut(self.max).data_mut().copy_from_slice(&hi);
    }

    pub fn transform(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let lo = store.get(self.min).data();
        let hi = store.get(self.max).data();
        x.iter()
            .enumerate()
            .map(|(k, &v)| {
                let span = hi[k] - lo[k];
                if span > 0.0 { (v - lo[k]) / span } else { 0.0 }
            })
            .collect()
    }
}

/// Entity embeddings per categorical feature plus a whole-sample encoder.
pub struct StructuredPeripheral {
    pub schema: StructuredSchema,
    pub tables: Vec<ParamId>,
    pub whole_in: Linear,
    pub whole_out: Linear,
    pub scaler: MinMaxScaler,
    pub dim: usize,
}

pub struct StructuredEncoding {
    pub entity_rows: Var,
    pub whole_row: Var,
}

impl StructuredPeripheral {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, schema: StructuredSchema, dim: usize) -> Result<Self> {
        schema.validate()?;
        let tables = schema
            .features
            .iter()
            .map(|f| store.add(format!("structured.entity.{}", f.name), init::normal(rng, &[f.states.len(), dim], 1.0), true))
            .collect();
        let in_dim = schema.one_hot_dim() + schema.numeric_dim;
        Ok(StructuredPeripheral {
            tables,
            whole_in: Linear::new(store, rng, "structured.whole.0", in_dim, 2 * dim, true),
            whole_out: Linear::new(store, rng, "structured.whole.1", 2 * dim, dim, true),
            scaler: MinMaxScaler::new(store, schema.numeric_dim),
            schema,
            dim,
        })
    }

    /// `[one-hot(categoricals) ∥ scaled numerics]`.
    pub fn whole_input(&self, store: &ParamStore, s: &StructuredSample) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.schema.one_hot_dim() + self.schema.numeric_dim);
        for (f, &state) in self.schema.features.iter().zip(&s.categorical) {
            let start = v.len();
            v.resize(start + f.states.len() - 1, 0.0);
            if state > 0 {
                v[start + state - 1] = 1.0;
            }
        }
        v.extend(self.scaler.transform(store, &s.numeric));
        v
    }

    pub fn encode(&self, tape: &mut Tape<'_>, store: &ParamStore, s: &StructuredSample) -> Result<StructuredEncoding> {
        self.schema.check(s)?;
        let rows = self
            .tables
            .iter()
            .zip(&s.categorical)
            .map(|(&t, &state)| {
                let table = tape.param(t);
                tape.embedding(table, &[state])
            })
            .collect::<Result<Vec<_>>>()?;
        let entity_rows = if rows.is_empty() {
            tape.constant(Tensor::zeros(&[0, self.dim]))
        } else {
            tape.concat(&rows, 0)?
        };
        let x = self.whole_input(store, s);
        let n = x.len();
        let x = tape.constant(Tensor::new(vec![1, n], x)?);
        let h = self.whole_in.forward(tape, x)?;
        let h = tape.relu(h)?;
        let whole_row = self.whole_out.forward(tape, h)?;
        Ok(StructuredEncoding { entity_rows, whole_row })
    }
}
