use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{init, ParamId, ParamStore};

/// Token embedding plus learned token-position embedding.
pub struct TextPeripheral {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub vocab: usize,
    pub max_len: usize,
    pub dim: usize,
}

impl TextPeripheral {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, vocab: usize, max_len: usize, dim: usize) -> Self {
        TextPeripheral {
            tokens: store.add("text.tokens", init::normal(rng, &[vocab, dim], 1.0), true),
            positions: store.add("text.positions", init::normal(rng, &[max_len, dim], 0.1), true),
            vocab,
            max_len,
            dim,
        }
    }

    /// `Q × D`; an empty id list gives a `0 × D` block.
    pub fn encode_tokens(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Var> {
        if ids.len() > self.max_len {
            return Err(Error::Config(format!(
                "text of {} tokens exceeds the position table of {}",
                ids.len(),
                self.max_len
            )));
        }
        let table = tape.param(self.tokens);
        let tok = tape.embedding(table, ids)?;
        let pos_table = tape.param(self.positions);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.embedding(pos_table, &positions)?;
        tape.add(tok, pos)
    }
}
