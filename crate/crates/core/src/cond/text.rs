use super::{register_frozen, CondConfig, ContextEmbedding, ContextSource};
use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Frozen stand-in for a text encoder: whitespace tokens hashed into a
/// seeded embedding table, truncated or zero-padded to `n_q` tokens.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub table: ParamId,
    vocab: usize,
    n_q: usize,
    d_ctx: usize,
}

/// FNV-1a, stable across platforms and releases.
fn token_hash(token: &str) -> u64 {
    token.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl TextEncoder {
    pub(super) fn new(store: &mut ParamStore, cfg: &CondConfig) -> Result<Self> {
        let table = register_frozen(store, "text/table", &[cfg.text_vocab, cfg.d_ctx], 4)?;
        Ok(Self {
            table,
            vocab: cfg.text_vocab,
            n_q: cfg.n_q,
            d_ctx: cfg.d_ctx,
        })
    }

    /// Table rows of the lower-cased whitespace tokens of `prompt`.
    pub fn token_ids(&self, prompt: &str) -> Vec<usize> {
        prompt
            .split_whitespace()
            .take(self.n_q)
            .map(|t| (token_hash(&t.to_lowercase()) % self.vocab as u64) as usize)
            .collect()
    }

    /// `None` for a prompt without tokens.
    pub fn encode(&self, store: &ParamStore, prompt: &str) -> Option<ContextEmbedding> {
        let ids = self.token_ids(prompt);
        if ids.is_empty() {
            return None;
        }
        let table = store.value(self.table);
        let mut data = vec![0.0; self.n_q * self.d_ctx];
        for (i, &id) in ids.iter().enumerate() {
            data[i * self.d_ctx..(i + 1) * self.d_ctx].copy_from_slice(table.row(id));
        }
        let tokens = Tensor::new([self.n_q, self.d_ctx], data).ok()?;
        ContextEmbedding::new(tokens, ContextSource::Text).ok()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, prompt: &str) -> Option<Var> {
        self.encode(store, prompt).map(|c| c.constant(g))
    }
}

#[cfg(test)]
mod tests {
    use super::super::Conditioner;
    use super::*;

    #[test]
    fn prompts_embed_deterministically() {
        let mut store = ParamStore::new();
        let c = Conditioner::new(&mut store, CondConfig::default()).unwrap();
        assert!(c.encode_text(&store, "   ").is_none());
        let a = c.encode_text(&store, "A red  Boat").unwrap();
        let b = c.encode_text(&store, "a red boat").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tokens.shape(), &[8, 64]);
        assert!(a.tokens.row(3).iter().all(|&v| v == 0.0));
        assert_ne!(a.tokens.row(0), a.tokens.row(1));
        let long = "w ".repeat(20);
        assert_eq!(c.text.token_ids(&long).len(), 8);
    }
}
