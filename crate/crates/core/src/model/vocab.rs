use crate::crbin::BinIndex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

/// Deterministic surface-to-id map: specials, then sorted regular tokens,
/// then optional reserved per-bin task tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    num_task_tokens: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build(surfaces: impl IntoIterator<Item = String>, num_task_tokens: usize) -> Self {
        let unique: BTreeSet<String> = surfaces.into_iter().collect();
        let mut tokens = vec!["<pad>".to_string(), "<bos>".to_string(), "<eos>".to_string()];
        tokens.extend(unique);
        for b in 1..=num_task_tokens {
            tokens.push(format!("<bin{b}>"));
        }
        let mut vocab = Vocab { tokens, num_task_tokens, index: HashMap::new() };
        vocab.rebuild_index();
        vocab
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<usize> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn num_task_tokens(&self) -> usize {
        self.num_task_tokens
    }

    /// Id of the reserved indicator token for a bin, when present.
    pub fn task_token_id(&self, bin: BinIndex) -> Option<usize> {
        if bin.value() >= 1 && bin.value() <= self.num_task_tokens {
            Some(self.tokens.len() - self.num_task_tokens + bin.value() - 1)
        } else {
            None
        }
    }

    /// True for ids that must never be generated (pad, bos, task tokens).
    pub fn is_reserved_for_input(&self, id: usize) -> bool {
        id == PAD || id == BOS || id >= self.tokens.len() - self.num_task_tokens
    }

    pub fn encode(&self, surfaces: &[String]) -> Option<Vec<usize>> {
        surfaces.iter().map(|s| self.id(s)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter_map(|&i| self.surface(i).map(String::from))
            .collect()
    }
}
