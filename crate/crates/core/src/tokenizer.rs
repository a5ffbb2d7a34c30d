//! Byte-level tokenizer for driving the toy model with real text.
//!
//! Token id = byte value. Anything the model generates above 255 decodes to
//! nothing, so toy outputs always map back to (possibly garbled) text.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct ByteTokenizer {
    vocab: usize,
}

impl ByteTokenizer {
    pub fn new(vocab: usize) -> Result<Self> {
        if vocab < 256 {
            return Err(Error::validation(format!(
                "byte tokenizer needs vocab >= 256, got {vocab}"
            )));
        }
        Ok(ByteTokenizer { vocab })
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    /// Ids ≥ 256 (non-byte synthetic tokens) are dropped; invalid UTF-8 is
    /// replaced, never fatal.
    pub fn decode(&self, tokens: &[u32]) -> String {
        let bytes: Vec<u8> = tokens
            .iter()
            .filter_map(|&t| u8::try_from(t).ok())
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }
}
