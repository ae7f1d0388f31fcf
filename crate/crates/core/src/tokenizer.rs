//! Token counting for CoT length measurement.
//!
//! The rest of the pipeline treats the tokenizer as opaque: length
//! normalization is only reproducible relative to the tokenizer that
//! produced the counts, so the tokenizer name is recorded on every
//! record it counts.

/// Counts tokens in a piece of text.
pub trait Tokenizer: Send + Sync {
    /// Stable identifier recorded in corpus metadata.
    fn name(&self) -> &'static str;

    /// Token count for `text`. Must be 0 for empty text, >= 1 otherwise,
    /// and non-decreasing under text extension.
    fn count(&self, text: &str) -> u64;
}

/// Whitespace-delimited token counting. The default.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> &'static str {
        "whitespace"
    }

    fn count(&self, text: &str) -> u64 {
        if text.is_empty() {
            0
        } else {
            // Whitespace-only text still counts as one token so that
            // non-empty thoughts never report a zero length.
            (text.split_whitespace().count() as u64).max(1)
        }
    }
}

/// `ceil(bytes / 4)` heuristic, roughly one token per four bytes.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteHeuristicTokenizer;

impl Tokenizer for ByteHeuristicTokenizer {
    fn name(&self) -> &'static str {
        "byte4"
    }

    fn count(&self, text: &str) -> u64 {
        (text.len() as u64).div_ceil(4)
    }
}

/// Look up a tokenizer by its recorded name.
pub fn by_name(name: &str) -> Option<Box<dyn Tokenizer>> {
    match name {
        "whitespace" => Some(Box::new(WhitespaceTokenizer)),
        "byte4" => Some(Box::new(ByteHeuristicTokenizer)),
        _ => None,
    }
}
