//! Keyword-conditioned autoregressive model over stroke tokens.
//!
//! A small pre-norm decoder-only transformer. Prompt words are embedded by
//! a frozen, randomly initialized table and prepended to the stroke
//! sequence `BOS t1 .. tn`; only the stroke side carries learned position
//! embeddings. Training touches everything except the prompt table.

mod model;
mod sample;
mod train;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::tensor::TensorError;
use crate::vq::{TokenLayout, VqError};

pub use model::StrokeLm;
pub use sample::{sample_index, Generated};
pub use train::{train_lm, LmLog, LmStep};

/// Words placed before the keywords in every prompt.
pub const PROMPT_TEMPLATE: &str = "Generating SVG according to keywords";
pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum LmError {
    #[error("no keywords given")]
    EmptyKeywords,
    #[error("sequence of {len} tokens exceeds the limit of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty training set")]
    EmptyCorpus,
    #[error("token layout {found:?} differs from {expected:?}")]
    LayoutMismatch { expected: TokenLayout, found: TokenLayout },
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("bad model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Vq(#[from] VqError),
}

/// Output vocabulary (stroke ids then `PAD`, `BOS`, `EOS`) and the prompt
/// word list (index 0 is [`UNK`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pub layout: TokenLayout,
    words: Vec<String>,
    word_ids: BTreeMap<String, usize>,
}

impl Vocab {
    /// Word list: `UNK`, the template words, then corpus keyword words in
    /// sorted order.
    pub fn build<'a>(layout: TokenLayout, keywords: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = vec![UNK.to_owned()];
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        seen.insert(UNK.to_owned(), 0);
        for w in PROMPT_TEMPLATE.split_whitespace() {
            if !seen.contains_key(w) {
                seen.insert(w.to_owned(), words.len());
                words.push(w.to_owned());
            }
        }
        let mut extra: Vec<&str> = keywords.into_iter().flat_map(str::split_whitespace).collect();
        extra.sort_unstable();
        extra.dedup();
        for w in extra {
            if !seen.contains_key(w) {
                seen.insert(w.to_owned(), words.len());
                words.push(w.to_owned());
            }
        }
        Self {
            layout,
            words,
            word_ids: seen,
        }
    }

    pub fn from_words(layout: TokenLayout, words: Vec<String>) -> Result<Self, LmError> {
        if words.first().map(String::as_str) != Some(UNK) {
            return Err(LmError::Config("word list must start with the unknown-word marker".into()));
        }
        let mut word_ids = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            if word_ids.insert(w.clone(), i).is_some() {
                return Err(LmError::Config(format!("duplicate word {w:?}")));
            }
        }
        Ok(Self { layout, words, word_ids })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn word_id(&self, w: &str) -> usize {
        self.word_ids.get(w).copied().unwrap_or(0)
    }

    pub fn stroke_count(&self) -> usize {
        self.layout.vocab_size()
    }

    pub fn pad(&self) -> usize {
        self.stroke_count()
    }

    pub fn bos(&self) -> usize {
        self.stroke_count() + 1
    }

    pub fn eos(&self) -> usize {
        self.stroke_count() + 2
    }

    /// Output classes including the three specials.
    pub fn size(&self) -> usize {
        self.stroke_count() + 3
    }

    /// Template words followed by every keyword, split on whitespace.
    pub fn build_prompt<S: AsRef<str>>(&self, keywords: &[S]) -> Result<Vec<usize>, LmError> {
        let kw: Vec<&str> = keywords.iter().flat_map(|k| k.as_ref().split_whitespace()).collect();
        if kw.is_empty() {
            return Err(LmError::EmptyKeywords);
        }
        Ok(PROMPT_TEMPLATE
            .split_whitespace()
            .chain(kw)
            .map(|w| self.word_id(w))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    /// 0 selects the arg-max.
    pub temperature: f64,
    pub top_k: Option<usize>,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Limit on the stroke side, `BOS` and `EOS` included.
    pub max_len: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Stop once an epoch's mean cross-entropy drops below this.
    pub target_ce: Option<f64>,
    pub sampling: Sampling,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            layers: 2,
            heads: 4,
            max_len: 512,
            lr: 1e-3,
            seed: 0,
            batch_size: 8,
            max_steps: 2000,
            target_ce: None,
            sampling: Sampling::default(),
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::Config(m.to_owned()));
        if self.max_len < 2 {
            return bad("max_len must be at least 2");
        }
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad("embed_dim must be a positive multiple of heads");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.sampling.temperature >= 0.0 && self.sampling.temperature.is_finite()) {
            return bad("temperature must be non-negative");
        }
        if self.sampling.top_k == Some(0) {
            return bad("top_k must be positive");
        }
        Ok(())
    }

    /// Longest stroke sequence accepted for training.
    pub fn max_tokens(&self) -> usize {
        self.max_len - 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        let layout = TokenLayout {
            depth: 1,
            codebook_size: 256,
            stages: 1,
        };
        Vocab::build(layout, ["dolphin sea", "cat"])
    }

    #[test]
    fn prompt_is_template_then_keywords() {
        let v = vocab();
        let template: Vec<usize> = PROMPT_TEMPLATE.split_whitespace().map(|w| v.word_id(w)).collect();
        assert_eq!(template, vec![1, 2, 3, 4, 5]);
        let p = v.build_prompt(&["dolphin"]).unwrap();
        assert_eq!(p[..5], template[..]);
        assert_eq!(p[5], v.word_id("dolphin"));
        assert_eq!(p.len(), 6);
        let two = v.build_prompt(&["sea", "cat"]).unwrap();
        assert_eq!(two[5..], [v.word_id("sea"), v.word_id("cat")]);
    }

    #[test]
    fn unknown_word_maps_to_unk() {
        let v = vocab();
        assert_eq!(v.build_prompt(&["zebra"]).unwrap()[5], 0);
    }

    #[test]
    fn empty_keywords_rejected() {
        let v = vocab();
        assert!(matches!(v.build_prompt::<&str>(&[]), Err(LmError::EmptyKeywords)));
        assert!(matches!(v.build_prompt(&["  "]), Err(LmError::EmptyKeywords)));
    }

    #[test]
    fn specials_follow_stroke_ids() {
        let v = vocab();
        assert_eq!((v.pad(), v.bos(), v.eos(), v.size()), (256, 257, 258, 259));
        let again = Vocab::from_words(v.layout, v.words().to_vec()).unwrap();
        assert_eq!(again, v);
    }

    #[test]
    fn config_checks() {
        assert!(LmConfig::default().validate().is_ok());
        let c = LmConfig {
            max_len: 1,
            ..LmConfig::default()
        };
        assert!(c.validate().is_err());
        let c = LmConfig {
            heads: 3,
            ..LmConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
