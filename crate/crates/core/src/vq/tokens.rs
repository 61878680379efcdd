//! Stroke token sequences and their text file format.
//!
//! ```text
//! # stroketok v1 d=2 B=256 stages=1
//! # viewbox=0 0 256 256 commands=12 latent=6
//! # keywords=["circle","round"]
//! 17
//! 301
//! ...
//! ```

use std::fmt::Write as _;

use super::VqError;
use crate::svg::ViewBox;

pub const FORMAT_VERSION: &str = "stroketok v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    /// Residual levels `d`.
    pub depth: usize,
    /// Entries per level `|B|`.
    pub codebook_size: usize,
    /// Stride-2 stages; one latent step covers `2^stages` commands.
    pub stages: usize,
}

impl TokenLayout {
    pub fn vocab_size(&self) -> usize {
        self.depth * self.codebook_size
    }

    pub fn rate(&self) -> usize {
        1 << self.stages
    }

    pub fn id(&self, level: usize, entry: usize) -> usize {
        level * self.codebook_size + entry
    }

    /// `(level, entry)` of a valid id.
    pub fn split(&self, id: usize) -> Result<(usize, usize), VqError> {
        if id >= self.vocab_size() {
            return Err(VqError::BadTokenId {
                id,
                limit: self.vocab_size(),
            });
        }
        Ok((id / self.codebook_size, id % self.codebook_size))
    }

    /// Tokens produced for `commands` rows: `d · ceil(commands / 2^stages)`.
    pub fn token_count(&self, commands: usize) -> usize {
        self.depth * commands.div_ceil(self.rate())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqMeta {
    pub viewbox: ViewBox,
    /// Rows of the source matrix before padding.
    pub command_count: usize,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrokeTokenSeq {
    pub tokens: Vec<usize>,
    pub latent_len: usize,
    pub layout: TokenLayout,
    pub meta: SeqMeta,
}

impl StrokeTokenSeq {
    /// Checks the length rule, the id range and that position `p` holds a
    /// level `p mod d` id.
    pub fn new(tokens: Vec<usize>, layout: TokenLayout, meta: SeqMeta) -> Result<Self, VqError> {
        if layout.depth == 0 || !tokens.len().is_multiple_of(layout.depth) {
            return Err(VqError::Format(format!(
                "{} tokens is not a multiple of depth {}",
                tokens.len(),
                layout.depth
            )));
        }
        for (p, &id) in tokens.iter().enumerate() {
            let (level, _) = layout.split(id)?;
            if level != p % layout.depth {
                return Err(VqError::TokenLevel { position: p, id });
            }
        }
        let latent_len = tokens.len() / layout.depth;
        if meta.command_count > latent_len * layout.rate() {
            return Err(VqError::Format(format!(
                "{} commands do not fit {latent_len} latent steps",
                meta.command_count
            )));
        }
        Ok(Self {
            tokens,
            latent_len,
            layout,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn to_text(&self) -> String {
        let l = &self.layout;
        let vb = self.meta.viewbox;
        let mut out = String::new();
        let _ = writeln!(out, "# {FORMAT_VERSION} d={} B={} stages={}", l.depth, l.codebook_size, l.stages);
        let _ = writeln!(
            out,
            "# viewbox={} {} {} {} commands={} latent={}",
            vb.min_x, vb.min_y, vb.width, vb.height, self.meta.command_count, self.latent_len
        );
        let _ = writeln!(out, "# keywords={}", serde_json::to_string(&self.meta.keywords).expect("keywords"));
        for id in &self.tokens {
            let _ = writeln!(out, "{id}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, VqError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| VqError::Format("empty token file".into()))?;
        let rest = header
            .strip_prefix("# ")
            .and_then(|h| h.strip_prefix(FORMAT_VERSION))
            .ok_or_else(|| VqError::Format(format!("bad header {header:?}")))?;
        let fields = parse_fields(rest)?;
        let layout = TokenLayout {
            depth: field(&fields, "d")?,
            codebook_size: field(&fields, "B")?,
            stages: field(&fields, "stages")?,
        };
        let mut viewbox = ViewBox::default();
        let mut command_count = None;
        let mut keywords = Vec::new();
        let mut tokens = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(kw) = line.strip_prefix("# keywords=") {
                keywords = serde_json::from_str(kw).map_err(|e| VqError::Format(format!("keywords: {e}")))?;
            } else if let Some(vb) = line.strip_prefix("# viewbox=") {
                let (nums, tail) = vb
                    .split_once(" commands=")
                    .ok_or_else(|| VqError::Format(format!("bad meta line {line:?}")))?;
                let v: Vec<f64> = nums
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| VqError::Format(format!("bad viewbox {nums:?}"))))
                    .collect::<Result<_, _>>()?;
                if v.len() != 4 {
                    return Err(VqError::Format(format!("bad viewbox {nums:?}")));
                }
                viewbox = ViewBox::new(v[0], v[1], v[2], v[3]);
                let count = tail.split_whitespace().next().unwrap_or("");
                command_count = Some(count.parse().map_err(|_| VqError::Format(format!("bad command count {count:?}")))?);
            } else if line.starts_with('#') {
                continue;
            } else {
                let id = line
                    .parse()
                    .map_err(|_| VqError::Format(format!("line {}: not a token id: {line:?}", n + 2)))?;
                tokens.push(id);
            }
        }
        let latent = tokens.len() / layout.depth.max(1);
        let meta = SeqMeta {
            viewbox,
            command_count: command_count.unwrap_or(latent * layout.rate()),
            keywords,
        };
        Self::new(tokens, layout, meta)
    }
}

fn parse_fields(s: &str) -> Result<Vec<(String, String)>, VqError> {
    s.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_owned(), v.to_owned()))
                .ok_or_else(|| VqError::Format(format!("bad header field {kv:?}")))
        })
        .collect()
}

fn field(fields: &[(String, String)], key: &str) -> Result<usize, VqError> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .ok_or_else(|| VqError::Format(format!("header lacks {key}")))?
        .1
        .parse()
        .map_err(|_| VqError::Format(format!("bad header value for {key}")))
}
