//! Code-level evaluation: edit score, compression ratio, token recall and
//! rasterized pixel IoU.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::render::{self, RenderError};
use crate::svg::{CommandKind, Graphic, Point};
use crate::vq::{StrokeTokenSeq, TokenLayout};

/// Coordinate bins used when serializing for the edit score.
pub const QUANT_BINS: u32 = 256;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length must be positive")]
    ZeroLength,
    #[error("token layouts differ: {golden:?} vs {generated:?}")]
    VocabMismatch { golden: TokenLayout, generated: TokenLayout },
    #[error("render failure: {0}")]
    RenderFailure(#[from] RenderError),
}

/// One serialized symbol: a command letter or a quantized coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Cmd(char),
    Coord(u16),
}

fn bin(v: f64, origin: f64, extent: f64) -> u16 {
    let q = ((v - origin) / extent * QUANT_BINS as f64).floor();
    q.clamp(0.0, (QUANT_BINS - 1) as f64) as u16
}

/// Path-data style serialization: each command is its letter followed by
/// the coordinates SVG would write (`M`/`L`: end point, `C`: both controls
/// and the end point), each quantized to [`QUANT_BINS`] bins of the
/// viewbox window.
pub fn serialize(g: &Graphic) -> Vec<Symbol> {
    let vb = g.viewbox;
    let ext = vb.extent();
    let mut out = Vec::with_capacity(g.command_count() * 3);
    let push = |p: Point, out: &mut Vec<Symbol>| {
        out.push(Symbol::Coord(bin(p.x, vb.min_x, ext)));
        out.push(Symbol::Coord(bin(p.y, vb.min_y, ext)));
    };
    for c in g.commands() {
        out.push(Symbol::Cmd(c.kind.as_char()));
        if c.kind == CommandKind::CubicBezier {
            push(c.ctrl0, &mut out);
            push(c.ctrl1, &mut out);
        }
        push(c.end, &mut out);
    }
    out
}

/// Code length of a graphic: its serialized symbol count.
pub fn code_len(g: &Graphic) -> usize {
    serialize(g).len()
}

/// Levenshtein distance with unit costs, two-row dynamic programme.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance between the serializations, divided by the longer one.
pub fn edit_score(a: &Graphic, b: &Graphic) -> f64 {
    let (sa, sb) = (serialize(a), serialize(b));
    let n = sa.len().max(sb.len());
    if n == 0 {
        return 0.0;
    }
    levenshtein(&sa, &sb) as f64 / n as f64
}

/// `code_len / token_len`.
pub fn compression_ratio(code_len: usize, token_len: usize) -> Result<f64, MetricsError> {
    if code_len == 0 || token_len == 0 {
        return Err(MetricsError::ZeroLength);
    }
    Ok(code_len as f64 / token_len as f64)
}

/// Multiset recall of golden tokens among generated ones.
pub fn recall_score(golden: &StrokeTokenSeq, generated: &StrokeTokenSeq) -> Result<f64, MetricsError> {
    if golden.layout != generated.layout {
        return Err(MetricsError::VocabMismatch {
            golden: golden.layout,
            generated: generated.layout,
        });
    }
    recall_ids(&golden.tokens, &generated.tokens)
}

pub fn recall_ids(golden: &[usize], generated: &[usize]) -> Result<f64, MetricsError> {
    if golden.is_empty() {
        return Err(MetricsError::ZeroLength);
    }
    let mut have: HashMap<usize, usize> = HashMap::new();
    for &t in generated {
        *have.entry(t).or_default() += 1;
    }
    let mut hit = 0;
    for t in golden {
        if let Some(n) = have.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                hit += 1;
            }
        }
    }
    Ok(hit as f64 / golden.len() as f64)
}

/// Intersection over union of the inked pixels; two blank renders score 1.
pub fn pixel_iou(a: &Graphic, b: &Graphic, res: usize, stroke_px: usize) -> Result<f64, MetricsError> {
    let ra = render::rasterize(a, res, stroke_px)?;
    let rb = render::rasterize(b, res, stroke_px)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in ra.pixels().iter().zip(rb.pixels()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    pub tokenize_s: f64,
    pub detokenize_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub name: String,
    pub edit: f64,
    pub code_len: usize,
    pub token_len: usize,
    /// `code_len / token_len`.
    pub cr: f64,
    /// `token_len / code_len`, the same ratio read as a percentage of code.
    pub cr_inverse: f64,
    pub recall: f64,
    pub pixel_iou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, median: 0.0 };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Self {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub count: usize,
    pub edit: Summary,
    pub cr: Summary,
    pub cr_inverse: Summary,
    pub recall: Summary,
    pub pixel_iou: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub aggregates: Aggregates,
}

impl EvalReport {
    pub fn new(records: Vec<EvalRecord>) -> Self {
        let col = |f: fn(&EvalRecord) -> f64| Summary::of(&records.iter().map(f).collect::<Vec<_>>());
        let aggregates = Aggregates {
            count: records.len(),
            edit: col(|r| r.edit),
            cr: col(|r| r.cr),
            cr_inverse: col(|r| r.cr_inverse),
            recall: col(|r| r.recall),
            pixel_iou: col(|r| r.pixel_iou),
        };
        Self { records, aggregates }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svg::{BasicCommand, Path, ViewBox};
    use crate::vq::SeqMeta;

    fn brute(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute(ra, rb) + usize::from(x != y);
                sub.min(brute(ra, b) + 1).min(brute(a, rb) + 1)
            }
        }
    }

    #[test]
    fn kitten_sitting() {
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(brute(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein::<u8>(b"", b"abc"), 3);
    }

    #[test]
    fn dp_matches_recursion_on_short_strings() {
        let words: Vec<Vec<u8>> = (0..200u32)
            .map(|i| (0..(i % 6)).map(|k| ((i * 7 + k * 13) % 4) as u8).collect())
            .collect();
        for a in &words[..40] {
            for b in &words[..40] {
                assert_eq!(levenshtein(a, b), brute(a, b));
            }
        }
    }

    fn line(a: (f64, f64), b: (f64, f64)) -> Graphic {
        let (pa, pb) = (Point::new(a.0, a.1), Point::new(b.0, b.1));
        Graphic::new(
            vec![Path::new(vec![BasicCommand::move_to(pa, pa), BasicCommand::line_to(pa, pb)])],
            ViewBox::new(0.0, 0.0, 256.0, 256.0),
        )
    }

    #[test]
    fn serialization_layout() {
        let g = line((0.0, 0.0), (255.5, 10.0));
        assert_eq!(
            serialize(&g),
            vec![
                Symbol::Cmd('M'),
                Symbol::Coord(0),
                Symbol::Coord(0),
                Symbol::Cmd('L'),
                Symbol::Coord(255),
                Symbol::Coord(10)
            ]
        );
        assert_eq!(edit_score(&g, &g), 0.0);
        let h = line((0.0, 0.0), (200.0, 10.0));
        assert!((edit_score(&g, &h) - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn compression_ratio_cases() {
        assert_eq!(compression_ratio(1000, 250).unwrap(), 4.0);
        assert_eq!(compression_ratio(7, 7).unwrap(), 1.0);
        assert!(matches!(compression_ratio(5, 0), Err(MetricsError::ZeroLength)));
        assert_eq!(compression_ratio(3, 7).unwrap() * compression_ratio(7, 3).unwrap(), 1.0);
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_ids(&[3, 7, 7, 9], &[7, 3]).unwrap(), 0.5);
        assert_eq!(recall_ids(&[3, 7, 7, 9], &[3, 7, 7, 9]).unwrap(), 1.0);
        assert_eq!(recall_ids(&[1, 2], &[3, 4]).unwrap(), 0.0);
        let layout = |b| TokenLayout {
            depth: 1,
            codebook_size: b,
            stages: 1,
        };
        let meta = SeqMeta {
            viewbox: ViewBox::default(),
            command_count: 2,
            keywords: vec![],
        };
        let a = StrokeTokenSeq::new(vec![1], layout(4), meta.clone()).unwrap();
        let b = StrokeTokenSeq::new(vec![1], layout(8), meta).unwrap();
        assert!(matches!(recall_score(&a, &b), Err(MetricsError::VocabMismatch { .. })));
    }

    #[test]
    fn iou_cases() {
        let a = line((10.0, 10.0), (10.0, 240.0));
        assert_eq!(pixel_iou(&a, &a, 64, 1).unwrap(), 1.0);
        let b = line((200.0, 10.0), (200.0, 240.0));
        assert_eq!(pixel_iou(&a, &b, 64, 1).unwrap(), 0.0);
    }

    #[test]
    fn half_canvas_translation_against_pixel_count() {
        let a = line((10.0, 100.0), (200.0, 100.0));
        let b = line((138.0, 100.0), (328.0, 100.0));
        let iou = pixel_iou(&a, &b, 64, 1).unwrap();
        // a covers columns 2..=50, b covers 34..=63 (clipped), row 25.
        let ca: Vec<usize> = (2..=50).collect();
        let cb: Vec<usize> = (34..=63).collect();
        let inter = ca.iter().filter(|x| cb.contains(x)).count();
        let union = ca.len() + cb.len() - inter;
        assert_eq!(iou, inter as f64 / union as f64);
        assert!(iou > 0.0 && iou < 1.0);
    }

    #[test]
    fn summary_median() {
        let s = Summary::of(&[3.0, 1.0, 2.0, 10.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
    }
}
