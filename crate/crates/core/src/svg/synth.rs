//! Parameterized synthetic shape families, used as a small stand-in corpus.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lower::arc_handle;
use super::{simplify, BasicCommand, Graphic, Path, Point, ViewBox};

/// Synthetic coordinates are snapped to this grid so that the canonical
/// JSON (six decimals) represents them exactly.
const SNAP: f64 = 1.0 / 64.0;
const CANVAS: f64 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Polyline,
    Polygon,
    Circle,
    Star,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Polyline, Family::Polygon, Family::Circle, Family::Star];

    pub fn name(self) -> &'static str {
        match self {
            Family::Polyline => "polyline",
            Family::Polygon => "polygon",
            Family::Circle => "circle",
            Family::Star => "star",
        }
    }

    fn descriptor(self) -> &'static str {
        match self {
            Family::Polyline => "zigzag",
            Family::Polygon => "closed",
            Family::Circle => "round",
            Family::Star => "pointy",
        }
    }
}

fn snap(v: f64) -> f64 {
    (v / SNAP).round() * SNAP
}

fn sp(x: f64, y: f64) -> Point {
    Point::new(snap(x), snap(y))
}

/// Generates `n` graphics cycling through the families, deterministic per
/// `seed`. Each carries at least two keywords: the family name, a shape
/// descriptor and a size word.
pub fn gen_synthetic(n: usize, seed: u64) -> Vec<Graphic> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let family = Family::ALL[i % Family::ALL.len()];
            generate_family(family, &mut rng)
        })
        .collect()
}

pub fn generate_family(family: Family, rng: &mut impl Rng) -> Graphic {
    let path_count = if rng.random_bool(0.3) { 2 } else { 1 };
    let mut paths = Vec::with_capacity(path_count);
    let mut large = false;
    for _ in 0..path_count {
        let radius = rng.random_range(24.0..96.0);
        large |= radius > 60.0;
        let cx = rng.random_range(radius + 8.0..CANVAS - radius - 8.0);
        let cy = rng.random_range(radius + 8.0..CANVAS - radius - 8.0);
        let cmds = match family {
            Family::Polyline => {
                let k = rng.random_range(3..=7);
                let pts: Vec<Point> = (0..k)
                    .map(|j| {
                        let x = cx - radius + 2.0 * radius * j as f64 / (k - 1) as f64;
                        let y = cy + rng.random_range(-radius..radius);
                        sp(x, y)
                    })
                    .collect();
                lines(&pts, false)
            }
            Family::Polygon => {
                let k = rng.random_range(3..=7);
                let phase = rng.random_range(0.0..2.0 * PI);
                let pts: Vec<Point> = (0..k)
                    .map(|j| {
                        let a = phase + 2.0 * PI * j as f64 / k as f64;
                        let r = radius * rng.random_range(0.8..1.0);
                        sp(cx + r * a.cos(), cy + r * a.sin())
                    })
                    .collect();
                lines(&pts, true)
            }
            Family::Star => {
                let spikes = rng.random_range(4..=6);
                let inner = rng.random_range(0.35..0.6);
                let phase = rng.random_range(0.0..2.0 * PI);
                let pts: Vec<Point> = (0..2 * spikes)
                    .map(|j| {
                        let a = phase + PI * j as f64 / spikes as f64;
                        let r = if j % 2 == 0 { radius } else { radius * inner };
                        sp(cx + r * a.cos(), cy + r * a.sin())
                    })
                    .collect();
                lines(&pts, true)
            }
            Family::Circle => circle(cx, cy, radius),
        };
        paths.push(Path::new(cmds));
    }
    let keywords = vec![
        family.name().to_owned(),
        family.descriptor().to_owned(),
        if large { "large" } else { "small" }.to_owned(),
    ];
    simplify(&Graphic::new(paths, ViewBox::new(0.0, 0.0, CANVAS, CANVAS)).with_keywords(keywords))
}

fn lines(pts: &[Point], closed: bool) -> Vec<BasicCommand> {
    let mut out = vec![BasicCommand::move_to(pts[0], pts[0])];
    for w in pts.windows(2) {
        out.push(BasicCommand::line_to(w[0], w[1]));
    }
    if closed {
        out.push(BasicCommand::line_to(pts[pts.len() - 1], pts[0]));
    }
    out
}

/// A circle as a MoveTo followed by four quarter-turn cubics.
fn circle(cx: f64, cy: f64, r: f64) -> Vec<BasicCommand> {
    let k = arc_handle(PI / 2.0) * r;
    let pts = [sp(cx + r, cy), sp(cx, cy + r), sp(cx - r, cy), sp(cx, cy - r)];
    let tangents = [(0.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (1.0, 0.0)];
    let mut out = vec![BasicCommand::move_to(pts[0], pts[0])];
    for i in 0..4 {
        let a = pts[i];
        let b = pts[(i + 1) % 4];
        let (tax, tay) = tangents[i];
        let (tbx, tby) = tangents[(i + 1) % 4];
        let c0 = sp(a.x + k * tax, a.y + k * tay);
        let c1 = sp(b.x - k * tbx, b.y - k * tby);
        out.push(BasicCommand::cubic(a, c0, c1, b));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svg::{preprocess, CommandKind, PreprocessConfig};

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gen_synthetic(1, 7), gen_synthetic(1, 7));
        assert_ne!(gen_synthetic(4, 7), gen_synthetic(4, 8));
    }

    #[test]
    fn circle_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = generate_family(Family::Circle, &mut rng);
        assert!(g.keywords.iter().any(|k| k == "circle"));
        for p in &g.paths {
            let kinds: Vec<CommandKind> = p.commands.iter().map(|c| c.kind).collect();
            assert_eq!(kinds[0], CommandKind::MoveTo);
            assert_eq!(&kinds[1..], &[CommandKind::CubicBezier; 4]);
            assert_eq!(p.commands[4].end, p.commands[0].end);
        }
    }

    #[test]
    fn hundred_graphics_pass_default_preprocess() {
        let corpus = gen_synthetic(100, 11);
        assert_eq!(corpus.len(), 100);
        for g in &corpus {
            let out = preprocess(g, &PreprocessConfig::default()).expect("synthetic graphic rejected");
            assert_eq!(&out, g);
        }
    }
}
