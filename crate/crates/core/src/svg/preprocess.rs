//! Corpus filters: redundant-path removal, outer-box removal and the
//! command-count window.

use std::collections::HashSet;
use std::fmt;

use super::{simplify, CommandKind, Graphic, Path};

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// Graphics with more basic commands than this are rejected.
    pub max_commands: usize,
    pub min_commands: usize,
    pub min_keywords: usize,
    /// A rectangle covering at least this fraction of the viewbox area is
    /// treated as the outer frame and dropped.
    pub box_cover_fraction: f64,
    /// Rounding grid for duplicate detection, as a fraction of the
    /// viewbox's larger extent.
    pub dedup_grid: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            max_commands: 1024,
            min_commands: 2,
            min_keywords: 2,
            box_cover_fraction: 0.98,
            dedup_grid: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    TooLong,
    TooShort,
    TooFewKeywords,
    /// Geometry leaves the square normalization window of the viewbox.
    OutOfViewbox,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::TooLong => "too many commands",
            RejectReason::TooShort => "too few commands",
            RejectReason::TooFewKeywords => "too few keywords",
            RejectReason::OutOfViewbox => "geometry outside viewbox",
        };
        f.write_str(s)
    }
}

/// A graphic filtered out of the corpus. This is an outcome, not a fault.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub reason: RejectReason,
    pub command_count: usize,
}

impl fmt::Display for Rejected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rejected ({}, {} commands)", self.reason, self.command_count)
    }
}

pub fn preprocess(g: &Graphic, cfg: &PreprocessConfig) -> Result<Graphic, Rejected> {
    let grid = cfg.dedup_grid * g.viewbox.extent();
    let mut seen = HashSet::new();
    let mut kept: Vec<Path> = Vec::with_capacity(g.paths.len());
    for path in &g.paths {
        if is_outer_box(path, g, cfg.box_cover_fraction) {
            continue;
        }
        if seen.insert(path_key(path, grid)) {
            kept.push(path.clone());
        }
    }
    // Removing paths moves pen positions, so re-chain the MoveTo begins.
    let out = simplify(&Graphic {
        paths: kept,
        viewbox: g.viewbox,
        keywords: g.keywords.clone(),
    });
    let count = out.command_count();
    let reject = |reason| Rejected {
        reason,
        command_count: count,
    };
    if count > cfg.max_commands {
        return Err(reject(RejectReason::TooLong));
    }
    if count < cfg.min_commands.max(1) {
        return Err(reject(RejectReason::TooShort));
    }
    if out.keywords.len() < cfg.min_keywords {
        return Err(reject(RejectReason::TooFewKeywords));
    }
    if !within_unit_window(&out) {
        return Err(reject(RejectReason::OutOfViewbox));
    }
    Ok(out)
}

/// Identity of a path for duplicate detection: kinds plus rounded drawn
/// coordinates. MoveTo begin points depend on the preceding path and are
/// excluded, as are the derived M/L control points.
fn path_key(path: &Path, grid: f64) -> Vec<(CommandKind, [i64; 6])> {
    let r = |v: f64| (v / grid).round() as i64;
    path.commands
        .iter()
        .map(|c| {
            let coords = match c.kind {
                CommandKind::CubicBezier => [r(c.ctrl0.x), r(c.ctrl0.y), r(c.ctrl1.x), r(c.ctrl1.y), r(c.end.x), r(c.end.y)],
                _ => [0, 0, 0, 0, r(c.end.x), r(c.end.y)],
            };
            (c.kind, coords)
        })
        .collect()
}

fn is_outer_box(path: &Path, g: &Graphic, cover: f64) -> bool {
    let drawn = &path.commands[1.min(path.len())..];
    if drawn.len() < 3 || drawn.iter().any(|c| c.kind != CommandKind::LineTo) {
        return false;
    }
    let tol = 1e-9 * g.viewbox.extent();
    if drawn
        .iter()
        .any(|c| (c.begin.x - c.end.x).abs() > tol && (c.begin.y - c.end.y).abs() > tol)
    {
        return false;
    }
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for c in drawn {
        for p in [c.begin, c.end] {
            if !xs.iter().any(|x| (x - p.x).abs() <= tol) {
                xs.push(p.x);
            }
            if !ys.iter().any(|y| (y - p.y).abs() <= tol) {
                ys.push(p.y);
            }
        }
    }
    if xs.len() != 2 || ys.len() != 2 {
        return false;
    }
    let area = (xs[0] - xs[1]).abs() * (ys[0] - ys[1]).abs();
    area >= cover * g.viewbox.width * g.viewbox.height
}

fn within_unit_window(g: &Graphic) -> bool {
    let vb = g.viewbox;
    let ext = vb.extent();
    let slack = 1e-9 * ext;
    g.commands().flat_map(|c| c.points()).all(|p| {
        p.x >= vb.min_x - slack && p.x <= vb.min_x + ext + slack && p.y >= vb.min_y - slack && p.y <= vb.min_y + ext + slack
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svg::{BasicCommand, Point, ViewBox};

    fn polyline(points: &[(f64, f64)]) -> Vec<BasicCommand> {
        let mut out = vec![BasicCommand::move_to(
            Point::new(points[0].0, points[0].1),
            Point::new(points[0].0, points[0].1),
        )];
        for w in points.windows(2) {
            out.push(BasicCommand::line_to(Point::new(w[0].0, w[0].1), Point::new(w[1].0, w[1].1)));
        }
        out
    }

    fn graphic(paths: Vec<Vec<BasicCommand>>) -> Graphic {
        simplify(
            &Graphic::new(paths.into_iter().map(Path::new).collect(), ViewBox::new(0.0, 0.0, 100.0, 100.0))
                .with_keywords(vec!["a".into(), "b".into()]),
        )
    }

    #[test]
    fn duplicate_paths_collapse() {
        let p = polyline(&[(10.0, 10.0), (20.0, 20.0), (30.0, 10.0)]);
        let g = graphic(vec![p.clone(), p]);
        let out = preprocess(&g, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.paths.len(), 1);
    }

    #[test]
    fn outer_box_removed() {
        let frame = polyline(&[(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0), (0.0, 0.0)]);
        let dolphin = polyline(&[(10.0, 50.0), (40.0, 30.0), (70.0, 45.0), (90.0, 60.0)]);
        let g = graphic(vec![frame, dolphin.clone()]);
        let out = preprocess(&g, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.paths.len(), 1);
        assert_eq!(out.paths[0].commands[1..], graphic(vec![dolphin]).paths[0].commands[1..]);
    }

    #[test]
    fn small_rectangles_are_kept() {
        let inner = polyline(&[(10.0, 10.0), (30.0, 10.0), (30.0, 30.0), (10.0, 30.0), (10.0, 10.0)]);
        let g = graphic(vec![inner]);
        assert_eq!(preprocess(&g, &PreprocessConfig::default()).unwrap().paths.len(), 1);
    }

    #[test]
    fn too_long_is_rejected() {
        let pts: Vec<(f64, f64)> = (0..1025).map(|i| ((i % 100) as f64, (i / 100) as f64)).collect();
        let g = graphic(vec![polyline(&pts)]);
        assert_eq!(g.command_count(), 1025);
        let r = preprocess(&g, &PreprocessConfig::default()).unwrap_err();
        assert_eq!(r.reason, RejectReason::TooLong);

        let pts: Vec<(f64, f64)> = (0..1024).map(|i| ((i % 100) as f64, (i / 100) as f64)).collect();
        assert!(preprocess(&graphic(vec![polyline(&pts)]), &PreprocessConfig::default()).is_ok());
    }

    #[test]
    fn keyword_and_length_floors() {
        let g = graphic(vec![polyline(&[(1.0, 1.0)])]);
        assert_eq!(preprocess(&g, &PreprocessConfig::default()).unwrap_err().reason, RejectReason::TooShort);
        let mut g = graphic(vec![polyline(&[(1.0, 1.0), (2.0, 2.0)])]);
        g.keywords.truncate(1);
        assert_eq!(
            preprocess(&g, &PreprocessConfig::default()).unwrap_err().reason,
            RejectReason::TooFewKeywords
        );
    }

    #[test]
    fn never_increases_command_count() {
        let p = polyline(&[(10.0, 10.0), (20.0, 20.0)]);
        let g = graphic(vec![p.clone(), p.clone(), polyline(&[(5.0, 5.0), (6.0, 9.0), (7.0, 7.0)])]);
        let out = preprocess(&g, &PreprocessConfig::default()).unwrap();
        assert!(out.command_count() <= g.command_count());
    }
}
