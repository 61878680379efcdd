//! Conversion between graphics and stroke matrices.
//!
//! Each basic command becomes one 9-wide row
//! `(T, x0, y0, c0x, c0y, c1x, c1y, x1, y1)`; rows are stacked path by path.
//! The type channel uses equally spaced codes (`M=-1`, `L=0`, `C=+1`) that
//! already lie in the unit range, so only coordinates are rescaled by
//! [`scale`].

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::svg::{BasicCommand, CommandKind, Graphic, Path, Point, ViewBox};

pub const ROW_WIDTH: usize = 9;
pub const TYPE_MOVE: f64 = -1.0;
pub const TYPE_LINE: f64 = 0.0;
pub const TYPE_CUBIC: f64 = 1.0;

/// Slack allowed on scaled entries before they count as out of range.
pub const DOMAIN_EPS: f64 = 1e-9;

const STKM_MAGIC: &[u8; 4] = b"STKM";
pub const FORMAT_VERSION: &str = "matrix STKM v1";

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("path {path} does not start with a MoveTo")]
    NotSimplified { path: usize },
    #[error("path {path}: command {command} does not begin where command {} ends", command - 1)]
    BrokenChain { path: usize, command: usize },
    #[error("entry ({row}, {col}) = {value} outside the unit range")]
    DomainViolation { row: usize, col: usize, value: f64 },
    #[error("matrix is {actual}, expected {expected}")]
    WrongSpace { expected: &'static str, actual: &'static str },
    #[error("bad matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn type_code(kind: CommandKind) -> f64 {
    match kind {
        CommandKind::MoveTo => TYPE_MOVE,
        CommandKind::LineTo => TYPE_LINE,
        CommandKind::CubicBezier => TYPE_CUBIC,
    }
}

/// Nearest type code; exact midpoints go to the earlier kind in `M, L, C`
/// order.
pub fn snap_type(t: f64) -> CommandKind {
    let mut best = CommandKind::MoveTo;
    let mut best_d = f64::INFINITY;
    for kind in CommandKind::ALL {
        let d = (t - type_code(kind)).abs();
        if d < best_d {
            best = kind;
            best_d = d;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrokeMatrix {
    rows: Vec<[f64; ROW_WIDTH]>,
    scaled: bool,
}

impl StrokeMatrix {
    pub fn new(rows: Vec<[f64; ROW_WIDTH]>, scaled: bool) -> Self {
        Self { rows, scaled }
    }

    pub fn rows(&self) -> &[[f64; ROW_WIDTH]] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [[f64; ROW_WIDTH]] {
        &mut self.rows
    }

    pub fn into_rows(self) -> Vec<[f64; ROW_WIDTH]> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_scaled(&self) -> bool {
        self.scaled
    }

    fn space(&self) -> &'static str {
        if self.scaled {
            "scaled"
        } else {
            "unscaled"
        }
    }
}

fn row_of(c: &BasicCommand) -> [f64; ROW_WIDTH] {
    [
        type_code(c.kind),
        c.begin.x,
        c.begin.y,
        c.ctrl0.x,
        c.ctrl0.y,
        c.ctrl1.x,
        c.ctrl1.y,
        c.end.x,
        c.end.y,
    ]
}

/// Stacks every command of `g` into an unscaled matrix with one row per
/// command, in path order then command order.
pub fn to_matrix(g: &Graphic) -> Result<StrokeMatrix, MatrixError> {
    let mut rows = Vec::with_capacity(g.command_count());
    for (pi, path) in g.paths.iter().enumerate() {
        match path.commands.first() {
            Some(c) if c.kind == CommandKind::MoveTo => {}
            _ => return Err(MatrixError::NotSimplified { path: pi }),
        }
        for (ci, w) in path.commands.windows(2).enumerate() {
            if w[0].end != w[1].begin {
                return Err(MatrixError::BrokenChain {
                    path: pi,
                    command: ci + 1,
                });
            }
        }
        rows.extend(path.commands.iter().map(row_of));
    }
    Ok(StrokeMatrix::new(rows, false))
}

/// Rebuilds a graphic from an unscaled matrix. Type values are snapped to
/// the nearest code, a new path starts at every `MoveTo`, and a leading
/// non-move row gets a synthesized `MoveTo` at its begin point. The result
/// may violate interconnection; that is left to the fixer.
pub fn from_matrix(m: &StrokeMatrix, viewbox: ViewBox) -> Graphic {
    let mut paths: Vec<Path> = Vec::new();
    let mut current: Vec<BasicCommand> = Vec::new();
    for r in &m.rows {
        let kind = snap_type(r[0]);
        let cmd = BasicCommand {
            kind,
            begin: Point::new(r[1], r[2]),
            ctrl0: Point::new(r[3], r[4]),
            ctrl1: Point::new(r[5], r[6]),
            end: Point::new(r[7], r[8]),
        };
        if kind == CommandKind::MoveTo {
            if !current.is_empty() {
                paths.push(Path::new(std::mem::take(&mut current)));
            }
        } else if current.is_empty() {
            current.push(BasicCommand::move_to(cmd.begin, cmd.begin));
        }
        current.push(cmd);
    }
    if !current.is_empty() {
        paths.push(Path::new(current));
    }
    Graphic::new(paths, viewbox)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToUnit,
    FromUnit,
}

/// Affine map between canvas coordinates and `[-1, 1]`, using the
/// viewbox's larger extent for both axes. The type channel is unchanged.
pub fn scale(m: &StrokeMatrix, direction: Direction, viewbox: ViewBox) -> Result<StrokeMatrix, MatrixError> {
    let ext = viewbox.extent();
    let origin = [viewbox.min_x, viewbox.min_y];
    let check = |rows: &[[f64; ROW_WIDTH]]| -> Result<(), MatrixError> {
        for (ri, r) in rows.iter().enumerate() {
            for (ci, &v) in r.iter().enumerate() {
                if !(-1.0 - DOMAIN_EPS..=1.0 + DOMAIN_EPS).contains(&v) {
                    return Err(MatrixError::DomainViolation { row: ri, col: ci, value: v });
                }
            }
        }
        Ok(())
    };
    match direction {
        Direction::ToUnit => {
            if m.scaled {
                return Err(MatrixError::WrongSpace {
                    expected: "unscaled",
                    actual: m.space(),
                });
            }
            let rows: Vec<[f64; ROW_WIDTH]> = m
                .rows
                .iter()
                .map(|r| {
                    let mut out = *r;
                    for c in 1..ROW_WIDTH {
                        out[c] = 2.0 * (r[c] - origin[(c - 1) % 2]) / ext - 1.0;
                    }
                    out
                })
                .collect();
            check(&rows)?;
            Ok(StrokeMatrix::new(rows, true))
        }
        Direction::FromUnit => {
            if !m.scaled {
                return Err(MatrixError::WrongSpace {
                    expected: "scaled",
                    actual: m.space(),
                });
            }
            check(&m.rows)?;
            let rows = m
                .rows
                .iter()
                .map(|r| {
                    let mut out = *r;
                    for c in 1..ROW_WIDTH {
                        out[c] = (r[c] + 1.0) / 2.0 * ext + origin[(c - 1) % 2];
                    }
                    out
                })
                .collect();
            Ok(StrokeMatrix::new(rows, false))
        }
    }
}

/// Binary matrix file: `STKM`, little-endian `u32` row count, then the
/// rows as little-endian `f64`, row-major.
pub fn write_stkm<W: Write>(m: &StrokeMatrix, mut w: W) -> Result<(), MatrixError> {
    let count = u32::try_from(m.rows.len()).map_err(|_| MatrixError::Format("too many rows".into()))?;
    w.write_all(STKM_MAGIC)?;
    w.write_all(&count.to_le_bytes())?;
    for r in &m.rows {
        for v in r {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads an `STKM` file. The format does not record the coordinate space,
/// so the caller states it.
pub fn read_stkm<R: Read>(mut r: R, scaled: bool) -> Result<StrokeMatrix, MatrixError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != STKM_MAGIC {
        return Err(MatrixError::Format(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let count = u32::from_le_bytes(word) as usize;
    let mut rows = Vec::with_capacity(count.min(1 << 20));
    let mut buf = [0u8; 8];
    for _ in 0..count {
        let mut row = [0.0; ROW_WIDTH];
        for v in row.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        rows.push(row);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(MatrixError::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok(StrokeMatrix::new(rows, scaled))
}

pub fn to_csv(m: &StrokeMatrix) -> String {
    let mut out = String::from("T,x0,y0,c0x,c0y,c1x,c1y,x1,y1\n");
    for r in &m.rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svg::{gen_synthetic, simplify};

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn move_then_line_rows() {
        let g = Graphic::new(
            vec![Path::new(vec![
                BasicCommand::move_to(p(0.0, 0.0), p(0.0, 0.0)),
                BasicCommand::line_to(p(0.0, 0.0), p(10.0, 0.0)),
            ])],
            ViewBox::new(0.0, 0.0, 10.0, 10.0),
        );
        let m = to_matrix(&g).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.rows()[0], [TYPE_MOVE, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let r1 = m.rows()[1];
        assert_eq!(r1[0], TYPE_LINE);
        assert_eq!(&r1[1..3], &[0.0, 0.0]);
        assert!((r1[3] - 10.0 / 3.0).abs() < 1e-12 && r1[4] == 0.0);
        assert!((r1[5] - 20.0 / 3.0).abs() < 1e-12 && r1[6] == 0.0);
        assert_eq!(&r1[7..], &[10.0, 0.0]);
        assert_eq!(from_matrix(&m, g.viewbox), g);
    }

    #[test]
    fn row_count_is_total_command_count() {
        let mut paths = Vec::new();
        let mut pen = p(0.0, 0.0);
        for len in [2usize, 3, 4] {
            let start = p(pen.x + 1.0, pen.y);
            let mut cmds = vec![BasicCommand::move_to(pen, start)];
            let mut cur = start;
            for _ in 1..len {
                let next = p(cur.x, cur.y + 1.0);
                cmds.push(BasicCommand::line_to(cur, next));
                cur = next;
            }
            pen = cur;
            paths.push(Path::new(cmds));
        }
        let g = Graphic::new(paths, ViewBox::new(0.0, 0.0, 10.0, 10.0));
        assert_eq!(to_matrix(&g).unwrap().len(), 9);
    }

    #[test]
    fn broken_chain_is_reported() {
        let g = Graphic::new(
            vec![Path::new(vec![
                BasicCommand::move_to(p(0.0, 0.0), p(0.0, 0.0)),
                BasicCommand::line_to(p(0.5, 0.0), p(10.0, 0.0)),
            ])],
            ViewBox::new(0.0, 0.0, 10.0, 10.0),
        );
        assert!(matches!(
            to_matrix(&g),
            Err(MatrixError::BrokenChain { path: 0, command: 1 })
        ));
    }

    #[test]
    fn snapping_picks_nearest_code() {
        assert_eq!(snap_type(0.9 * TYPE_CUBIC + 0.1 * TYPE_LINE), CommandKind::CubicBezier);
        assert_eq!(snap_type(-0.6), CommandKind::MoveTo);
        assert_eq!(snap_type(0.2), CommandKind::LineTo);
        assert_eq!(snap_type(-0.5), CommandKind::MoveTo);
        assert_eq!(snap_type(7.0), CommandKind::CubicBezier);
    }

    #[test]
    fn leading_line_gets_synthesized_move() {
        let m = StrokeMatrix::new(vec![[TYPE_LINE, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 4.0]], false);
        let g = from_matrix(&m, ViewBox::default());
        assert_eq!(g.paths[0].commands[0], BasicCommand::move_to(p(1.0, 2.0), p(1.0, 2.0)));
        assert_eq!(g.command_count(), 2);
    }

    #[test]
    fn scale_endpoints_and_midpoint() {
        let vb = ViewBox::new(0.0, 0.0, 256.0, 256.0);
        let m = StrokeMatrix::new(vec![[TYPE_LINE, 128.0, 0.0, 256.0, 128.0, 0.0, 256.0, 64.0, 192.0]], false);
        let s = scale(&m, Direction::ToUnit, vb).unwrap();
        assert_eq!(s.rows()[0], [0.0, 0.0, -1.0, 1.0, 0.0, -1.0, 1.0, -0.5, 0.5]);
        assert_eq!(scale(&s, Direction::FromUnit, vb).unwrap(), m);
    }

    #[test]
    fn scale_rejects_out_of_range_and_wrong_space() {
        let vb = ViewBox::new(0.0, 0.0, 10.0, 10.0);
        let bad = StrokeMatrix::new(vec![[0.0, 1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]], true);
        assert!(matches!(
            scale(&bad, Direction::FromUnit, vb),
            Err(MatrixError::DomainViolation { row: 0, col: 1, .. })
        ));
        let outside = StrokeMatrix::new(vec![[0.0, 11.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]], false);
        assert!(scale(&outside, Direction::ToUnit, vb).is_err());
        assert!(matches!(
            scale(&bad, Direction::ToUnit, vb),
            Err(MatrixError::WrongSpace { .. })
        ));
    }

    #[test]
    fn non_square_viewbox_preserves_aspect() {
        let vb = ViewBox::new(10.0, 20.0, 100.0, 50.0);
        let m = StrokeMatrix::new(vec![[0.0, 60.0, 45.0, 10.0, 20.0, 110.0, 70.0, 60.0, 70.0]], false);
        let s = scale(&m, Direction::ToUnit, vb).unwrap();
        assert_eq!(s.rows()[0][1..], [0.0, -0.5, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stkm_round_trip_and_layout() {
        let g = gen_synthetic(1, 1).remove(0);
        let m = to_matrix(&g).unwrap();
        let mut bytes = Vec::new();
        write_stkm(&m, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"STKM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize, m.len());
        assert_eq!(bytes.len(), 8 + m.len() * 72);
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), TYPE_MOVE);
        assert_eq!(read_stkm(&bytes[..], false).unwrap(), m);
        assert!(read_stkm(&b"STKX\0\0\0\0"[..], false).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = simplify(&gen_synthetic(1, 2)[0]);
        let m = to_matrix(&g).unwrap();
        let csv = to_csv(&m);
        assert_eq!(csv.lines().count(), m.len() + 1);
        assert!(csv.starts_with("T,x0,y0"));
    }
}
