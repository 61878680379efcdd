//! Simplified vector graphics: every path is a chain of `M`, `L` and `C`
//! commands with explicit begin points.
//!
//! Parsing lowers the full SVG path grammar and the basic shape elements to
//! that form. [`preprocess`] applies the corpus filters, [`synth`] produces
//! desk-scale synthetic corpora, and [`json`] reads and writes the canonical
//! simplified-graphic JSON.

pub mod json;
pub mod lower;
mod parse;
pub mod preprocess;
pub mod synth;
mod write;

use std::fmt;

use thiserror::Error;

pub use parse::{parse_svg, parse_svg_report, ParseReport, Unsupported};
pub use preprocess::{preprocess, PreprocessConfig, RejectReason, Rejected};
pub use synth::{gen_synthetic, Family};
pub use write::to_svg;

/// Default tolerance (canvas units) for lowering curves that have no exact
/// cubic representation.
pub const DEFAULT_ARC_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SvgError {
    #[error("malformed SVG at byte {offset}: {message}")]
    MalformedSvg { offset: usize, message: String },
    #[error("document has no drawable content")]
    EmptyGraphic,
    #[error("invalid simplified-graphic JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CommandKind {
    MoveTo,
    LineTo,
    CubicBezier,
}

impl CommandKind {
    pub const ALL: [CommandKind; 3] = [CommandKind::MoveTo, CommandKind::LineTo, CommandKind::CubicBezier];

    pub fn as_char(self) -> char {
        match self {
            CommandKind::MoveTo => 'M',
            CommandKind::LineTo => 'L',
            CommandKind::CubicBezier => 'C',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'M' => Some(CommandKind::MoveTo),
            'L' => Some(CommandKind::LineTo),
            'C' => Some(CommandKind::CubicBezier),
            _ => None,
        }
    }
}

/// One basic command. `MoveTo` and `LineTo` carry control points too; the
/// canonical fill places them at 1/3 and 2/3 of the segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicCommand {
    pub kind: CommandKind,
    pub begin: Point,
    pub ctrl0: Point,
    pub ctrl1: Point,
    pub end: Point,
}

impl BasicCommand {
    pub fn move_to(begin: Point, end: Point) -> Self {
        Self::filled(CommandKind::MoveTo, begin, end)
    }

    pub fn line_to(begin: Point, end: Point) -> Self {
        Self::filled(CommandKind::LineTo, begin, end)
    }

    pub fn cubic(begin: Point, ctrl0: Point, ctrl1: Point, end: Point) -> Self {
        Self {
            kind: CommandKind::CubicBezier,
            begin,
            ctrl0,
            ctrl1,
            end,
        }
    }

    fn filled(kind: CommandKind, begin: Point, end: Point) -> Self {
        Self {
            kind,
            begin,
            ctrl0: begin.lerp(end, 1.0 / 3.0),
            ctrl1: begin.lerp(end, 2.0 / 3.0),
            end,
        }
    }

    /// Re-derives the control points of `M`/`L` commands from their
    /// endpoints. Cubics are returned unchanged.
    pub fn canonical(self) -> Self {
        match self.kind {
            CommandKind::CubicBezier => self,
            kind => Self::filled(kind, self.begin, self.end),
        }
    }

    /// Point at parameter `t` of the drawn geometry. A `MoveTo` draws
    /// nothing, so it is treated as the straight segment it jumps along.
    pub fn point_at(&self, t: f64) -> Point {
        match self.kind {
            CommandKind::CubicBezier => cubic_point(self.begin, self.ctrl0, self.ctrl1, self.end, t),
            _ => self.begin.lerp(self.end, t),
        }
    }

    pub fn points(&self) -> [Point; 4] {
        [self.begin, self.ctrl0, self.ctrl1, self.end]
    }

    pub fn is_finite(&self) -> bool {
        self.points().iter().all(|p| p.is_finite())
    }
}

pub fn cubic_point(p0: Point, p1: Point, p2: Point, p3: Point, t: f64) -> Point {
    let u = 1.0 - t;
    let a = u * u * u;
    let b = 3.0 * u * u * t;
    let c = 3.0 * u * t * t;
    let d = t * t * t;
    Point::new(
        a * p0.x + b * p1.x + c * p2.x + d * p3.x,
        a * p0.y + b * p1.y + c * p2.y + d * p3.y,
    )
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Path {
    pub commands: Vec<BasicCommand>,
}

impl Path {
    pub fn new(commands: Vec<BasicCommand>) -> Self {
        Self { commands }
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewBox {
    pub min_x: f64,
    pub min_y: f64,
    pub width: f64,
    pub height: f64,
}

impl ViewBox {
    pub const fn new(min_x: f64, min_y: f64, width: f64, height: f64) -> Self {
        Self {
            min_x,
            min_y,
            width,
            height,
        }
    }

    /// The larger of width and height; both axes are normalized by it so
    /// the aspect ratio survives scaling.
    pub fn extent(&self) -> f64 {
        self.width.max(self.height)
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0.0
            && self.height > 0.0
            && self.min_x.is_finite()
            && self.min_y.is_finite()
            && self.width.is_finite()
            && self.height.is_finite()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.min_x, self.min_y, self.width, self.height]
    }
}

impl Default for ViewBox {
    fn default() -> Self {
        ViewBox::new(0.0, 0.0, 256.0, 256.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graphic {
    pub paths: Vec<Path>,
    pub viewbox: ViewBox,
    pub keywords: Vec<String>,
}

impl Graphic {
    pub fn new(paths: Vec<Path>, viewbox: ViewBox) -> Self {
        Self {
            paths,
            viewbox,
            keywords: Vec::new(),
        }
    }

    pub fn with_keywords(mut self, keywords: Vec<String>) -> Self {
        self.keywords = keywords;
        self
    }

    /// Total number of basic commands, the row count of the stroke matrix.
    pub fn command_count(&self) -> usize {
        self.paths.iter().map(Path::len).sum()
    }

    pub fn commands(&self) -> impl Iterator<Item = &BasicCommand> {
        self.paths.iter().flat_map(|p| p.commands.iter())
    }
}

/// Normalizes a graphic to the canonical three-command form.
///
/// Paths are split so that each starts with its only `MoveTo`, every
/// command's begin point is the pen position left by its predecessor, and
/// `M`/`L` control points follow the canonical 1/3, 2/3 fill. A graphic
/// that is already canonical is returned unchanged.
pub fn simplify(g: &Graphic) -> Graphic {
    let mut paths: Vec<Path> = Vec::with_capacity(g.paths.len());
    let mut pen: Option<Point> = None;
    for path in &g.paths {
        let mut current: Vec<BasicCommand> = Vec::with_capacity(path.len());
        for cmd in &path.commands {
            if cmd.kind == CommandKind::MoveTo {
                if !current.is_empty() {
                    paths.push(Path::new(std::mem::take(&mut current)));
                }
                current.push(BasicCommand::move_to(pen.unwrap_or(cmd.end), cmd.end));
            } else {
                if current.is_empty() {
                    // A path must open with a MoveTo; synthesize one at the
                    // command's own begin point.
                    current.push(BasicCommand::move_to(pen.unwrap_or(cmd.begin), cmd.begin));
                }
                let mut out = *cmd;
                out.begin = current[current.len() - 1].end;
                current.push(out.canonical());
            }
            pen = current.last().map(|c| c.end);
        }
        if !current.is_empty() {
            paths.push(Path::new(current));
        }
    }
    Graphic {
        paths,
        viewbox: g.viewbox,
        keywords: g.keywords.clone(),
    }
}

/// True when every path starts with its only `MoveTo` and all adjacent
/// commands within a path share end/begin points exactly.
pub fn is_interconnected(g: &Graphic) -> bool {
    g.paths.iter().all(|p| {
        p.commands
            .windows(2)
            .all(|w| w[0].end == w[1].begin)
    })
}
