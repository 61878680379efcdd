use log::warn;

use super::lower::PathBuilder;
use super::{simplify, Graphic, Point, SvgError, ViewBox, DEFAULT_ARC_TOLERANCE};

/// An element that was skipped because it carries no supported geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unsupported {
    pub element: String,
    pub offset: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParseReport {
    pub graphic: Graphic,
    pub unsupported: Vec<Unsupported>,
}

/// Parses an SVG document and lowers all drawable content to the
/// three-command form. Skipped elements are logged as warnings.
pub fn parse_svg(text: &str) -> Result<Graphic, SvgError> {
    let report = parse_svg_report(text, DEFAULT_ARC_TOLERANCE)?;
    for u in &report.unsupported {
        warn!("skipping <{}> at byte {}: {}", u.element, u.offset, u.reason);
    }
    Ok(report.graphic)
}

/// Like [`parse_svg`], returning the skipped elements instead of logging.
pub fn parse_svg_report(text: &str, arc_tolerance: f64) -> Result<ParseReport, SvgError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        SvgError::MalformedSvg {
            offset: byte_offset(text, pos.row as usize, pos.col as usize),
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "svg" {
        return Err(SvgError::MalformedSvg {
            offset: root.range().start,
            message: format!("root element is <{}>, expected <svg>", root.tag_name().name()),
        });
    }

    let mut walker = Walker {
        builder: PathBuilder::new(arc_tolerance),
        unsupported: Vec::new(),
    };
    walker.visit_children(root)?;
    let paths = walker.builder.finish();
    if paths.is_empty() {
        return Err(SvgError::EmptyGraphic);
    }

    let viewbox = match root.attribute("viewBox").and_then(parse_viewbox) {
        Some(vb) => vb,
        None => match (
            root.attribute("width").and_then(parse_length),
            root.attribute("height").and_then(parse_length),
        ) {
            (Some(w), Some(h)) if w > 0.0 && h > 0.0 => ViewBox::new(0.0, 0.0, w, h),
            _ => bounding_viewbox(&paths),
        },
    };

    let keywords = read_keywords(root);
    let graphic = simplify(&Graphic {
        paths,
        viewbox,
        keywords,
    });
    Ok(ParseReport {
        graphic,
        unsupported: walker.unsupported,
    })
}

fn byte_offset(text: &str, row: usize, col: usize) -> usize {
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if i + 1 == row {
            return offset
                + line
                    .char_indices()
                    .nth(col.saturating_sub(1))
                    .map(|(b, _)| b)
                    .unwrap_or(line.len());
        }
        offset += line.len();
    }
    text.len()
}

fn bounding_viewbox(paths: &[super::Path]) -> ViewBox {
    let mut min = Point::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in paths.iter().flat_map(|p| p.commands.iter()).flat_map(|c| c.points()) {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    let w = max.x - min.x;
    let h = max.y - min.y;
    ViewBox::new(min.x, min.y, if w > 0.0 { w } else { 1.0 }, if h > 0.0 { h } else { 1.0 })
}

/// Keywords come from a `data-keywords` attribute on the root element
/// (comma separated when a comma is present, otherwise whitespace
/// separated), falling back to the text of a top-level `<title>`.
fn read_keywords(root: roxmltree::Node<'_, '_>) -> Vec<String> {
    let raw = root.attribute("data-keywords").map(str::to_owned).or_else(|| {
        root.children()
            .find(|n| n.is_element() && n.tag_name().name() == "title")
            .and_then(|n| n.text())
            .map(str::to_owned)
    });
    match raw {
        None => Vec::new(),
        Some(s) if s.contains(',') => s
            .split(',')
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(str::to_owned)
            .collect(),
        Some(s) => s.split_whitespace().map(str::to_owned).collect(),
    }
}

fn parse_viewbox(s: &str) -> Option<ViewBox> {
    let parts: Vec<f64> = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()
        .ok()?;
    match parts.as_slice() {
        [x, y, w, h] if *w > 0.0 && *h > 0.0 => Some(ViewBox::new(*x, *y, *w, *h)),
        _ => None,
    }
}

/// Parses a length, ignoring absolute unit suffixes. Percentages are not
/// resolvable without layout and yield `None`.
fn parse_length(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.ends_with('%') {
        return None;
    }
    let end = s
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(s.len());
    s[..end].trim().parse().ok()
}

const CONTAINERS: &[&str] = &["svg", "g", "a", "switch"];
const SILENT: &[&str] = &[
    "defs", "title", "desc", "metadata", "style", "script", "symbol", "marker", "clipPath", "mask",
];
const DRAWABLE: &[&str] = &["path", "rect", "circle", "ellipse", "line", "polyline", "polygon"];

struct Walker {
    builder: PathBuilder,
    unsupported: Vec<Unsupported>,
}

impl Walker {
    fn visit_children(&mut self, node: roxmltree::Node<'_, '_>) -> Result<(), SvgError> {
        for child in node.children().filter(|n| n.is_element()) {
            let name = child.tag_name().name();
            if child.has_attribute("transform") {
                self.unsupported.push(Unsupported {
                    element: name.to_owned(),
                    offset: child.range().start,
                    reason: "transform attribute ignored".into(),
                });
            }
            if CONTAINERS.contains(&name) {
                self.visit_children(child)?;
            } else if DRAWABLE.contains(&name) {
                self.shape(child)?;
            } else if !SILENT.contains(&name) {
                self.unsupported.push(Unsupported {
                    element: name.to_owned(),
                    offset: child.range().start,
                    reason: "element has no supported geometry".into(),
                });
            }
        }
        Ok(())
    }

    fn shape(&mut self, node: roxmltree::Node<'_, '_>) -> Result<(), SvgError> {
        let num = |name: &str| node.attribute(name).and_then(parse_length).unwrap_or(0.0);
        let b = &mut self.builder;
        match node.tag_name().name() {
            "path" => {
                if let Some(attr) = node.attribute_node("d") {
                    let base = attr.range_value().start;
                    parse_path_data(attr.value(), base, b)?;
                }
            }
            "rect" => {
                let (x, y, w, h) = (num("x"), num("y"), num("width"), num("height"));
                if w > 0.0 && h > 0.0 {
                    let rx_attr = node.attribute("rx").and_then(parse_length);
                    let ry_attr = node.attribute("ry").and_then(parse_length);
                    let (rx, ry) = match (rx_attr, ry_attr) {
                        (Some(rx), Some(ry)) => (rx, ry),
                        (Some(r), None) | (None, Some(r)) => (r, r),
                        (None, None) => (0.0, 0.0),
                    };
                    let rx = rx.clamp(0.0, w / 2.0);
                    let ry = ry.clamp(0.0, h / 2.0);
                    rect(b, x, y, w, h, rx, ry);
                }
            }
            "circle" => {
                let r = num("r");
                if r > 0.0 {
                    ellipse(b, num("cx"), num("cy"), r, r);
                }
            }
            "ellipse" => {
                let (rx, ry) = (num("rx"), num("ry"));
                if rx > 0.0 && ry > 0.0 {
                    ellipse(b, num("cx"), num("cy"), rx, ry);
                }
            }
            "line" => {
                b.move_to(Point::new(num("x1"), num("y1")));
                b.line_to(Point::new(num("x2"), num("y2")));
            }
            name @ ("polyline" | "polygon") => {
                let pts = node.attribute("points").unwrap_or("");
                let base = node
                    .attribute_node("points")
                    .map(|a| a.range_value().start)
                    .unwrap_or(node.range().start);
                let values = parse_number_list(pts, base)?;
                if values.len() % 2 != 0 {
                    return Err(SvgError::MalformedSvg {
                        offset: base,
                        message: "odd number of coordinates in points".into(),
                    });
                }
                let mut it = values.chunks_exact(2).map(|c| Point::new(c[0], c[1]));
                if let Some(first) = it.next() {
                    b.move_to(first);
                    for p in it {
                        b.line_to(p);
                    }
                    if name == "polygon" {
                        b.close();
                    }
                }
            }
            _ => unreachable!("filtered by DRAWABLE"),
        }
        Ok(())
    }
}

fn rect(b: &mut PathBuilder, x: f64, y: f64, w: f64, h: f64, rx: f64, ry: f64) {
    if rx == 0.0 || ry == 0.0 {
        b.move_to(Point::new(x, y));
        b.line_to(Point::new(x + w, y));
        b.line_to(Point::new(x + w, y + h));
        b.line_to(Point::new(x, y + h));
        b.close();
        return;
    }
    b.move_to(Point::new(x + rx, y));
    b.line_to(Point::new(x + w - rx, y));
    b.arc_to(rx, ry, 0.0, false, true, Point::new(x + w, y + ry));
    b.line_to(Point::new(x + w, y + h - ry));
    b.arc_to(rx, ry, 0.0, false, true, Point::new(x + w - rx, y + h));
    b.line_to(Point::new(x + rx, y + h));
    b.arc_to(rx, ry, 0.0, false, true, Point::new(x, y + h - ry));
    b.line_to(Point::new(x, y + ry));
    b.arc_to(rx, ry, 0.0, false, true, Point::new(x + rx, y));
}

fn ellipse(b: &mut PathBuilder, cx: f64, cy: f64, rx: f64, ry: f64) {
    b.move_to(Point::new(cx + rx, cy));
    b.arc_to(rx, ry, 0.0, false, true, Point::new(cx, cy + ry));
    b.arc_to(rx, ry, 0.0, false, true, Point::new(cx - rx, cy));
    b.arc_to(rx, ry, 0.0, false, true, Point::new(cx, cy - ry));
    b.arc_to(rx, ry, 0.0, false, true, Point::new(cx + rx, cy));
}

/// Scanner over SVG number/flag syntax. Offsets are reported relative to
/// the whole document.
struct Scanner<'a> {
    s: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Scanner<'a> {
    fn new(s: &'a str, base: usize) -> Self {
        Self {
            s: s.as_bytes(),
            pos: 0,
            base,
        }
    }

    fn error(&self, message: impl Into<String>) -> SvgError {
        SvgError::MalformedSvg {
            offset: self.base + self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && (self.s[self.pos].is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn skip_separator(&mut self) {
        self.skip_ws();
        if self.peek() == Some(b',') {
            self.pos += 1;
            self.skip_ws();
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.s.len()
    }

    fn starts_number(&mut self) -> bool {
        self.skip_ws();
        matches!(self.peek(), Some(b'0'..=b'9' | b'.' | b'-' | b'+'))
    }

    fn number(&mut self) -> Result<f64, SvgError> {
        self.skip_separator();
        let start = self.pos;
        if matches!(self.peek(), Some(b'+' | b'-')) {
            self.pos += 1;
        }
        let mut digits = 0;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
            digits += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
                digits += 1;
            }
        }
        if digits == 0 {
            self.pos = start;
            return Err(self.error("expected number"));
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
            if self.pos == exp_start {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
        let v: f64 = text.parse().map_err(|_| {
            let mut e = self.error(format!("invalid number '{text}'"));
            if let SvgError::MalformedSvg { offset, .. } = &mut e {
                *offset = self.base + start;
            }
            e
        })?;
        if !v.is_finite() {
            return Err(self.error("non-finite number"));
        }
        Ok(v)
    }

    fn flag(&mut self) -> Result<bool, SvgError> {
        self.skip_separator();
        match self.peek() {
            Some(b'0') => {
                self.pos += 1;
                Ok(false)
            }
            Some(b'1') => {
                self.pos += 1;
                Ok(true)
            }
            _ => Err(self.error("expected arc flag 0 or 1")),
        }
    }

    fn point(&mut self) -> Result<Point, SvgError> {
        let x = self.number()?;
        let y = self.number()?;
        Ok(Point::new(x, y))
    }
}

fn parse_number_list(s: &str, base: usize) -> Result<Vec<f64>, SvgError> {
    let mut sc = Scanner::new(s, base);
    let mut out = Vec::new();
    while !sc.at_end() {
        out.push(sc.number()?);
        sc.skip_separator();
    }
    Ok(out)
}

/// Parses path data into the builder, lowering every command. Relative
/// commands resolve against the pen position.
pub(crate) fn parse_path_data(d: &str, base: usize, b: &mut PathBuilder) -> Result<(), SvgError> {
    let mut sc = Scanner::new(d, base);
    let mut started = false;
    let mut cmd: Option<u8> = None;
    loop {
        if sc.at_end() {
            break;
        }
        let c = sc.peek().expect("not at end");
        let letter = if c.is_ascii_alphabetic() {
            sc.pos += 1;
            c
        } else {
            match cmd {
                // Implicit repetition; coordinates after M/m are line-tos.
                Some(b'M') => b'L',
                Some(b'm') => b'l',
                Some(b'Z' | b'z') | None => return Err(sc.error("expected command letter")),
                Some(prev) => prev,
            }
        };
        if !started && !matches!(letter, b'M' | b'm') {
            return Err(sc.error("path data must begin with a moveto"));
        }
        let pen = b.pen().unwrap_or_default();
        let rel = letter.is_ascii_lowercase();
        let offset = |p: Point| if rel { Point::new(p.x + pen.x, p.y + pen.y) } else { p };
        match letter.to_ascii_uppercase() {
            b'M' => {
                let p = sc.point()?;
                // A leading relative moveto is absolute.
                let p = if started { offset(p) } else { p };
                b.move_to(p);
                started = true;
            }
            b'L' => {
                let p = offset(sc.point()?);
                b.line_to(p);
            }
            b'H' => {
                let x = sc.number()?;
                let x = if rel { pen.x + x } else { x };
                b.line_to(Point::new(x, pen.y));
            }
            b'V' => {
                let y = sc.number()?;
                let y = if rel { pen.y + y } else { y };
                b.line_to(Point::new(pen.x, y));
            }
            b'C' => {
                let c0 = offset(sc.point()?);
                let c1 = offset(sc.point()?);
                let p = offset(sc.point()?);
                b.cubic_to(c0, c1, p);
            }
            b'S' => {
                let c1 = offset(sc.point()?);
                let p = offset(sc.point()?);
                b.smooth_cubic_to(c1, p);
            }
            b'Q' => {
                let q = offset(sc.point()?);
                let p = offset(sc.point()?);
                b.quad_to(q, p);
            }
            b'T' => {
                let p = offset(sc.point()?);
                b.smooth_quad_to(p);
            }
            b'A' => {
                let rx = sc.number()?;
                let ry = sc.number()?;
                let rot = sc.number()?;
                let large = sc.flag()?;
                let sweep = sc.flag()?;
                let p = offset(sc.point()?);
                b.arc_to(rx, ry, rot, large, sweep, p);
            }
            b'Z' => b.close(),
            _ => {
                sc.pos -= 1;
                return Err(sc.error(format!("unknown path command '{}'", letter as char)));
            }
        }
        cmd = Some(letter);
        sc.skip_separator();
        if matches!(letter, b'Z' | b'z') && sc.starts_number() {
            return Err(sc.error("number after closepath"));
        }
    }
    Ok(())
}
