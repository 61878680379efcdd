//! Monochrome stroke rasterizer.
//!
//! Coordinates map through the same square window as matrix scaling:
//! `[min, min + extent]` on both axes onto `res` pixels. Cubics are
//! flattened by de Casteljau subdivision; segments are drawn with
//! Bresenham's algorithm and dilated to the requested stroke width.

use std::io::{self, Write};
use std::path::Path as FsPath;

use thiserror::Error;

use crate::svg::{CommandKind, Graphic, Point};

pub const MIN_RES: usize = 8;
/// Maximum control-point distance from the chord, in pixels, before a
/// cubic piece is drawn as a straight segment.
pub const FLATNESS_PX: f64 = 0.25;
const MAX_DEPTH: u32 = 16;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("resolution {0} below {MIN_RES}")]
    Resolution(usize),
    #[error("invalid viewbox")]
    ViewBox,
    #[error("image encoding failed: {0}")]
    Encode(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `res × res` grid; `true` is ink, `false` the white background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    res: usize,
    pixels: Vec<bool>,
}

impl Bitmap {
    pub fn new(res: usize) -> Result<Self, RenderError> {
        if res < MIN_RES {
            return Err(RenderError::Resolution(res));
        }
        Ok(Self {
            res,
            pixels: vec![false; res * res],
        })
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.res + x]
    }

    pub fn set(&mut self, x: i64, y: i64) {
        if x >= 0 && y >= 0 && (x as usize) < self.res && (y as usize) < self.res {
            self.pixels[y as usize * self.res + x as usize] = true;
        }
    }

    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    /// Set pixels as `(x, y)`.
    pub fn ink(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(i, _)| (i % self.res, i / self.res))
    }

    pub fn to_pbm(&self) -> String {
        let mut out = format!("P1\n{} {}\n", self.res, self.res);
        for row in self.pixels.chunks(self.res) {
            let line: Vec<&str> = row.iter().map(|&p| if p { "1" } else { "0" }).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// 8-bit grayscale PNG, black ink on white.
    pub fn write_png<W: Write>(&self, w: W) -> Result<(), RenderError> {
        let data: Vec<u8> = self.pixels.iter().map(|&p| if p { 0 } else { 255 }).collect();
        let encoder = image::codecs::png::PngEncoder::new(w);
        image::ImageEncoder::write_image(encoder, &data, self.res as u32, self.res as u32, image::ExtendedColorType::L8)
            .map_err(|e| RenderError::Encode(e.to_string()))
    }

    /// Writes PNG or PBM depending on the file extension (`.pbm` for PBM).
    pub fn save(&self, path: &FsPath) -> Result<(), RenderError> {
        let is_pbm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pbm"));
        if is_pbm {
            std::fs::write(path, self.to_pbm())?;
        } else {
            let f = std::fs::File::create(path)?;
            self.write_png(io::BufWriter::new(f))?;
        }
        Ok(())
    }
}

struct Canvas {
    origin: Point,
    scale: f64,
}

impl Canvas {
    fn px(&self, p: Point) -> Point {
        Point::new((p.x - self.origin.x) * self.scale, (p.y - self.origin.y) * self.scale)
    }
}

fn flatness(p0: Point, p1: Point, p2: Point, p3: Point) -> f64 {
    let (dx, dy) = (p3.x - p0.x, p3.y - p0.y);
    let len = (dx * dx + dy * dy).sqrt();
    let dist = |p: Point| {
        if len < 1e-12 {
            p.distance(p0)
        } else {
            ((p.x - p0.x) * dy - (p.y - p0.y) * dx).abs() / len
        }
    };
    dist(p1).max(dist(p2))
}

/// Appends the end points of a flattened cubic (in pixel space) to `out`;
/// the start point is not repeated.
pub fn flatten_cubic(p0: Point, p1: Point, p2: Point, p3: Point, tol: f64, out: &mut Vec<Point>) {
    flatten_rec(p0, p1, p2, p3, tol, 0, out);
}

fn flatten_rec(p0: Point, p1: Point, p2: Point, p3: Point, tol: f64, depth: u32, out: &mut Vec<Point>) {
    if depth >= MAX_DEPTH || flatness(p0, p1, p2, p3) < tol {
        out.push(p3);
        return;
    }
    let p01 = p0.lerp(p1, 0.5);
    let p12 = p1.lerp(p2, 0.5);
    let p23 = p2.lerp(p3, 0.5);
    let a = p01.lerp(p12, 0.5);
    let b = p12.lerp(p23, 0.5);
    let mid = a.lerp(b, 0.5);
    flatten_rec(p0, p01, a, mid, tol, depth + 1, out);
    flatten_rec(mid, b, p23, p3, tol, depth + 1, out);
}

fn to_cell(v: f64) -> i64 {
    v.floor().clamp(-1e9, 1e9) as i64
}

/// Bresenham between the cells containing `a` and `b`, dilated to
/// `stroke_px`.
pub fn draw_segment(bm: &mut Bitmap, a: Point, b: Point, stroke_px: usize) {
    let (mut x0, mut y0) = (to_cell(a.x), to_cell(a.y));
    let (x1, y1) = (to_cell(b.x), to_cell(b.y));
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let w = stroke_px.max(1) as i64;
    let (lo, hi) = (-(w - 1) / 2, w / 2);
    loop {
        for oy in lo..=hi {
            for ox in lo..=hi {
                bm.set(x0 + ox, y0 + oy);
            }
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

pub fn rasterize(g: &Graphic, res: usize, stroke_px: usize) -> Result<Bitmap, RenderError> {
    rasterize_with(g, res, stroke_px, FLATNESS_PX)
}

/// [`rasterize`] with an explicit flatness threshold in pixels.
pub fn rasterize_with(g: &Graphic, res: usize, stroke_px: usize, flat_px: f64) -> Result<Bitmap, RenderError> {
    let mut bm = Bitmap::new(res)?;
    if !g.viewbox.is_valid() {
        return Err(RenderError::ViewBox);
    }
    let canvas = Canvas {
        origin: Point::new(g.viewbox.min_x, g.viewbox.min_y),
        scale: res as f64 / g.viewbox.extent(),
    };
    let mut pts = Vec::new();
    for c in g.commands() {
        match c.kind {
            CommandKind::MoveTo => {}
            CommandKind::LineTo => draw_segment(&mut bm, canvas.px(c.begin), canvas.px(c.end), stroke_px),
            CommandKind::CubicBezier => {
                let p0 = canvas.px(c.begin);
                pts.clear();
                flatten_cubic(p0, canvas.px(c.ctrl0), canvas.px(c.ctrl1), canvas.px(c.end), flat_px, &mut pts);
                let mut prev = p0;
                for &p in &pts {
                    draw_segment(&mut bm, prev, p, stroke_px);
                    prev = p;
                }
            }
        }
    }
    Ok(bm)
}
