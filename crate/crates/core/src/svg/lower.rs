//! Lowering of SVG drawing primitives to `M`/`L`/`C` commands.

use std::f64::consts::{FRAC_PI_2, PI};

use super::{BasicCommand, Path, Point};

/// Maximum radial error of a single cubic approximating a quarter of the
/// unit circle. Used to bound the error of shorter arc segments, which
/// shrinks roughly with the sixth power of the swept angle.
const QUARTER_ARC_ERROR: f64 = 2.8e-4;

/// Control points of a cubic equivalent to the quadratic `p0, q, p2`.
pub fn quad_to_cubic(p0: Point, q: Point, p2: Point) -> (Point, Point) {
    let c0 = Point::new(p0.x + 2.0 / 3.0 * (q.x - p0.x), p0.y + 2.0 / 3.0 * (q.y - p0.y));
    let c1 = Point::new(p2.x + 2.0 / 3.0 * (q.x - p2.x), p2.y + 2.0 / 3.0 * (q.y - p2.y));
    (c0, c1)
}

/// Control-point distance factor for a circular arc of `sweep` radians.
pub fn arc_handle(sweep: f64) -> f64 {
    4.0 / 3.0 * (sweep / 4.0).tan()
}

/// Center parameterization of an SVG elliptical arc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcCenter {
    pub center: Point,
    pub rx: f64,
    pub ry: f64,
    /// x-axis rotation in radians
    pub phi: f64,
    pub start_angle: f64,
    pub sweep: f64,
}

impl ArcCenter {
    pub fn point_at_angle(&self, theta: f64) -> Point {
        let (s, c) = self.phi.sin_cos();
        let x = self.rx * theta.cos();
        let y = self.ry * theta.sin();
        Point::new(self.center.x + c * x - s * y, self.center.y + s * x + c * y)
    }
}

/// Endpoint-to-center conversion following the SVG implementation notes,
/// including out-of-range radii correction. Returns `None` when the arc
/// degenerates to a straight line (zero radius or coincident endpoints).
pub fn arc_center(
    from: Point,
    rx: f64,
    ry: f64,
    x_axis_rotation_deg: f64,
    large_arc: bool,
    sweep_flag: bool,
    to: Point,
) -> Option<ArcCenter> {
    if from == to {
        return None;
    }
    let mut rx = rx.abs();
    let mut ry = ry.abs();
    if rx == 0.0 || ry == 0.0 {
        return None;
    }
    let phi = x_axis_rotation_deg.to_radians();
    let (s, c) = phi.sin_cos();
    let dx = (from.x - to.x) / 2.0;
    let dy = (from.y - to.y) / 2.0;
    let x1p = c * dx + s * dy;
    let y1p = -s * dx + c * dy;

    let lambda = (x1p * x1p) / (rx * rx) + (y1p * y1p) / (ry * ry);
    if lambda > 1.0 {
        let k = lambda.sqrt();
        rx *= k;
        ry *= k;
    }
    let num = rx * rx * ry * ry - rx * rx * y1p * y1p - ry * ry * x1p * x1p;
    let den = rx * rx * y1p * y1p + ry * ry * x1p * x1p;
    let mut coef = (num / den).max(0.0).sqrt();
    if large_arc == sweep_flag {
        coef = -coef;
    }
    let cxp = coef * rx * y1p / ry;
    let cyp = -coef * ry * x1p / rx;
    let center = Point::new(
        c * cxp - s * cyp + (from.x + to.x) / 2.0,
        s * cxp + c * cyp + (from.y + to.y) / 2.0,
    );

    let angle = |ux: f64, uy: f64, vx: f64, vy: f64| -> f64 {
        let dot = ux * vx + uy * vy;
        let len = (ux * ux + uy * uy).sqrt() * (vx * vx + vy * vy).sqrt();
        let mut a = (dot / len).clamp(-1.0, 1.0).acos();
        if ux * vy - uy * vx < 0.0 {
            a = -a;
        }
        a
    };
    let ux = (x1p - cxp) / rx;
    let uy = (y1p - cyp) / ry;
    let vx = (-x1p - cxp) / rx;
    let vy = (-y1p - cyp) / ry;
    let start_angle = angle(1.0, 0.0, ux, uy);
    let mut sweep = angle(ux, uy, vx, vy) % (2.0 * PI);
    if !sweep_flag && sweep > 0.0 {
        sweep -= 2.0 * PI;
    } else if sweep_flag && sweep < 0.0 {
        sweep += 2.0 * PI;
    }
    Some(ArcCenter {
        center,
        rx,
        ry,
        phi,
        start_angle,
        sweep,
    })
}

/// Number of cubic segments needed for an arc: at least one per quarter
/// turn, more when the radius is large relative to `tolerance`.
pub fn arc_segment_count(arc: &ArcCenter, tolerance: f64) -> usize {
    let sweep = arc.sweep.abs();
    let r = arc.rx.max(arc.ry);
    let mut n = ((sweep / FRAC_PI_2) - 1e-9).ceil().max(1.0) as usize;
    while r * QUARTER_ARC_ERROR * ((sweep / n as f64) / FRAC_PI_2).powi(6) > tolerance && n < 1024 {
        n += 1;
    }
    n
}

/// Cubic segments `(ctrl0, ctrl1, end)` approximating the arc; the first
/// segment starts at `from` and the last ends exactly at `to`.
pub fn arc_to_cubics(arc: &ArcCenter, to: Point, tolerance: f64) -> Vec<(Point, Point, Point)> {
    let n = arc_segment_count(arc, tolerance);
    let step = arc.sweep / n as f64;
    let k = arc_handle(step);
    let (s, c) = arc.phi.sin_cos();
    let deriv = |theta: f64| -> Point {
        let dx = -arc.rx * theta.sin();
        let dy = arc.ry * theta.cos();
        Point::new(c * dx - s * dy, s * dx + c * dy)
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t0 = arc.start_angle + step * i as f64;
        let t1 = t0 + step;
        let p0 = arc.point_at_angle(t0);
        let p3 = if i + 1 == n { to } else { arc.point_at_angle(t1) };
        let d0 = deriv(t0);
        let d1 = deriv(t1);
        let c0 = Point::new(p0.x + k * d0.x, p0.y + k * d0.y);
        let c1 = Point::new(p3.x - k * d1.x, p3.y - k * d1.y);
        out.push((c0, c1, p3));
    }
    out
}

/// Accumulates lowered commands into chained paths.
///
/// The pen position carries across paths, so a `MoveTo` begins where the
/// previous command ended; the first command of a graphic begins at its own
/// end point.
#[derive(Debug)]
pub struct PathBuilder {
    paths: Vec<Path>,
    current: Vec<BasicCommand>,
    pen: Option<Point>,
    subpath_start: Point,
    last_cubic_ctrl: Option<Point>,
    last_quad_ctrl: Option<Point>,
    tolerance: f64,
}

impl PathBuilder {
    pub fn new(tolerance: f64) -> Self {
        Self {
            paths: Vec::new(),
            current: Vec::new(),
            pen: None,
            subpath_start: Point::default(),
            last_cubic_ctrl: None,
            last_quad_ctrl: None,
            tolerance,
        }
    }

    /// Current pen position, if any command has been emitted.
    pub fn pen(&self) -> Option<Point> {
        self.pen
    }

    pub fn has_subpath(&self) -> bool {
        !self.current.is_empty()
    }

    fn flush(&mut self) {
        if !self.current.is_empty() {
            self.paths.push(Path::new(std::mem::take(&mut self.current)));
        }
    }

    fn emit(&mut self, cmd: BasicCommand) {
        self.pen = Some(cmd.end);
        self.current.push(cmd);
    }

    pub fn move_to(&mut self, p: Point) {
        self.flush();
        let begin = self.pen.unwrap_or(p);
        self.emit(BasicCommand::move_to(begin, p));
        self.subpath_start = p;
        self.last_cubic_ctrl = None;
        self.last_quad_ctrl = None;
    }

    fn cursor(&mut self) -> Point {
        if self.current.is_empty() {
            // Drawing without an explicit MoveTo starts at the subpath start.
            let p = self.pen.map(|_| self.subpath_start).unwrap_or_default();
            self.move_to(p);
        }
        self.pen.unwrap_or_default()
    }

    pub fn line_to(&mut self, p: Point) {
        let from = self.cursor();
        self.emit(BasicCommand::line_to(from, p));
        self.last_cubic_ctrl = None;
        self.last_quad_ctrl = None;
    }

    pub fn cubic_to(&mut self, c0: Point, c1: Point, p: Point) {
        let from = self.cursor();
        self.emit(BasicCommand::cubic(from, c0, c1, p));
        self.last_cubic_ctrl = Some(c1);
        self.last_quad_ctrl = None;
    }

    /// `S`: the first control point reflects the previous cubic's second
    /// control point, or coincides with the pen when there is none.
    pub fn smooth_cubic_to(&mut self, c1: Point, p: Point) {
        let from = self.cursor();
        let c0 = match self.last_cubic_ctrl {
            Some(prev) => Point::new(2.0 * from.x - prev.x, 2.0 * from.y - prev.y),
            None => from,
        };
        self.cubic_to(c0, c1, p);
    }

    pub fn quad_to(&mut self, q: Point, p: Point) {
        let from = self.cursor();
        let (c0, c1) = quad_to_cubic(from, q, p);
        self.emit(BasicCommand::cubic(from, c0, c1, p));
        self.last_cubic_ctrl = None;
        self.last_quad_ctrl = Some(q);
    }

    pub fn smooth_quad_to(&mut self, p: Point) {
        let from = self.cursor();
        let q = match self.last_quad_ctrl {
            Some(prev) => Point::new(2.0 * from.x - prev.x, 2.0 * from.y - prev.y),
            None => from,
        };
        self.quad_to(q, p);
    }

    #[allow(clippy::too_many_arguments)]
    pub fn arc_to(&mut self, rx: f64, ry: f64, rotation: f64, large_arc: bool, sweep: bool, p: Point) {
        let from = self.cursor();
        match arc_center(from, rx, ry, rotation, large_arc, sweep, p) {
            None => {
                if from != p {
                    self.line_to(p);
                }
            }
            Some(arc) => {
                for (c0, c1, end) in arc_to_cubics(&arc, p, self.tolerance) {
                    let begin = self.pen.unwrap_or(from);
                    self.emit(BasicCommand::cubic(begin, c0, c1, end));
                }
                self.last_cubic_ctrl = None;
                self.last_quad_ctrl = None;
            }
        }
    }

    /// `Z`: a line back to the subpath start; the pen stays there.
    pub fn close(&mut self) {
        if self.current.is_empty() {
            return;
        }
        let start = self.subpath_start;
        let from = self.pen.unwrap_or(start);
        self.emit(BasicCommand::line_to(from, start));
        self.last_cubic_ctrl = None;
        self.last_quad_ctrl = None;
    }

    pub fn finish(mut self) -> Vec<Path> {
        self.flush();
        self.paths
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_arc(arc: &ArcCenter, t: f64) -> Point {
        arc.point_at_angle(arc.start_angle + arc.sweep * t)
    }

    #[test]
    fn quarter_circle_handle_constant() {
        assert!((arc_handle(FRAC_PI_2) - 0.552_284_749_8).abs() < 1e-9);
    }

    #[test]
    fn quarter_arc_is_one_cubic_with_small_radial_error() {
        let from = Point::new(1.0, 0.0);
        let to = Point::new(0.0, 1.0);
        let arc = arc_center(from, 1.0, 1.0, 0.0, false, true, to).unwrap();
        assert!((arc.sweep - FRAC_PI_2).abs() < 1e-12);
        let segs = arc_to_cubics(&arc, to, 1e-3);
        assert_eq!(segs.len(), 1);
        let (c0, c1, end) = segs[0];
        assert!((c0.x - 1.0).abs() < 1e-12 && (c0.y - 0.552_284_749_8).abs() < 1e-9);
        assert!((c1.x - 0.552_284_749_8).abs() < 1e-9 && (c1.y - 1.0).abs() < 1e-12);
        assert_eq!(end, to);
        let mut worst: f64 = 0.0;
        for i in 0..=4096 {
            let t = i as f64 / 4096.0;
            let p = super::super::cubic_point(from, c0, c1, end, t);
            worst = worst.max((p.x.hypot(p.y) - 1.0).abs());
        }
        assert!(worst < 3e-4, "radial error {worst}");
    }

    #[test]
    fn large_arcs_subdivide_to_meet_tolerance() {
        let from = Point::new(200.0, 100.0);
        let to = Point::new(0.0, 100.0);
        let arc = arc_center(from, 100.0, 100.0, 0.0, false, true, to).unwrap();
        let segs = arc_to_cubics(&arc, to, 1e-3);
        assert!(segs.len() > 2);
        let mut begin = from;
        for (c0, c1, end) in &segs {
            for i in 0..64 {
                let t = i as f64 / 63.0;
                let p = super::super::cubic_point(begin, *c0, *c1, *end, t);
                let r = (p.x - 100.0).hypot(p.y - 100.0);
                assert!((r - 100.0).abs() <= 1e-3, "deviation {}", (r - 100.0).abs());
            }
            begin = *end;
        }
    }

    #[test]
    fn radii_too_small_are_scaled_up() {
        let from = Point::new(0.0, 0.0);
        let to = Point::new(10.0, 0.0);
        let arc = arc_center(from, 1.0, 1.0, 0.0, false, true, to).unwrap();
        assert!((arc.rx - 5.0).abs() < 1e-9);
        let mid = sample_arc(&arc, 0.5);
        assert!((mid.x - 5.0).abs() < 1e-9);
        assert!((mid.y.abs() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn rotated_ellipse_endpoints_match() {
        let from = Point::new(3.0, 1.0);
        let to = Point::new(-2.0, 4.0);
        let arc = arc_center(from, 4.0, 2.0, 30.0, true, false, to).unwrap();
        let a = sample_arc(&arc, 0.0);
        let b = sample_arc(&arc, 1.0);
        assert!(a.distance(from) < 1e-9);
        assert!(b.distance(to) < 1e-9);
    }
}
