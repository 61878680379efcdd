use std::fmt::Write as _;

use super::{CommandKind, Graphic};

/// Serializes a graphic as a standalone SVG document with one `<path>` per
/// path, stroked black on a white background.
pub fn to_svg(g: &Graphic) -> String {
    let vb = g.viewbox;
    let stroke = vb.extent() / 256.0;
    let mut out = String::new();
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {} {}\"",
        vb.min_x, vb.min_y, vb.width, vb.height
    );
    if !g.keywords.is_empty() {
        let kw = g.keywords.join(", ").replace('&', "&amp;").replace('"', "&quot;").replace('<', "&lt;");
        let _ = write!(out, " data-keywords=\"{kw}\"");
    }
    out.push_str(" style=\"background-color:white\">\n");
    for path in &g.paths {
        let mut d = String::new();
        for c in &path.commands {
            if !d.is_empty() {
                d.push(' ');
            }
            match c.kind {
                CommandKind::MoveTo => {
                    let _ = write!(d, "M {} {}", c.end.x, c.end.y);
                }
                CommandKind::LineTo => {
                    let _ = write!(d, "L {} {}", c.end.x, c.end.y);
                }
                CommandKind::CubicBezier => {
                    let _ = write!(
                        d,
                        "C {} {} {} {} {} {}",
                        c.ctrl0.x, c.ctrl0.y, c.ctrl1.x, c.ctrl1.y, c.end.x, c.end.y
                    );
                }
            }
        }
        let _ = writeln!(out, "<path d=\"{d}\" fill=\"none\" stroke=\"black\" stroke-width=\"{stroke}\"/>");
    }
    out.push_str("</svg>\n");
    out
}
