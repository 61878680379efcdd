//! Canonical simplified-graphic JSON.
//!
//! ```text
//! {"viewbox":[0.000000,0.000000,256.000000,256.000000],
//!  "keywords":["circle","round"],
//!  "paths":[[["M",x0,y0,c0x,c0y,c1x,c1y,x1,y1],...],...]}
//! ```
//!
//! Numbers are written with six decimal places. The writer is hand-rolled
//! because that fixed-precision layout is part of the format.

use std::fmt::Write as _;

use serde::Deserialize;

use super::{BasicCommand, CommandKind, Graphic, Path, Point, SvgError, ViewBox};

pub const FORMAT_VERSION: &str = "simplified-graphic-json v1";

fn num(out: &mut String, v: f64) {
    // Avoid "-0.000000" so equal geometry always serializes identically.
    let v = if v == 0.0 { 0.0 } else { v };
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        out.push_str("0.000000");
    } else {
        out.push_str(&s);
    }
}

fn string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serialization"));
}

pub fn to_json(g: &Graphic) -> String {
    let mut out = String::with_capacity(64 + 80 * g.command_count());
    out.push_str("{\"viewbox\":[");
    for (i, v) in g.viewbox.as_array().into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        num(&mut out, v);
    }
    out.push_str("],\"keywords\":[");
    for (i, k) in g.keywords.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        string(&mut out, k);
    }
    out.push_str("],\"paths\":[");
    for (pi, path) in g.paths.iter().enumerate() {
        if pi > 0 {
            out.push(',');
        }
        out.push('[');
        for (ci, c) in path.commands.iter().enumerate() {
            if ci > 0 {
                out.push(',');
            }
            let _ = write!(out, "[\"{}\"", c.kind.as_char());
            for p in c.points() {
                out.push(',');
                num(&mut out, p.x);
                out.push(',');
                num(&mut out, p.y);
            }
            out.push(']');
        }
        out.push(']');
    }
    out.push_str("]}\n");
    out
}

#[derive(Deserialize)]
struct RawGraphic {
    viewbox: [f64; 4],
    #[serde(default)]
    keywords: Vec<String>,
    paths: Vec<Vec<(String, f64, f64, f64, f64, f64, f64, f64, f64)>>,
}

/// Reads canonical JSON. Values are taken as written; callers that need
/// canonical control points for `M`/`L` should run [`super::simplify`].
pub fn from_json(text: &str) -> Result<Graphic, SvgError> {
    let raw: RawGraphic = serde_json::from_str(text).map_err(|e| SvgError::Json(e.to_string()))?;
    let [x, y, w, h] = raw.viewbox;
    let viewbox = ViewBox::new(x, y, w, h);
    if !viewbox.is_valid() {
        return Err(SvgError::Json(format!("invalid viewbox {:?}", raw.viewbox)));
    }
    let mut paths = Vec::with_capacity(raw.paths.len());
    for p in raw.paths {
        let mut cmds = Vec::with_capacity(p.len());
        for (t, x0, y0, c0x, c0y, c1x, c1y, x1, y1) in p {
            let kind = t
                .chars()
                .next()
                .filter(|_| t.len() == 1)
                .and_then(CommandKind::from_char)
                .ok_or_else(|| SvgError::Json(format!("unknown command type {t:?}")))?;
            cmds.push(BasicCommand {
                kind,
                begin: Point::new(x0, y0),
                ctrl0: Point::new(c0x, c0y),
                ctrl1: Point::new(c1x, c1y),
                end: Point::new(x1, y1),
            });
        }
        if !cmds.is_empty() {
            paths.push(Path::new(cmds));
        }
    }
    if paths.is_empty() {
        return Err(SvgError::EmptyGraphic);
    }
    Ok(Graphic {
        paths,
        viewbox,
        keywords: raw.keywords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svg::gen_synthetic;

    #[test]
    fn six_decimal_layout() {
        let g = Graphic::new(
            vec![Path::new(vec![
                BasicCommand::move_to(Point::new(0.0, 0.0), Point::new(0.0, 0.0)),
                BasicCommand::line_to(Point::new(0.0, 0.0), Point::new(3.0, 0.0)),
            ])],
            ViewBox::new(0.0, 0.0, 4.0, 4.0),
        )
        .with_keywords(vec!["a \"b\"".into()]);
        let s = to_json(&g);
        assert!(s.starts_with("{\"viewbox\":[0.000000,0.000000,4.000000,4.000000],\"keywords\":[\"a \\\"b\\\"\"]"));
        assert!(s.contains("[\"L\",0.000000,0.000000,1.000000,0.000000,2.000000,0.000000,3.000000,0.000000]"));
        assert_eq!(from_json(&s).unwrap(), g);
    }

    #[test]
    fn snapped_synthetic_graphics_round_trip_exactly() {
        for g in gen_synthetic(8, 3) {
            let back = crate::svg::simplify(&from_json(&to_json(&g)).unwrap());
            assert_eq!(back, g);
        }
    }

    #[test]
    fn rejects_unknown_types() {
        let s = r#"{"viewbox":[0,0,1,1],"keywords":[],"paths":[[["Q",0,0,0,0,0,0,0,0]]]}"#;
        assert!(matches!(from_json(s), Err(SvgError::Json(_))));
    }
}
