//! Repair of broken command chains inside paths.
//!
//! Decoded graphics rarely satisfy the chaining rule exactly. Path clipping
//! snaps each begin point onto the previous end point; path interpolation
//! leaves every original command alone and bridges each gap with an extra
//! `MoveTo`.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::svg::{BasicCommand, CommandKind, Graphic, Path, Point, ViewBox};

/// Relative tolerance below which a gap counts as connected when reporting;
/// scaled by the viewbox's larger extent.
pub const DEFAULT_RELATIVE_TOL: f64 = 1e-6;

pub fn default_tolerance(viewbox: ViewBox) -> f64 {
    DEFAULT_RELATIVE_TOL * viewbox.extent()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FixerStrategy {
    None,
    Pc,
    Pi,
}

impl FromStr for FixerStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "pc" => Ok(Self::Pc),
            "pi" => Ok(Self::Pi),
            other => Err(format!("unknown fixer {other:?}, expected pc, pi or none")),
        }
    }
}

impl fmt::Display for FixerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Pc => "pc",
            Self::Pi => "pi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub path: usize,
    /// Index of the later command of the broken pair.
    pub command: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixReport {
    pub strategy: FixerStrategy,
    pub violations_found: usize,
    pub commands_inserted: usize,
    pub max_gap: f64,
}

impl FixReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization") + "\n"
    }
}

/// Every adjacent pair within a path whose gap exceeds `tol`.
pub fn check_connectivity(g: &Graphic, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (pi, path) in g.paths.iter().enumerate() {
        for (j, w) in path.commands.windows(2).enumerate() {
            let gap = w[0].end.distance(w[1].begin);
            if gap > tol {
                out.push(Violation {
                    path: pi,
                    command: j + 1,
                    gap,
                });
            }
        }
    }
    out
}

fn max_gap(v: &[Violation]) -> f64 {
    v.iter().map(|v| v.gap).fold(0.0, f64::max)
}

/// Path clipping: `begin(j+1) := end(j)` for every adjacent pair.
pub fn fix_pc(g: &Graphic) -> (Graphic, FixReport) {
    let violations = check_connectivity(g, 0.0);
    let mut out = g.clone();
    for path in &mut out.paths {
        for j in 1..path.commands.len() {
            path.commands[j].begin = path.commands[j - 1].end;
        }
    }
    let report = FixReport {
        strategy: FixerStrategy::Pc,
        violations_found: violations.len(),
        commands_inserted: 0,
        max_gap: max_gap(&violations),
    };
    (out, report)
}

/// The bridging command inserted by path interpolation. Its control slots
/// are literal zeros rather than the usual interpolated fill.
pub fn bridge(from: Point, to: Point) -> BasicCommand {
    BasicCommand {
        kind: CommandKind::MoveTo,
        begin: from,
        ctrl0: Point::new(0.0, 0.0),
        ctrl1: Point::new(0.0, 0.0),
        end: to,
    }
}

/// Path interpolation: a `MoveTo` from `end(j)` to `begin(j+1)` is inserted
/// before every disconnected command.
pub fn fix_pi(g: &Graphic) -> (Graphic, FixReport) {
    let violations = check_connectivity(g, 0.0);
    let mut paths = Vec::with_capacity(g.paths.len());
    for path in &g.paths {
        let mut cmds = Vec::with_capacity(path.len() + 1);
        for (j, c) in path.commands.iter().enumerate() {
            if j > 0 {
                let prev = path.commands[j - 1].end;
                if prev.distance(c.begin) > 0.0 {
                    cmds.push(bridge(prev, c.begin));
                }
            }
            cmds.push(*c);
        }
        paths.push(Path::new(cmds));
    }
    let out = Graphic {
        paths,
        viewbox: g.viewbox,
        keywords: g.keywords.clone(),
    };
    let report = FixReport {
        strategy: FixerStrategy::Pi,
        violations_found: violations.len(),
        commands_inserted: violations.len(),
        max_gap: max_gap(&violations),
    };
    (out, report)
}

/// Applies `strategy`; `None` returns the graphic untouched with a report
/// of what was found.
pub fn apply(g: &Graphic, strategy: FixerStrategy) -> (Graphic, FixReport) {
    match strategy {
        FixerStrategy::Pc => fix_pc(g),
        FixerStrategy::Pi => fix_pi(g),
        FixerStrategy::None => {
            let v = check_connectivity(g, 0.0);
            let report = FixReport {
                strategy,
                violations_found: v.len(),
                commands_inserted: 0,
                max_gap: max_gap(&v),
            };
            (g.clone(), report)
        }
    }
}
