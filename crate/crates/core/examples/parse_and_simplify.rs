//! Parses an SVG with shapes, arcs and relative commands, lowers it to
//! absolute `M`/`L`/`C` commands and runs the corpus filter.

use stroketok::svg::{self, json, PreprocessConfig};

const DOC: &str = r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 100 100" data-keywords="sun, weather icon">
  <circle cx="50" cy="50" r="20"/>
  <path d="M50 10 v10 M50 80 v10 M10 50 h10 M80 50 h10"/>
  <path d="M25 25 q5 -5 10 0 t10 0 A8 8 0 0 1 60 30"/>
  <rect x="2" y="2" width="96" height="96" fill="white"/>
</svg>"#;

fn main() -> anyhow::Result<()> {
    let report = svg::parse_svg_report(DOC, 0.25)?;
    for u in &report.unsupported {
        println!("skipped: {u:?}");
    }
    let g = svg::simplify(&report.graphic);
    println!("{} paths, {} commands, keywords {:?}", g.paths.len(), g.command_count(), g.keywords);
    for c in g.commands().take(6) {
        println!("  {} {:?} -> {:?}", c.kind.as_char(), c.begin, c.end);
    }
    match svg::preprocess(&g, &PreprocessConfig::default()) {
        Ok(kept) => println!("kept after preprocessing:\n{}", json::to_json(&kept)),
        Err(why) => println!("rejected: {why}"),
    }
    Ok(())
}
