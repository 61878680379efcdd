//! Converts synthetic graphics to stroke matrices, scales them to the unit
//! box and back, and checks that nothing is lost.

use stroketok::matrix::{from_matrix, scale, to_matrix, Direction};
use stroketok::svg::gen_synthetic;

fn main() -> anyhow::Result<()> {
    let mut worst: f64 = 0.0;
    for g in gen_synthetic(100, 7) {
        let m = to_matrix(&g)?;
        let unit = scale(&m, Direction::ToUnit, g.viewbox)?;
        let back = scale(&unit, Direction::FromUnit, g.viewbox)?;
        for (a, b) in m.rows().iter().zip(back.rows()) {
            worst = a.iter().zip(b).fold(worst, |w, (x, y)| w.max((x - y).abs()));
        }
        let mut rebuilt = from_matrix(&m, g.viewbox);
        rebuilt.keywords = g.keywords.clone();
        assert_eq!(rebuilt, g);
    }
    println!("100 graphics round-tripped exactly; max scaling error {worst:.2e}");

    let g = &gen_synthetic(1, 7)[0];
    println!("first rows of {:?}:", g.keywords);
    for r in to_matrix(g)?.rows().iter().take(4) {
        println!("  {r:?}");
    }
    Ok(())
}
