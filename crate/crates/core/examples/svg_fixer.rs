//! Breaks the chains of a graphic and repairs them with both strategies.

use stroketok::fixer::{check_connectivity, fix_pc, fix_pi};
use stroketok::svg::{gen_synthetic, Point};

fn main() {
    let mut g = gen_synthetic(1, 11).remove(0);
    for (i, c) in g.paths.iter_mut().flat_map(|p| p.commands.iter_mut().skip(1)).enumerate() {
        if i % 2 == 0 {
            c.begin = Point::new(c.begin.x + 3.0, c.begin.y - 2.0);
        }
    }
    let gaps = check_connectivity(&g, 0.0);
    println!("{} commands, {} broken joints", g.command_count(), gaps.len());

    let (pc, r) = fix_pc(&g);
    println!(
        "PC: moved {} begin points, max gap {:.3}, {} commands, {} violations left",
        r.violations_found,
        r.max_gap,
        pc.command_count(),
        check_connectivity(&pc, 0.0).len()
    );
    let (pi, r) = fix_pi(&g);
    println!(
        "PI: inserted {} bridging moves, {} commands, {} violations left",
        r.commands_inserted,
        pi.command_count(),
        check_connectivity(&pi, 0.0).len()
    );
    assert_eq!(fix_pi(&pi).0, pi);
    println!("{}", r.to_json());
}
