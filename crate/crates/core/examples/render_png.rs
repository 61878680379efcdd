//! Rasterizes a few synthetic graphics to PNG and PBM.
//!
//! `cargo run --example render_png -- [out_dir]`

use std::fs;
use std::path::PathBuf;

use stroketok::render::rasterize;
use stroketok::svg::gen_synthetic;

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/render-example".into()));
    fs::create_dir_all(&out)?;
    for (i, g) in gen_synthetic(4, 2).iter().enumerate() {
        let bmp = rasterize(g, 256, 2)?;
        bmp.save(&out.join(format!("synth_{i}.png")))?;
        rasterize(g, 32, 1)?.save(&out.join(format!("synth_{i}.pbm")))?;
        println!("{:?}: {} ink pixels at 256px", g.keywords, bmp.ink_count());
    }
    println!("wrote {}", out.display());
    Ok(())
}
