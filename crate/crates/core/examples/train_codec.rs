//! Trains the stroke codec on a small synthetic corpus and saves the
//! checkpoint and loss curve.
//!
//! `cargo run --release --example train_codec -- [steps] [out_dir]`

use std::fs;
use std::path::PathBuf;

use stroketok::matrix::{scale, to_matrix, Direction};
use stroketok::svg::gen_synthetic;
use stroketok::vq::{train, CodecConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(Ok(2000), |s| s.parse())?;
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/codec-example".into()));
    fs::create_dir_all(&out)?;

    let corpus = gen_synthetic(32, 1)
        .iter()
        .map(|g| Ok(scale(&to_matrix(g)?, Direction::ToUnit, g.viewbox)?))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cfg = CodecConfig {
        max_steps: steps,
        ..CodecConfig::default()
    };
    let (codec, log) = train(&corpus, &cfg)?;
    for (i, r) in log.smoothed_recon(50).iter().enumerate().step_by((steps / 10).max(1)) {
        println!("step {i:>6}  recon {r:.3e}");
    }
    println!("final reconstruction mse {:.3e}", codec.reconstruction_mse(&corpus)?);
    fs::write(out.join("codec.stkt"), codec.to_checkpoint().to_bytes()?)?;
    fs::write(out.join("codec_log.csv"), log.to_csv())?;
    println!("wrote {}", out.display());
    Ok(())
}
