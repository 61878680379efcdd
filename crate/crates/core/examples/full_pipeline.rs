//! Drives the command-line pipeline end to end in a scratch directory:
//! synthesize, preprocess, train both models, round-trip tokens, generate,
//! evaluate and render.
//!
//! `cargo run --release --example full_pipeline -- [work_dir]`

use std::fs;
use std::path::PathBuf;

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/pipeline-example".into()));
    fs::create_dir_all(&dir)?;
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    fs::write(
        p("run.cfg"),
        "seed = 3\ncodec.max_steps = 2000\nlm.max_steps = 300\nlm.embed_dim = 64\nlm.max_len = 256\n",
    )?;
    let cfg = p("run.cfg");
    let steps: &[&[&str]] = &[
        &["gen-synth", "--n", "64", "--seed", "1", "--out", &p("raw")],
        &["preprocess", "--in", &p("raw"), "--out", &p("corpus")],
        &["train-vq", "--config", &cfg, "--corpus", &p("corpus"), "--out", &p("vq.stkt"), "--log", &p("vq.csv")],
        &["tokenize", "--ckpt", &p("vq.stkt"), "--in", &p("corpus"), "--out", &p("tokens")],
        &["detokenize", "--ckpt", &p("vq.stkt"), "--in", &p("tokens"), "--out", &p("recon")],
        &["train-lm", "--config", &cfg, "--tokens", &p("tokens"), "--out", &p("lm.stkt"), "--log", &p("lm.csv")],
        &[
            "generate", "--config", &cfg, "--lm", &p("lm.stkt"), "--vq", &p("vq.stkt"), "--keywords", "circle, round",
            "--out", &p("generated.svg"),
        ],
        &["evaluate", "--golden", &p("corpus"), "--candidate", &p("recon"), "--ckpt", &p("vq.stkt"), "--report", &p("report.json")],
        &["render", "--in", &p("generated.svg"), "--out", &p("generated.png")],
    ];
    for args in steps {
        println!("$ stroketok {}", args.join(" "));
        let code = stroketok::cli::run(std::iter::once("stroketok").chain(args.iter().copied()));
        anyhow::ensure!(code == 0, "{} exited with {code}", args[0]);
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}
