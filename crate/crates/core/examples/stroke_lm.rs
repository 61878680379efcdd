//! Trains the keyword-conditioned token model on tokenized synthetic
//! graphics, then samples new token sequences and decodes them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stroketok::fixer::FixerStrategy;
use stroketok::lm::{train_lm, LmConfig, Sampling};
use stroketok::matrix::{scale, to_matrix, Direction};
use stroketok::svg::{gen_synthetic, to_svg};
use stroketok::vq::{train, CodecConfig};

fn main() -> anyhow::Result<()> {
    let graphics = gen_synthetic(24, 5);
    let corpus = graphics
        .iter()
        .map(|g| Ok(scale(&to_matrix(g)?, Direction::ToUnit, g.viewbox)?))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (codec, _) = train(&corpus, &CodecConfig { max_steps: 1000, ..CodecConfig::default() })?;

    let pairs = graphics
        .iter()
        .map(|g| Ok((g.keywords.clone(), codec.tokenize(g)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cfg = LmConfig {
        embed_dim: 64,
        max_len: 256,
        lr: 3e-3,
        max_steps: 400,
        ..LmConfig::default()
    };
    let (lm, log) = train_lm(&pairs, &cfg)?;
    println!("trained {} steps, corpus ce {:.4}", log.steps.len(), lm.cross_entropy(&pairs)?);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (keywords, temperature) in [(&graphics[0].keywords, 0.0), (&graphics[1].keywords, 0.8)] {
        let s = Sampling { temperature, top_k: Some(20) };
        let out = lm.generate(keywords, s, &mut rng)?;
        let (g, _) = codec.detokenize(&out.seq, FixerStrategy::Pi)?;
        println!("{keywords:?} at T={temperature}: {} tokens, {} commands", out.seq.len(), g.command_count());
        if temperature == 0.0 {
            println!("{}", to_svg(&g));
        }
    }
    Ok(())
}
