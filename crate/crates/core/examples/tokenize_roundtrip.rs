//! Tokenizes graphics into residual codebook ids, writes the text token
//! format, reads it back and decodes.

use stroketok::fixer::FixerStrategy;
use stroketok::matrix::{scale, to_matrix, Direction};
use stroketok::metrics::{code_len, compression_ratio, pixel_iou};
use stroketok::svg::gen_synthetic;
use stroketok::vq::{train, CodecConfig, StrokeTokenSeq};

fn main() -> anyhow::Result<()> {
    let graphics = gen_synthetic(16, 3);
    let corpus = graphics
        .iter()
        .map(|g| Ok(scale(&to_matrix(g)?, Direction::ToUnit, g.viewbox)?))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cfg = CodecConfig {
        max_steps: 1500,
        ..CodecConfig::default()
    };
    let (codec, _) = train(&corpus, &cfg)?;

    for g in graphics.iter().take(4) {
        let seq = codec.tokenize(g)?;
        let text = seq.to_text();
        let back = StrokeTokenSeq::from_text(&text)?;
        assert_eq!(back, seq);
        let (decoded, fix) = codec.detokenize(&back, FixerStrategy::Pi)?;
        println!(
            "{:?}: {} commands -> {} tokens (cr {:.2}), IoU {:.3}, {} gaps bridged",
            g.keywords,
            g.command_count(),
            seq.len(),
            compression_ratio(code_len(g), seq.len())?,
            pixel_iou(g, &decoded, 128, 1)?,
            fix.commands_inserted
        );
    }
    println!("\n{}", codec.tokenize(&graphics[0])?.to_text().lines().take(8).collect::<Vec<_>>().join("\n"));
    Ok(())
}
