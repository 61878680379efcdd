//! Scores reconstructions against their sources with every metric and
//! prints the JSON report.

use stroketok::cli::evaluate_pair;
use stroketok::config::PipelineConfig;
use stroketok::fixer::FixerStrategy;
use stroketok::matrix::{scale, to_matrix, Direction};
use stroketok::metrics::EvalReport;
use stroketok::svg::gen_synthetic;
use stroketok::vq::{train, CodecConfig};

fn main() -> anyhow::Result<()> {
    let graphics = gen_synthetic(8, 9);
    let corpus = graphics
        .iter()
        .map(|g| Ok(scale(&to_matrix(g)?, Direction::ToUnit, g.viewbox)?))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (codec, _) = train(&corpus, &CodecConfig { max_steps: 800, ..CodecConfig::default() })?;
    let cfg = PipelineConfig::default();

    let mut records = Vec::new();
    for (i, g) in graphics.iter().enumerate() {
        let (decoded, _) = codec.detokenize(&codec.tokenize(g)?, FixerStrategy::Pi)?;
        records.push(evaluate_pair(&format!("synth_{i}"), g, &decoded, &codec, &cfg, true)?);
    }
    println!("{}", EvalReport::new(records).to_json());
    Ok(())
}
