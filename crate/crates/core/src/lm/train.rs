use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{Binder, Example};
use super::{LmConfig, LmError, StrokeLm, Vocab};
use crate::tensor::Graph;
use crate::vq::StrokeTokenSeq;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LmStep {
    pub step: usize,
    pub ce: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LmLog {
    pub steps: Vec<LmStep>,
    pub epochs: usize,
    pub stopped_early: bool,
}

impl LmLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,ce\n");
        for s in &self.steps {
            out.push_str(&format!("{},{}\n", s.step, s.ce));
        }
        out
    }
}

/// Pads a batch to a common stroke length with `PAD` inputs and ignored
/// targets.
pub(crate) fn pad_batch(examples: &mut [Example], pad: usize) {
    let n = examples.iter().map(|e| e.input.len()).max().unwrap_or(0);
    for e in examples {
        e.input.resize(n, pad);
        e.target.resize(n, None);
    }
}

/// Builds the vocabulary from the pairs, then minimizes teacher-forced
/// cross-entropy over stroke positions with Adam. The prompt table stays
/// frozen.
pub fn train_lm(pairs: &[(Vec<String>, StrokeTokenSeq)], cfg: &LmConfig) -> Result<(StrokeLm, LmLog), LmError> {
    let Some((_, first)) = pairs.first() else {
        return Err(LmError::EmptyCorpus);
    };
    let vocab = Vocab::build(first.layout, pairs.iter().flat_map(|(k, _)| k.iter().map(String::as_str)));
    let mut lm = StrokeLm::new(cfg.clone(), vocab, first.meta.viewbox)?;
    let examples: Vec<Example> = pairs.iter().map(|(k, s)| lm.example(k, s)).collect::<Result<_, _>>()?;
    let log = fit(&mut lm, &examples)?;
    Ok((lm, log))
}

pub(crate) fn fit(lm: &mut StrokeLm, examples: &[Example]) -> Result<LmLog, LmError> {
    let cfg = lm.cfg.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6c6d_7472);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = LmLog::default();
    let pad = lm.vocab.pad();
    let mut step = 0;
    'outer: while step < cfg.max_steps {
        order.shuffle(&mut rng);
        let (mut epoch_ce, mut epoch_n) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            pad_batch(&mut batch, pad);
            let mut g = Graph::new();
            let mut b = Binder::new(&lm.store);
            let mut parts = Vec::with_capacity(batch.len());
            for ex in &batch {
                parts.push(lm.example_loss(&mut g, &mut b, ex)?);
            }
            let count: usize = parts.iter().map(|p| p.1).sum();
            let mut total = None;
            for (ce, n) in parts {
                let w = g.scale(ce, n as f64 / count as f64);
                total = Some(match total {
                    None => w,
                    Some(t) => g.add(t, w)?,
                });
            }
            let total = total.expect("non-empty batch");
            let ce = g.value(total).item();
            if !ce.is_finite() {
                return Err(LmError::Diverged { step });
            }
            let grads = g.backward(total)?;
            drop(b);
            lm.store.accumulate(&grads);
            lm.store.optimizer_step(cfg.lr)?;
            log.steps.push(LmStep { step, ce });
            epoch_ce += ce * count as f64;
            epoch_n += count;
            step += 1;
            if step >= cfg.max_steps {
                break 'outer;
            }
        }
        log.epochs += 1;
        if let Some(target) = cfg.target_ce {
            if epoch_n > 0 && epoch_ce / (epoch_n as f64) < target {
                log.stopped_early = true;
                break;
            }
        }
    }
    log::info!(
        "lm training: {} steps, final ce {:.4}",
        log.steps.len(),
        log.steps.last().map_or(f64::NAN, |s| s.ce)
    );
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::super::model::tests::{perturbed, seq, tiny_cfg};
    use super::*;

    #[test]
    fn pad_positions_get_zero_gradient() {
        let m = perturbed();
        let pairs = [
            (vec!["circle".to_owned()], seq(vec![1, 9])),
            (vec!["square".to_owned()], seq(vec![2, 10, 3, 11, 4, 12])),
        ];
        let mut batch: Vec<Example> = pairs.iter().map(|(k, s)| m.example(k, s).unwrap()).collect();
        pad_batch(&mut batch, m.vocab.pad());
        assert_eq!(batch[0].input.len(), 7);
        assert_eq!(&batch[0].input[3..], &[m.vocab.pad(); 4]);
        let mut g = Graph::new();
        let mut b = Binder::new(&m.store);
        let logits = m.forward(&mut g, &mut b, &batch[0].prompt, &batch[0].input).unwrap();
        let mut targets = vec![None; batch[0].prompt.len()];
        targets.extend_from_slice(&batch[0].target);
        let ce = g.cross_entropy(logits, &targets).unwrap();
        let grads = g.backward(ce).unwrap();
        let v = m.vocab.size();
        let gl = grads.get(logits).unwrap();
        let p = batch[0].prompt.len();
        for row in p + 3..p + 7 {
            assert!(gl[row * v..(row + 1) * v].iter().all(|&x| x == 0.0));
        }
        let e = m.cfg.embed_dim;
        let gt = grads.param(m.store.id("stroke.embed").unwrap()).unwrap();
        let pad = m.vocab.pad();
        assert!(gt[pad * e..(pad + 1) * e].iter().all(|&x| x == 0.0));
        assert!(gt[m.vocab.bos() * e..(m.vocab.bos() + 1) * e].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn training_lowers_ce_and_keeps_prompt_table() {
        let pairs = vec![
            (vec!["circle".to_owned()], seq(vec![1, 9, 3, 12])),
            (vec!["square".to_owned()], seq(vec![5, 13])),
        ];
        let cfg = LmConfig {
            max_steps: 60,
            ..tiny_cfg()
        };
        let vocab = Vocab::build(pairs[0].1.layout, ["circle", "square"]);
        let fresh = StrokeLm::new(cfg.clone(), vocab, pairs[0].1.meta.viewbox).unwrap();
        let (lm, log) = train_lm(&pairs, &cfg).unwrap();
        assert_eq!(lm.prompt_table_bytes(), fresh.prompt_table_bytes());
        assert!(log.steps.last().unwrap().ce < 0.5 * log.steps[0].ce);
        assert!(lm.cross_entropy(&pairs).unwrap() < fresh.cross_entropy(&pairs).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let pairs = vec![(vec!["circle".to_owned()], seq(vec![1, 9, 3, 12]))];
        let cfg = LmConfig {
            max_steps: 5,
            ..tiny_cfg()
        };
        let (a, _) = train_lm(&pairs, &cfg).unwrap();
        let (b, _) = train_lm(&pairs, &cfg).unwrap();
        assert_eq!(a.to_checkpoint().to_bytes().unwrap(), b.to_checkpoint().to_bytes().unwrap());
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(train_lm(&[], &tiny_cfg()), Err(LmError::EmptyCorpus)));
    }
}
