use rand::Rng;

use super::{LmError, Sampling, StrokeLm};
use crate::vq::{SeqMeta, StrokeTokenSeq};

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub seq: StrokeTokenSeq,
    /// The length limit was hit before `EOS`.
    pub truncated: bool,
}

/// Index drawn from `probs` with one uniform variate.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl StrokeLm {
    /// Ids allowed after `prefix`: entries of level `len mod d`, plus
    /// `EOS` on a latent-step boundary once at least one step exists.
    pub fn allowed_next(&self, prefix_len: usize) -> Vec<usize> {
        let l = self.vocab.layout;
        let level = prefix_len % l.depth;
        let mut ids: Vec<usize> = (0..l.codebook_size).map(|e| l.id(level, e)).collect();
        if level == 0 && prefix_len > 0 {
            ids.push(self.vocab.eos());
        }
        ids
    }

    /// Next-token distribution over [`Self::allowed_next`] after applying
    /// temperature and top-k; temperature 0 puts all mass on the arg-max
    /// (lowest id on ties).
    pub fn next_distribution(&self, prompt: &[usize], prefix: &[usize], s: Sampling) -> Result<Vec<(usize, f64)>, LmError> {
        let logits = self.next_logits(prompt, prefix)?;
        let ids = self.allowed_next(prefix.len());
        if s.temperature == 0.0 {
            let best = ids
                .iter()
                .copied()
                .fold(None, |acc: Option<usize>, i| match acc {
                    Some(b) if logits[b] >= logits[i] => Some(b),
                    _ => Some(i),
                })
                .expect("allowed set is never empty");
            return Ok(vec![(best, 1.0)]);
        }
        let mut scored: Vec<(usize, f64)> = ids.iter().map(|&i| (i, logits[i] / s.temperature)).collect();
        if let Some(k) = s.top_k {
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.truncate(k.max(1));
            scored.sort_by_key(|p| p.0);
        }
        let mx = scored.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scored.iter().map(|p| (p.1 - mx).exp()).sum();
        Ok(scored.into_iter().map(|(i, v)| (i, (v - mx).exp() / z)).collect())
    }

    /// Samples stroke tokens for `keywords` until `EOS` or the length limit.
    pub fn generate<S: AsRef<str>>(&self, keywords: &[S], s: Sampling, rng: &mut impl Rng) -> Result<Generated, LmError> {
        let prompt = self.vocab.build_prompt(keywords)?;
        let d = self.vocab.layout.depth;
        let cap = self.cfg.max_tokens() / d * d;
        let mut tokens = Vec::new();
        let mut truncated = true;
        while tokens.len() < cap {
            let dist = self.next_distribution(&prompt, &tokens, s)?;
            let pick = if dist.len() == 1 {
                dist[0].0
            } else {
                let probs: Vec<f64> = dist.iter().map(|p| p.1).collect();
                dist[sample_index(&probs, rng)].0
            };
            if pick == self.vocab.eos() {
                truncated = false;
                break;
            }
            tokens.push(pick);
        }
        if tokens.is_empty() {
            return Err(LmError::Config(format!("max_len {} leaves no room for a latent step", self.cfg.max_len)));
        }
        let layout = self.vocab.layout;
        let meta = SeqMeta {
            viewbox: self.viewbox,
            command_count: tokens.len() / d * layout.rate(),
            keywords: keywords.iter().map(|k| k.as_ref().to_owned()).collect(),
        };
        Ok(Generated {
            seq: StrokeTokenSeq::new(tokens, layout, meta)?,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    use super::super::model::tests::{perturbed, seq, tiny_cfg};
    use super::super::{train_lm, LmConfig};
    use super::*;

    #[test]
    fn allowed_ids_follow_levels() {
        let m = perturbed();
        assert_eq!(m.allowed_next(0), (0..8).collect::<Vec<_>>());
        assert_eq!(m.allowed_next(1), (8..16).collect::<Vec<_>>());
        let a2 = m.allowed_next(2);
        assert_eq!(a2.len(), 9);
        assert_eq!(*a2.last().unwrap(), m.vocab.eos());
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let m = perturbed();
        let s = Sampling {
            temperature: 0.0,
            top_k: None,
        };
        let a = m.generate(&["circle"], s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = m.generate(&["circle"], s, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert!(a.seq.len() <= m.cfg.max_len);
        assert!(a.seq.tokens.iter().all(|&t| t < m.vocab.stroke_count()));
    }

    #[test]
    fn top_k_limits_support() {
        let m = perturbed();
        let p = m.vocab.build_prompt(&["circle"]).unwrap();
        let d = m
            .next_distribution(
                &p,
                &[1, 9],
                Sampling {
                    temperature: 1.0,
                    top_k: Some(3),
                },
            )
            .unwrap();
        assert_eq!(d.len(), 3);
        assert!((d.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_matches_softmax() {
        let m = perturbed();
        let prompt = m.vocab.build_prompt(&["square"]).unwrap();
        let prefix = [3, 11, 4];
        let dist = m.next_distribution(&prompt, &prefix, Sampling::default()).unwrap();
        let logits = m.next_logits(&prompt, &prefix).unwrap();
        let allowed = m.allowed_next(prefix.len());
        let z: f64 = allowed.iter().map(|&i| logits[i].exp()).sum();
        for (i, p) in &dist {
            assert!((p - logits[*i].exp() / z).abs() < 1e-12);
        }
        let probs: Vec<f64> = dist.iter().map(|x| x.1).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mut counts = vec![0usize; probs.len()];
        for _ in 0..n {
            counts[sample_index(&probs, &mut rng)] += 1;
        }
        let stat: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let df = (probs.len() - 1) as f64;
        let pval = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
        assert!(pval > 0.01, "chi2 {stat} p {pval}");
    }

    #[test]
    fn memorized_pairs_come_back_greedily() {
        let pairs = vec![
            (vec!["circle".to_owned()], seq(vec![1, 9, 3, 12])),
            (vec!["square".to_owned()], seq(vec![5, 13])),
        ];
        let cfg = LmConfig {
            max_steps: 300,
            target_ce: Some(0.01),
            ..tiny_cfg()
        };
        let (lm, _) = train_lm(&pairs, &cfg).unwrap();
        let s = Sampling {
            temperature: 0.0,
            top_k: None,
        };
        for (kw, want) in &pairs {
            let got = lm.generate(kw, s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(got.seq.tokens, want.tokens);
            assert!(!got.truncated);
        }
    }
}
