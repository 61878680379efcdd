use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::quantize::{column, kmeans, nearest};
use super::{prepare, Codec, CodecConfig, Net, Prepared, VqError};
use crate::matrix::StrokeMatrix;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub codebook: f64,
    pub commit: f64,
    pub recon: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub epochs: usize,
    /// Codebook entries reseeded after going unused for an epoch.
    pub reseeded: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    /// Trailing moving average of the reconstruction term.
    pub fn smoothed_recon(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let r: Vec<f64> = self.steps.iter().map(|s| s.recon).collect();
        (0..r.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                r[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,total,codebook,commit,recon\n");
        for s in &self.steps {
            out.push_str(&format!("{},{},{},{},{}\n", s.step, s.total, s.codebook, s.commit, s.recon));
        }
        out
    }
}

/// Minibatch training of a fresh codec on scaled matrices.
///
/// The codebooks are initialized by k-means over the first batch's
/// latents (then over its residuals, level by level). After every epoch,
/// entries nobody picked are reseeded to random residuals from the epoch's
/// last batch.
pub fn train(corpus: &[StrokeMatrix], cfg: &CodecConfig) -> Result<(Codec, TrainLog), VqError> {
    if corpus.is_empty() {
        return Err(VqError::EmptyCorpus);
    }
    let mut codec = Codec::new(cfg.clone())?;
    let prepared: Vec<Prepared> = corpus
        .iter()
        .map(|m| prepare(m, cfg.compression_stages))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = TrainLog::default();
    let depth = cfg.rvq_depth;
    let book_ids: Vec<_> = (0..depth)
        .map(|l| codec.store.id(&format!("codebook.{l}")))
        .collect::<Result<_, _>>()?;
    let mut step = 0;
    'outer: while step < cfg.max_steps {
        order.shuffle(&mut rng);
        let mut usage = vec![vec![0u64; cfg.codebook_size]; depth];
        let mut pool: Vec<Vec<Vec<f64>>> = vec![Vec::new(); depth];
        let mut epoch_recon = 0.0;
        let mut epoch_steps = 0;
        for batch in order.chunks(cfg.batch_size) {
            if step == 0 {
                init_codebooks(&mut codec, batch.iter().map(|&i| &prepared[i]), &mut rng)?;
            }
            let tables: Vec<Tensor> = book_ids.iter().map(|&id| codec.store.get(id).value.clone()).collect();
            let mut g = Graph::new();
            let mut net = Net::new(&codec.store);
            let mut totals = Vec::with_capacity(batch.len());
            let mut sums = [0.0; 3];
            for p in &pool {
                debug_assert!(p.is_empty() || p[0].len() == cfg.code_dim);
            }
            pool.iter_mut().for_each(Vec::clear);
            for &i in batch {
                let (v, q) = codec.loss_graph_prepared(&mut g, &mut net, &prepared[i], &tables)?;
                totals.push(v.total);
                sums[0] += g.value(v.codebook).item();
                sums[1] += g.value(v.commit).item();
                sums[2] += g.value(v.recon).item();
                for (l, entries) in q.entries.iter().enumerate() {
                    for &e in entries {
                        usage[l][e] += 1;
                    }
                }
                let z = g.value(v.z);
                for t in 0..z.cols() {
                    let mut r = column(z, t);
                    for (l, table) in tables.iter().enumerate() {
                        pool[l].push(r.clone());
                        let e = q.entries[l][t];
                        let entry = &table.data()[e * cfg.code_dim..(e + 1) * cfg.code_dim];
                        r.iter_mut().zip(entry).for_each(|(a, b)| *a -= b);
                    }
                }
            }
            let mut total = totals[0];
            for &t in &totals[1..] {
                total = g.add(total, t)?;
            }
            let n = batch.len() as f64;
            let total = g.scale(total, 1.0 / n);
            let total_value = g.value(total).item();
            if !total_value.is_finite() {
                return Err(VqError::Diverged { step, total: total_value });
            }
            let grads = g.backward(total)?;
            drop(net);
            codec.store.accumulate(&grads);
            codec.store.optimizer_step(step_size(cfg, step))?;
            let (cb, cm) = if cfg.conventional_roles {
                (sums[1] / n, sums[0] / n)
            } else {
                (sums[0] / n, sums[1] / n)
            };
            log.steps.push(super::StepLog {
                step,
                total: total_value,
                codebook: cb,
                commit: cm,
                recon: sums[2] / n,
            });
            epoch_recon += sums[2] / n;
            epoch_steps += 1;
            step += 1;
            if step >= cfg.max_steps {
                break 'outer;
            }
        }
        log.epochs += 1;
        for (l, &id) in book_ids.iter().enumerate() {
            if pool[l].is_empty() {
                continue;
            }
            let mut table = codec.store.get(id).value.clone();
            let dim = cfg.code_dim;
            for (e, &count) in usage[l].iter().enumerate() {
                if count == 0 {
                    let src = &pool[l][rng.random_range(0..pool[l].len())];
                    table.data_mut()[e * dim..(e + 1) * dim].copy_from_slice(src);
                    log.reseeded += 1;
                }
            }
            codec.store.set_value(id, table)?;
        }
        if let Some(target) = cfg.target_recon {
            if epoch_steps > 0 && epoch_recon / (epoch_steps as f64) < target {
                log.stopped_early = true;
                break;
            }
        }
    }
    log::info!(
        "codec training: {} steps, {} epochs, final recon {:.3e}",
        log.steps.len(),
        log.epochs,
        log.steps.last().map_or(f64::NAN, |s| s.recon)
    );
    Ok((codec, log))
}

/// Step size for `step` under the configured schedule.
pub fn step_size(cfg: &CodecConfig, step: usize) -> f64 {
    if !cfg.lr_decay || cfg.max_steps <= 1 {
        return cfg.lr;
    }
    let t = step as f64 / (cfg.max_steps - 1) as f64;
    let floor = cfg.lr / 100.0;
    floor + (cfg.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

fn init_codebooks<'a>(codec: &mut Codec, batch: impl Iterator<Item = &'a Prepared>, rng: &mut ChaCha8Rng) -> Result<(), VqError> {
    let cfg = codec.cfg.clone();
    let mut points = Vec::new();
    for p in batch {
        let mut g = Graph::new();
        let mut net = Net::new(&codec.store);
        let x = g.input(p.padded.clone());
        let z = net.encoder(&mut g, &cfg, x)?;
        let z = g.value(z);
        points.extend((0..z.cols()).map(|t| column(z, t)));
    }
    for l in 0..cfg.rvq_depth {
        let centroids = kmeans(&points, cfg.codebook_size, cfg.kmeans_iters, rng);
        let table = Tensor::new(vec![cfg.codebook_size, cfg.code_dim], centroids.concat())?;
        for p in &mut points {
            let e = nearest(&table, p);
            let entry = &table.data()[e * cfg.code_dim..(e + 1) * cfg.code_dim];
            p.iter_mut().zip(entry).for_each(|(a, b)| *a -= b);
        }
        let id = codec.store.id(&format!("codebook.{l}"))?;
        codec.store.set_value(id, table)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{scale, to_matrix, Direction};
    use crate::svg::gen_synthetic;

    fn corpus(n: usize) -> Vec<StrokeMatrix> {
        gen_synthetic(n, 5)
            .iter()
            .map(|g| scale(&to_matrix(g).unwrap(), Direction::ToUnit, g.viewbox).unwrap())
            .collect()
    }

    fn small() -> CodecConfig {
        CodecConfig {
            codebook_size: 16,
            code_dim: 8,
            channels: vec![16],
            batch_size: 2,
            max_steps: 30,
            lr: 3e-3,
            ..CodecConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = corpus(4);
        let (a, la) = train(&data, &small()).unwrap();
        let (b, lb) = train(&data, &small()).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.to_checkpoint().to_bytes().unwrap(), b.to_checkpoint().to_bytes().unwrap());
    }

    #[test]
    fn loss_goes_down() {
        let data = corpus(1);
        let cfg = CodecConfig {
            max_steps: 200,
            batch_size: 1,
            ..small()
        };
        let (_, log) = train(&data, &cfg).unwrap();
        let first = log.steps[0].recon;
        let last = log.smoothed_recon(20).last().copied().unwrap();
        assert!(last < first * 0.5, "{first} -> {last}");
        assert!(log.steps.iter().all(|s| s.total.is_finite()));
    }

    #[test]
    fn conventional_roles_only_relabel() {
        let data = corpus(2);
        let (a, la) = train(&data, &small()).unwrap();
        let cfg = CodecConfig {
            conventional_roles: true,
            ..small()
        };
        let (b, lb) = train(&data, &cfg).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(la.steps[3].codebook, lb.steps[3].commit);
    }

    #[test]
    fn smoothing_window() {
        let log = TrainLog {
            steps: (0..4)
                .map(|i| StepLog {
                    step: i,
                    total: 0.0,
                    codebook: 0.0,
                    commit: 0.0,
                    recon: i as f64,
                })
                .collect(),
            ..TrainLog::default()
        };
        assert_eq!(log.smoothed_recon(2), vec![0.0, 0.5, 1.5, 2.5]);
    }
}
