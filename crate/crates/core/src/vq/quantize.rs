use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::VqError;
use crate::tensor::Tensor;

/// One `(|B|, Dim)` table per residual level plus how often each entry
/// has been chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub levels: Vec<Tensor>,
    pub usage_counts: Vec<Vec<u64>>,
}

impl Codebook {
    pub fn new(levels: Vec<Tensor>) -> Result<Self, VqError> {
        let Some(first) = levels.first() else {
            return Err(VqError::EmptyCodebook);
        };
        if first.shape().len() != 2 || first.rows() < 2 || first.cols() < 1 {
            return Err(VqError::EmptyCodebook);
        }
        if levels.iter().any(|l| l.shape() != first.shape()) {
            return Err(VqError::Config("codebook levels differ in shape".into()));
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(VqError::Config("codebook contains non-finite entries".into()));
        }
        let usage_counts = vec![vec![0; first.rows()]; levels.len()];
        Ok(Self { levels, usage_counts })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn size(&self) -> usize {
        self.levels[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.levels[0].cols()
    }

    pub fn entry(&self, level: usize, index: usize) -> &[f64] {
        let d = self.dim();
        &self.levels[level].data()[index * d..(index + 1) * d]
    }

    /// Quantizes and records usage.
    pub fn quantize(&mut self, z: &Tensor) -> Result<Quantized, VqError> {
        let q = quantize_residual(z, &self.levels)?;
        for (level, entries) in q.entries.iter().enumerate() {
            for &e in entries {
                self.usage_counts[level][e] += 1;
            }
        }
        Ok(q)
    }
}

/// Result of residual quantization of a `(Dim, T)` latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    /// Sum of the chosen entries, `(Dim, T)`.
    pub zq: Tensor,
    /// Time-major ids: `t0l0, t0l1, .., t1l0, ..` with id `level·|B| + entry`.
    pub tokens: Vec<usize>,
    /// Chosen entry per level, indexed `[level][t]`.
    pub entries: Vec<Vec<usize>>,
    /// Residual left after each level, indexed `[level][t]`.
    pub residual_norms: Vec<Vec<f64>>,
}

/// Index of the entry closest to `r` in squared Euclidean distance; ties
/// go to the lowest index.
pub fn nearest(table: &Tensor, r: &[f64]) -> usize {
    let d = r.len();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, e) in table.data().chunks_exact(d).enumerate() {
        let dist: f64 = e.iter().zip(r).map(|(a, b)| (b - a) * (b - a)).sum();
        if dist < best_d {
            best = i;
            best_d = dist;
        }
    }
    best
}

/// Column `t` of a `(rows, T)` tensor.
pub(crate) fn column(z: &Tensor, t: usize) -> Vec<f64> {
    let cols = z.cols();
    (0..z.rows()).map(|r| z.data()[r * cols + t]).collect()
}

pub fn quantize_residual(z: &Tensor, levels: &[Tensor]) -> Result<Quantized, VqError> {
    let Some(first) = levels.first() else {
        return Err(VqError::EmptyCodebook);
    };
    if first.rows() == 0 {
        return Err(VqError::EmptyCodebook);
    }
    let (dim, t_len) = (z.rows(), z.cols());
    if z.shape().len() != 2 || first.cols() != dim {
        return Err(VqError::Shape(format!(
            "latent {:?} vs codebook {:?}",
            z.shape(),
            first.shape()
        )));
    }
    let size = first.rows();
    let mut zq = vec![0.0; dim * t_len];
    let mut tokens = Vec::with_capacity(levels.len() * t_len);
    let mut entries = vec![Vec::with_capacity(t_len); levels.len()];
    let mut residual_norms = vec![Vec::with_capacity(t_len); levels.len()];
    for t in 0..t_len {
        let mut r = column(z, t);
        for (l, table) in levels.iter().enumerate() {
            let e = nearest(table, &r);
            let entry = &table.data()[e * dim..(e + 1) * dim];
            for (k, v) in entry.iter().enumerate() {
                r[k] -= v;
                zq[k * t_len + t] += v;
            }
            tokens.push(l * size + e);
            entries[l].push(e);
            residual_norms[l].push(r.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    Ok(Quantized {
        zq: Tensor::new(vec![dim, t_len], zq).expect("shape"),
        tokens,
        entries,
        residual_norms,
    })
}

/// Lloyd's k-means with `k` centroids. With fewer points than `k`, the
/// surplus centroids are jittered copies of random points.
pub fn kmeans(points: &[Vec<f64>], k: usize, iters: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let dim = points[0].len();
    let mut centroids: Vec<Vec<f64>> = sample(rng, n, k.min(n)).into_iter().map(|i| points[i].clone()).collect();
    let spread = (points.iter().flatten().map(|v| v * v).sum::<f64>() / (n * dim) as f64).sqrt().max(1e-3);
    while centroids.len() < k {
        let base = &points[rng.random_range(0..n)];
        centroids.push(
            base.iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(rng);
                    v + 0.01 * spread * z
                })
                .collect(),
        );
    }
    let mut table = Tensor::new(vec![k, dim], centroids.concat()).expect("shape");
    for _ in 0..iters {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for p in points {
            let c = nearest(&table, p);
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        let data = table.data_mut();
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    data[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }
    table.data().chunks_exact(dim).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(rows: &[[f64; 2]]) -> Tensor {
        Tensor::new(vec![rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn hand_worked_two_level_example() {
        let levels = vec![table(&[[0.0, 0.0], [1.0, 1.0]]), table(&[[0.0, 0.0], [0.2, 0.0]])];
        let z = Tensor::new(vec![2, 1], vec![1.2, 1.0]).unwrap();
        let q = quantize_residual(&z, &levels).unwrap();
        assert_eq!(q.tokens, vec![1, 3]);
        assert!((q.zq.data()[0] - 1.2).abs() < 1e-12 && (q.zq.data()[1] - 1.0).abs() < 1e-12);
        assert!(q.residual_norms[1][0] < 1e-12);
    }

    #[test]
    fn exact_match_has_zero_error() {
        let levels = vec![table(&[[0.5, -0.5], [2.0, 3.0]]), table(&[[1.0, 1.0], [0.0, 0.0]])];
        let z = Tensor::new(vec![2, 1], vec![2.0, 3.0]).unwrap();
        let q = quantize_residual(&z, &levels).unwrap();
        assert_eq!(q.zq.data(), &[2.0, 3.0]);
        assert_eq!(q.tokens, vec![1, 3]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let t = table(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(nearest(&t, &[0.0, 0.0]), 0);
        assert_eq!(nearest(&t, &[-0.5, 0.5]), 1);
    }

    #[test]
    fn single_level_is_plain_vq() {
        let levels = vec![table(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])];
        let z = Tensor::new(vec![2, 3], vec![0.9, 0.1, 0.0, 0.1, 0.8, 0.0]).unwrap();
        let q = quantize_residual(&z, &levels).unwrap();
        assert_eq!(q.tokens, vec![1, 2, 0]);
    }

    #[test]
    fn empty_codebook_rejected() {
        let z = Tensor::zeros(&[2, 1]);
        assert!(matches!(quantize_residual(&z, &[]), Err(VqError::EmptyCodebook)));
        assert!(matches!(Codebook::new(vec![]), Err(VqError::EmptyCodebook)));
    }

    #[test]
    fn kmeans_finds_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = Vec::new();
        for i in 0..40 {
            let off = if i % 2 == 0 { 10.0 } else { -10.0 };
            pts.push(vec![off + 0.01 * i as f64, off]);
        }
        let mut c = kmeans(&pts, 2, 10, &mut rng);
        c.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert!((c[0][0] + 9.8).abs() < 0.5 && (c[1][0] - 10.2).abs() < 0.5);
        assert_eq!(kmeans(&pts[..3], 5, 3, &mut rng).len(), 5);
    }

    #[test]
    fn usage_is_recorded() {
        let mut cb = Codebook::new(vec![table(&[[0.0, 0.0], [1.0, 1.0]])]).unwrap();
        let z = Tensor::new(vec![2, 2], vec![1.0, 0.1, 1.0, 0.0]).unwrap();
        cb.quantize(&z).unwrap();
        assert_eq!(cb.usage_counts[0], vec![1, 1]);
    }
}
