//! Convolutional stroke codec with a residual vector quantizer.
//!
//! A scaled stroke matrix `(L, 9)` is read as a 9-channel signal of length
//! `L`. Each encoder stage halves the length (stride-2 convolution, residual
//! block, 1×1 projection); the decoder mirrors it with transposed
//! convolutions. Latent columns are quantized level by level and emitted as
//! time-major token ids.

mod quantize;
mod tokens;
mod train;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fixer::{self, FixReport, FixerStrategy};
use crate::matrix::{self, Direction, MatrixError, StrokeMatrix, ROW_WIDTH};
use crate::svg::Graphic;
use crate::tensor::{Checkpoint, Graph, ParamId, ParameterStore, Tensor, TensorError, Var};

pub use quantize::{kmeans, nearest, quantize_residual, Codebook, Quantized};
pub use tokens::{SeqMeta, StrokeTokenSeq, TokenLayout, FORMAT_VERSION as TOKEN_FORMAT_VERSION};
pub use train::{step_size, train, StepLog, TrainLog};

const DOWN_K: usize = 4;
const RES_K: usize = 3;

#[derive(Debug, Error)]
pub enum VqError {
    #[error("codebook is empty")]
    EmptyCodebook,
    #[error("token id {id} outside [0, {limit})")]
    BadTokenId { id: usize, limit: usize },
    #[error("token {id} at position {position} belongs to the wrong level")]
    TokenLevel { position: usize, id: usize },
    #[error("token layout {found:?} does not match codec {expected:?}")]
    LayoutMismatch { expected: TokenLayout, found: TokenLayout },
    #[error("training diverged at step {step}: total loss {total}")]
    Diverged { step: usize, total: f64 },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad codec config: {0}")]
    Config(String),
    #[error("bad token file: {0}")]
    Format(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    /// Number of stride-2 stages; the compression rate is `2^stages`.
    pub compression_stages: usize,
    /// Residual levels `d`.
    pub rvq_depth: usize,
    /// Entries per level `|B|`.
    pub codebook_size: usize,
    pub code_dim: usize,
    /// Hidden width per stage; the last value repeats for deeper stacks.
    pub channels: Vec<usize>,
    pub alpha: f64,
    pub lr: f64,
    /// Cosine-anneal the step size from `lr` to `lr / 100` over `max_steps`.
    pub lr_decay: bool,
    pub seed: u64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Stop once an epoch's mean reconstruction loss falls below this.
    pub target_recon: Option<f64>,
    pub kmeans_iters: usize,
    /// Report the two quantizer terms under their conventional names. The
    /// gradients are unchanged because both terms share the weight `alpha`.
    pub conventional_roles: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            compression_stages: 1,
            rvq_depth: 2,
            codebook_size: 256,
            code_dim: 64,
            channels: vec![64],
            alpha: 1.0,
            lr: 1e-3,
            lr_decay: true,
            seed: 0,
            batch_size: 8,
            max_steps: 2000,
            target_recon: None,
            kmeans_iters: 10,
            conventional_roles: false,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<(), VqError> {
        let bad = |m: &str| Err(VqError::Config(m.to_owned()));
        if self.compression_stages == 0 {
            return bad("compression_stages must be at least 1");
        }
        if self.rvq_depth == 0 {
            return bad("rvq_depth must be at least 1");
        }
        if self.codebook_size < 2 {
            return bad("codebook_size must be at least 2");
        }
        if self.code_dim == 0 || self.channels.is_empty() || self.channels.contains(&0) {
            return bad("code_dim and channels must be positive");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }

    pub fn layout(&self) -> TokenLayout {
        TokenLayout {
            depth: self.rvq_depth,
            codebook_size: self.codebook_size,
            stages: self.compression_stages,
        }
    }

    fn hidden(&self, stage: usize) -> usize {
        self.channels[stage.min(self.channels.len() - 1)]
    }

    /// `(name, shape)` of every parameter, in creation order.
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let s = self.compression_stages;
        let mut out = Vec::new();
        let conv = |out: &mut Vec<(String, Vec<usize>)>, name: String, cout: usize, cin: usize, k: usize| {
            out.push((format!("{name}.w"), vec![cout, cin, k]));
            out.push((format!("{name}.b"), vec![cout]));
        };
        let mut cin = ROW_WIDTH;
        for st in 0..s {
            let h = self.hidden(st);
            let cout = if st + 1 == s { self.code_dim } else { h };
            conv(&mut out, format!("enc.{st}.down"), h, cin, DOWN_K);
            conv(&mut out, format!("enc.{st}.res1"), h, h, RES_K);
            conv(&mut out, format!("enc.{st}.res2"), h, h, RES_K);
            conv(&mut out, format!("enc.{st}.proj"), cout, h, 1);
            cin = cout;
        }
        for st in 0..s {
            let h = self.hidden(s - 1 - st);
            let cout = if st + 1 == s { ROW_WIDTH } else { h };
            conv(&mut out, format!("dec.{st}.proj"), h, cin, 1);
            conv(&mut out, format!("dec.{st}.res1"), h, h, RES_K);
            conv(&mut out, format!("dec.{st}.res2"), h, h, RES_K);
            // Transposed kernels are stored (C_in, C_out, K).
            out.push((format!("dec.{st}.up.w"), vec![h, cout, DOWN_K]));
            out.push((format!("dec.{st}.up.b"), vec![cout]));
            cin = cout;
        }
        for l in 0..self.rvq_depth {
            out.push((format!("codebook.{l}"), vec![self.codebook_size, self.code_dim]));
        }
        out
    }

    fn to_meta(&self, ck: Checkpoint) -> Checkpoint {
        let channels: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        ck.with_meta("kind", "vq-stroke")
            .with_meta("compression_stages", self.compression_stages)
            .with_meta("rvq_depth", self.rvq_depth)
            .with_meta("codebook_size", self.codebook_size)
            .with_meta("code_dim", self.code_dim)
            .with_meta("channels", channels.join(","))
            .with_meta("alpha", self.alpha)
            .with_meta("lr", self.lr)
            .with_meta("lr_decay", self.lr_decay)
            .with_meta("seed", self.seed)
            .with_meta("batch_size", self.batch_size)
            .with_meta("max_steps", self.max_steps)
            .with_meta("kmeans_iters", self.kmeans_iters)
            .with_meta("conventional_roles", self.conventional_roles)
    }

    fn from_meta(ck: &Checkpoint) -> Result<Self, VqError> {
        if ck.meta.get("kind").map(String::as_str) != Some("vq-stroke") {
            return Err(VqError::Config("checkpoint is not a codec".into()));
        }
        let channels = ck
            .meta
            .get("channels")
            .ok_or_else(|| VqError::Config("missing channels".into()))?
            .split(',')
            .map(|c| c.parse().map_err(|_| VqError::Config(format!("bad channel {c:?}"))))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            compression_stages: ck.meta_parse("compression_stages")?,
            rvq_depth: ck.meta_parse("rvq_depth")?,
            codebook_size: ck.meta_parse("codebook_size")?,
            code_dim: ck.meta_parse("code_dim")?,
            channels,
            alpha: ck.meta_parse("alpha")?,
            lr: ck.meta_parse("lr")?,
            lr_decay: ck.meta_parse("lr_decay")?,
            seed: ck.meta_parse("seed")?,
            batch_size: ck.meta_parse("batch_size")?,
            max_steps: ck.meta_parse("max_steps")?,
            target_recon: None,
            kmeans_iters: ck.meta_parse("kmeans_iters")?,
            conventional_roles: ck.meta_parse("conventional_roles")?,
        })
    }
}

/// Lazily binds store parameters into a graph.
struct Net<'a> {
    store: &'a ParameterStore,
    vars: HashMap<String, Var>,
}

impl<'a> Net<'a> {
    fn new(store: &'a ParameterStore) -> Self {
        Self {
            store,
            vars: HashMap::new(),
        }
    }

    fn get(&mut self, g: &mut Graph, name: &str) -> Result<Var, TensorError> {
        if let Some(v) = self.vars.get(name) {
            return Ok(*v);
        }
        let v = g.param_named(self.store, name)?;
        self.vars.insert(name.to_owned(), v);
        Ok(v)
    }

    fn conv(&mut self, g: &mut Graph, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let w = self.get(g, &format!("{name}.w"))?;
        let b = self.get(g, &format!("{name}.b"))?;
        let y = g.conv1d(x, w, stride, pad)?;
        g.add_channel_bias(y, b)
    }

    fn conv_t(&mut self, g: &mut Graph, name: &str, x: Var) -> Result<Var, TensorError> {
        let w = self.get(g, &format!("{name}.w"))?;
        let b = self.get(g, &format!("{name}.b"))?;
        let y = g.conv_transpose1d(x, w, 2, 1)?;
        g.add_channel_bias(y, b)
    }

    /// `x + conv(relu(conv(relu(x))))`.
    fn res_block(&mut self, g: &mut Graph, prefix: &str, x: Var) -> Result<Var, TensorError> {
        let a = g.relu(x);
        let a = self.conv(g, &format!("{prefix}.res1"), a, 1, 1)?;
        let a = g.relu(a);
        let a = self.conv(g, &format!("{prefix}.res2"), a, 1, 1)?;
        g.add(x, a)
    }

    fn encoder(&mut self, g: &mut Graph, cfg: &CodecConfig, x: Var) -> Result<Var, TensorError> {
        let mut h = x;
        for st in 0..cfg.compression_stages {
            let p = format!("enc.{st}");
            h = self.conv(g, &format!("{p}.down"), h, 2, 1)?;
            h = self.res_block(g, &p, h)?;
            h = self.conv(g, &format!("{p}.proj"), h, 1, 0)?;
        }
        Ok(h)
    }

    fn decoder(&mut self, g: &mut Graph, cfg: &CodecConfig, z: Var) -> Result<Var, TensorError> {
        let mut h = z;
        for st in 0..cfg.compression_stages {
            let p = format!("dec.{st}");
            h = self.conv(g, &format!("{p}.proj"), h, 1, 0)?;
            h = self.res_block(g, &p, h)?;
            h = self.conv_t(g, &format!("{p}.up"), h)?;
        }
        Ok(h)
    }

    /// Quantized latent as a graph value: per-level embedding lookups,
    /// summed and transposed to `(Dim, T)`.
    fn lookup(&mut self, g: &mut Graph, entries: &[Vec<usize>]) -> Result<Var, TensorError> {
        let mut acc: Option<Var> = None;
        for (l, e) in entries.iter().enumerate() {
            let table = self.get(g, &format!("codebook.{l}"))?;
            let rows = g.embedding(table, e)?;
            acc = Some(match acc {
                Some(a) => g.add(a, rows)?,
                None => rows,
            });
        }
        g.transpose(acc.expect("at least one level"))
    }
}

/// Graph handles for the loss of one matrix.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    /// `mse(Z, sg[Zq])`, reaching the encoder only.
    pub codebook: Var,
    /// `mse(sg[Z], Zq)`, reaching the codebook only.
    pub commit: Var,
    pub recon: Var,
    pub z: Var,
    pub zq: Var,
    pub decoded: Var,
}

/// Scalar values of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub codebook: f64,
    pub commit: f64,
    pub recon: f64,
}

/// Evaluates the codec objective on plain tensors: `m`, `m_rec` any equal
/// shapes, `z`, `zq` equal shapes.
pub fn loss(m: &Tensor, m_rec: &Tensor, z: &Tensor, zq: &Tensor, alpha: f64) -> Result<LossTerms, VqError> {
    let mut g = Graph::new();
    let (vm, vr, vz, vq) = (g.input(m.clone()), g.input(m_rec.clone()), g.input(z.clone()), g.input(zq.clone()));
    let sq = g.stop_grad(vq);
    let sz = g.stop_grad(vz);
    let cb = g.mse(vz, sq)?;
    let cm = g.mse(sz, vq)?;
    let rc = g.mse(vr, vm)?;
    let q = g.add(cb, cm)?;
    let q = g.scale(q, alpha);
    let total = g.add(q, rc)?;
    Ok(LossTerms {
        total: g.value(total).item(),
        codebook: g.value(cb).item(),
        commit: g.value(cm).item(),
        recon: g.value(rc).item(),
    })
}

/// A matrix prepared for the network: `(9, L_padded)` channels-first with
/// pad rows repeating the last row.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub padded: Tensor,
    pub original: Tensor,
    pub len: usize,
    pub pad: usize,
}

pub fn prepare(m: &StrokeMatrix, stages: usize) -> Result<Prepared, VqError> {
    if !m.is_scaled() {
        return Err(MatrixError::WrongSpace {
            expected: "scaled",
            actual: "unscaled",
        }
        .into());
    }
    if m.is_empty() {
        return Err(VqError::Shape("empty matrix".into()));
    }
    let len = m.len();
    let rate = 1usize << stages;
    let padded_len = len.div_ceil(rate) * rate;
    let rows = m.rows();
    let channels_first = |n: usize| {
        Tensor::from_fn(&[ROW_WIDTH, n], |i| {
            let (c, t) = (i / n, i % n);
            rows[t.min(len - 1)][c]
        })
    };
    Ok(Prepared {
        padded: channels_first(padded_len),
        original: channels_first(len),
        len,
        pad: padded_len - len,
    })
}

/// Latent of one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// `(code_dim, T_latent)`.
    pub z: Tensor,
    pub len: usize,
    pub pad: usize,
}

/// Trained (or freshly initialized) codec parameters plus their config.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    pub cfg: CodecConfig,
    pub store: ParameterStore,
}

impl Codec {
    /// Random initialization from `cfg.seed`.
    pub fn new(cfg: CodecConfig) -> Result<Self, VqError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParameterStore::new();
        for (name, shape) in cfg.param_shapes() {
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else if name.starts_with("codebook") {
                Tensor::randn(&shape, 1.0 / (shape[1] as f64).sqrt(), &mut rng)
            } else {
                let fan_in = shape[1] * shape[2];
                Tensor::randn(&shape, 1.0 / (fan_in as f64).sqrt(), &mut rng)
            };
            store.add(&name, t)?;
        }
        Ok(Self { cfg, store })
    }

    pub fn layout(&self) -> TokenLayout {
        self.cfg.layout()
    }

    fn level_tables(&self) -> Vec<Tensor> {
        (0..self.cfg.rvq_depth)
            .map(|l| self.store.value(&format!("codebook.{l}")).expect("codebook param").clone())
            .collect()
    }

    pub fn codebook(&self) -> Codebook {
        Codebook::new(self.level_tables()).expect("valid codebook")
    }

    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        self.ids_with_prefix("enc.")
    }

    pub fn decoder_param_ids(&self) -> Vec<ParamId> {
        self.ids_with_prefix("dec.")
    }

    pub fn codebook_param_ids(&self) -> Vec<ParamId> {
        self.ids_with_prefix("codebook.")
    }

    fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn encode(&self, m: &StrokeMatrix) -> Result<Encoded, VqError> {
        let p = prepare(m, self.cfg.compression_stages)?;
        let mut g = Graph::new();
        let mut net = Net::new(&self.store);
        let x = g.input(p.padded);
        let z = net.encoder(&mut g, &self.cfg, x)?;
        Ok(Encoded {
            z: g.value(z).clone(),
            len: p.len,
            pad: p.pad,
        })
    }

    pub fn quantize(&self, z: &Tensor) -> Result<Quantized, VqError> {
        quantize_residual(z, &self.level_tables())
    }

    /// Unclamped decoder output `(9, 2^stages · T)`.
    pub fn decode_raw(&self, zq: &Tensor) -> Result<Tensor, VqError> {
        if zq.shape().len() != 2 || zq.rows() != self.cfg.code_dim || zq.cols() == 0 {
            return Err(VqError::Shape(format!("latent {:?} for code_dim {}", zq.shape(), self.cfg.code_dim)));
        }
        let mut g = Graph::new();
        let mut net = Net::new(&self.store);
        let z = g.input(zq.clone());
        let y = net.decoder(&mut g, &self.cfg, z)?;
        Ok(g.value(y).clone())
    }

    /// Scaled matrix of the first `len` decoded rows, clamped to `[-1, 1]`.
    pub fn decode(&self, zq: &Tensor, len: usize) -> Result<StrokeMatrix, VqError> {
        let y = self.decode_raw(zq)?;
        let n = y.cols();
        if len > n {
            return Err(VqError::Shape(format!("{len} rows requested from {n} decoded")));
        }
        let rows = (0..len)
            .map(|t| {
                let mut r = [0.0; ROW_WIDTH];
                for (c, v) in r.iter_mut().enumerate() {
                    *v = y.data()[c * n + t].clamp(-1.0, 1.0);
                }
                r
            })
            .collect();
        Ok(StrokeMatrix::new(rows, true))
    }

    /// Encode, quantize and decode.
    pub fn reconstruct(&self, m: &StrokeMatrix) -> Result<StrokeMatrix, VqError> {
        let e = self.encode(m)?;
        let q = self.quantize(&e.z)?;
        self.decode(&q.zq, e.len)
    }

    /// Reconstruction MSE on the unclamped decoder output, averaged over
    /// matrices.
    pub fn reconstruction_mse(&self, corpus: &[StrokeMatrix]) -> Result<f64, VqError> {
        if corpus.is_empty() {
            return Err(VqError::EmptyCorpus);
        }
        let mut total = 0.0;
        for m in corpus {
            let p = prepare(m, self.cfg.compression_stages)?;
            let e = self.encode(m)?;
            let q = self.quantize(&e.z)?;
            let y = self.decode_raw(&q.zq)?;
            let n = y.cols();
            let mut s = 0.0;
            for c in 0..ROW_WIDTH {
                for t in 0..p.len {
                    let d = y.data()[c * n + t] - p.original.data()[c * p.len + t];
                    s += d * d;
                }
            }
            total += s / (ROW_WIDTH * p.len) as f64;
        }
        Ok(total / corpus.len() as f64)
    }

    /// Records the full objective for one scaled matrix on `g`.
    pub fn loss_graph(&self, g: &mut Graph, m: &StrokeMatrix) -> Result<LossVars, VqError> {
        let p = prepare(m, self.cfg.compression_stages)?;
        self.loss_graph_prepared(g, &mut Net::new(&self.store), &p, &self.level_tables())
            .map(|(vars, _)| vars)
    }

    fn loss_graph_prepared(&self, g: &mut Graph, net: &mut Net<'_>, p: &Prepared, tables: &[Tensor]) -> Result<(LossVars, Quantized), VqError> {
        let x = g.input(p.padded.clone());
        let target = g.input(p.original.clone());
        let z = net.encoder(g, &self.cfg, x)?;
        let q = quantize_residual(g.value(z), tables)?;
        let zq = net.lookup(g, &q.entries)?;
        let zq_sg = g.stop_grad(zq);
        let z_sg = g.stop_grad(z);
        let codebook = g.mse(z, zq_sg)?;
        let commit = g.mse(z_sg, zq)?;
        let dec_in = g.straight_through(z, zq)?;
        let decoded = net.decoder(g, &self.cfg, dec_in)?;
        let kept = g.slice_cols(decoded, 0, p.len)?;
        let recon = g.mse(kept, target)?;
        let quant = g.add(codebook, commit)?;
        let quant = g.scale(quant, self.cfg.alpha);
        let total = g.add(quant, recon)?;
        Ok((
            LossVars {
                total,
                codebook,
                commit,
                recon,
                z,
                zq,
                decoded,
            },
            q,
        ))
    }

    pub fn tokenize(&self, g: &Graphic) -> Result<StrokeTokenSeq, VqError> {
        let m = matrix::to_matrix(g)?;
        let m = matrix::scale(&m, Direction::ToUnit, g.viewbox)?;
        let e = self.encode(&m)?;
        let q = self.quantize(&e.z)?;
        StrokeTokenSeq::new(
            q.tokens,
            self.layout(),
            SeqMeta {
                viewbox: g.viewbox,
                command_count: e.len,
                keywords: g.keywords.clone(),
            },
        )
    }

    /// Sums the codebook entries named by time-major `tokens` into a
    /// `(Dim, T)` latent.
    pub fn lookup(&self, tokens: &[usize]) -> Result<Tensor, VqError> {
        let layout = self.layout();
        let d = layout.depth;
        if tokens.is_empty() || !tokens.len().is_multiple_of(d) {
            return Err(VqError::Shape(format!("{} tokens for depth {d}", tokens.len())));
        }
        let t_len = tokens.len() / d;
        let dim = self.cfg.code_dim;
        let tables = self.level_tables();
        let mut zq = vec![0.0; dim * t_len];
        for (p, &id) in tokens.iter().enumerate() {
            let (level, entry) = layout.split(id)?;
            if level != p % d {
                return Err(VqError::TokenLevel { position: p, id });
            }
            let t = p / d;
            for k in 0..dim {
                zq[k * t_len + t] += tables[level].data()[entry * dim + k];
            }
        }
        Ok(Tensor::new(vec![dim, t_len], zq)?)
    }

    /// Tokens back to a graphic, followed by the requested chain repair.
    pub fn detokenize(&self, seq: &StrokeTokenSeq, strategy: FixerStrategy) -> Result<(Graphic, FixReport), VqError> {
        if seq.layout != self.layout() {
            return Err(VqError::LayoutMismatch {
                expected: self.layout(),
                found: seq.layout,
            });
        }
        let zq = self.lookup(&seq.tokens)?;
        let len = seq.meta.command_count.min(zq.cols() * self.layout().rate());
        let m = self.decode(&zq, len)?;
        let m = matrix::scale(&m, Direction::FromUnit, seq.meta.viewbox)?;
        let g = matrix::from_matrix(&m, seq.meta.viewbox).with_keywords(seq.meta.keywords.clone());
        Ok(fixer::apply(&g, strategy))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.cfg.to_meta(Checkpoint::new(self.store.clone()))
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, VqError> {
        let cfg = CodecConfig::from_meta(&ck)?;
        cfg.validate()?;
        for (name, shape) in cfg.param_shapes() {
            let v = ck.store.value(&name)?;
            if v.shape() != shape.as_slice() {
                return Err(VqError::Config(format!("{name} has shape {:?}, expected {shape:?}", v.shape())));
            }
        }
        Ok(Self { cfg, store: ck.store })
    }
}
