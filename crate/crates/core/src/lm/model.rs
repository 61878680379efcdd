use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LmConfig, LmError, Sampling, Vocab};
use crate::svg::ViewBox;
use crate::tensor::{Checkpoint, Graph, ParameterStore, Tensor, Var};
use crate::vq::{StrokeTokenSeq, TokenLayout};

pub(crate) const PROMPT_TABLE: &str = "prompt.embed";
const KIND: &str = "stroke-lm";

#[derive(Debug, Clone, PartialEq)]
pub struct StrokeLm {
    pub cfg: LmConfig,
    pub vocab: Vocab,
    pub store: ParameterStore,
    /// Canvas attached to generated sequences.
    pub viewbox: ViewBox,
}

pub(crate) struct Binder<'a> {
    store: &'a ParameterStore,
    vars: HashMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub(crate) fn new(store: &'a ParameterStore) -> Self {
        Self {
            store,
            vars: HashMap::new(),
        }
    }

    fn get(&mut self, g: &mut Graph, name: &str) -> Result<Var, LmError> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let v = g.param_named(self.store, name)?;
        self.vars.insert(name.to_owned(), v);
        Ok(v)
    }
}

/// One training or scoring example: prompt word ids, stroke-side inputs
/// `BOS t1 .. tn [PAD ..]` and the aligned targets (`None` on padding).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Example {
    pub prompt: Vec<usize>,
    pub input: Vec<usize>,
    pub target: Vec<Option<usize>>,
}

impl StrokeLm {
    pub fn new(cfg: LmConfig, vocab: Vocab, viewbox: ViewBox) -> Result<Self, LmError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParameterStore::new();
        let shapes = param_shapes(&cfg, &vocab);
        let resid = 1.0 / ((2 * cfg.layers.max(1)) as f64).sqrt();
        for (name, shape) in &shapes {
            let t = if name == PROMPT_TABLE {
                Tensor::randn(shape, 1.0, &mut rng)
            } else if name.ends_with(".g") {
                Tensor::from_fn(shape, |_| 1.0)
            } else if name.ends_with(".b") || name.starts_with("head.") {
                Tensor::zeros(shape)
            } else if name.ends_with("embed") {
                Tensor::randn(shape, 0.5, &mut rng)
            } else {
                let mut std = 1.0 / (shape[0] as f64).sqrt();
                if name.ends_with("attn.o") || name.ends_with("mlp.w2") {
                    std *= resid;
                }
                Tensor::randn(shape, std, &mut rng)
            };
            store.add(name, t)?;
        }
        let id = store.id(PROMPT_TABLE)?;
        store.freeze(id);
        Ok(Self {
            cfg,
            vocab,
            store,
            viewbox,
        })
    }

    pub fn layout(&self) -> TokenLayout {
        self.vocab.layout
    }

    /// Bytes of the frozen prompt table.
    pub fn prompt_table_bytes(&self) -> Vec<u8> {
        let t = &self.store.value(PROMPT_TABLE).expect("prompt table").data();
        t.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Logits `(prompt + input, V)` for one example.
    pub(crate) fn forward(&self, g: &mut Graph, b: &mut Binder, prompt: &[usize], input: &[usize]) -> Result<Var, LmError> {
        if input.len() > self.cfg.max_len {
            return Err(LmError::SequenceTooLong {
                len: input.len(),
                max: self.cfg.max_len,
            });
        }
        let cfg = &self.cfg;
        let pt = b.get(g, PROMPT_TABLE)?;
        let st = b.get(g, "stroke.embed")?;
        let pos = b.get(g, "pos.embed")?;
        let p = g.embedding(pt, prompt)?;
        let s = g.embedding(st, input)?;
        let positions: Vec<usize> = (0..input.len()).collect();
        let ps = g.embedding(pos, &positions)?;
        let s = g.add(s, ps)?;
        let mut x = g.concat_rows(&[p, s])?;
        let dh = cfg.embed_dim / cfg.heads;
        let inv = 1.0 / (dh as f64).sqrt();
        for l in 0..cfg.layers {
            let n = |k: &str| format!("layer.{l}.{k}");
            let (g1, b1) = (b.get(g, &n("ln1.g"))?, b.get(g, &n("ln1.b"))?);
            let h = g.layer_norm(x, g1, b1)?;
            let (wq, wk, wv) = (b.get(g, &n("attn.q"))?, b.get(g, &n("attn.k"))?, b.get(g, &n("attn.v"))?);
            let q = g.matmul(h, wq)?;
            let k = g.matmul(h, wk)?;
            let v = g.matmul(h, wv)?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let qh = g.slice_cols(q, hd * dh, dh)?;
                let kh = g.slice_cols(k, hd * dh, dh)?;
                let vh = g.slice_cols(v, hd * dh, dh)?;
                let sc = g.matmul_t(qh, kh, false, true)?;
                let sc = g.scale(sc, inv);
                let a = g.causal_softmax(sc)?;
                heads.push(g.matmul(a, vh)?);
            }
            let att = g.concat_cols(&heads)?;
            let (wo, bo) = (b.get(g, &n("attn.o"))?, b.get(g, &n("attn.o.b"))?);
            let o = g.matmul(att, wo)?;
            let o = g.add_col_bias(o, bo)?;
            x = g.add(x, o)?;
            let (g2, b2) = (b.get(g, &n("ln2.g"))?, b.get(g, &n("ln2.b"))?);
            let h = g.layer_norm(x, g2, b2)?;
            let (w1, c1) = (b.get(g, &n("mlp.w1"))?, b.get(g, &n("mlp.w1.b"))?);
            let (w2, c2) = (b.get(g, &n("mlp.w2"))?, b.get(g, &n("mlp.w2.b"))?);
            let h = g.matmul(h, w1)?;
            let h = g.add_col_bias(h, c1)?;
            let h = g.relu(h);
            let h = g.matmul(h, w2)?;
            let h = g.add_col_bias(h, c2)?;
            x = g.add(x, h)?;
        }
        let (fg, fb) = (b.get(g, "final.ln.g")?, b.get(g, "final.ln.b")?);
        let x = g.layer_norm(x, fg, fb)?;
        let (hw, hb) = (b.get(g, "head.w")?, b.get(g, "head.b")?);
        let logits = g.matmul(x, hw)?;
        Ok(g.add_col_bias(logits, hb)?)
    }

    /// Mean cross-entropy of one example over its stroke-side targets, as
    /// a graph node, with the number of targets it averages.
    pub(crate) fn example_loss(&self, g: &mut Graph, b: &mut Binder, ex: &Example) -> Result<(Var, usize), LmError> {
        let logits = self.forward(g, b, &ex.prompt, &ex.input)?;
        let mut targets = vec![None; ex.prompt.len()];
        targets.extend_from_slice(&ex.target);
        let count = targets.iter().flatten().count();
        Ok((g.cross_entropy(logits, &targets)?, count))
    }

    pub(crate) fn example(&self, keywords: &[String], seq: &StrokeTokenSeq) -> Result<Example, LmError> {
        if seq.layout != self.vocab.layout {
            return Err(LmError::LayoutMismatch {
                expected: self.vocab.layout,
                found: seq.layout,
            });
        }
        if seq.len() > self.cfg.max_tokens() {
            return Err(LmError::SequenceTooLong {
                len: seq.len(),
                max: self.cfg.max_tokens(),
            });
        }
        let v = &self.vocab;
        let mut input = vec![v.bos()];
        input.extend_from_slice(&seq.tokens);
        let mut target: Vec<Option<usize>> = seq.tokens.iter().map(|&t| Some(t)).collect();
        target.push(Some(v.eos()));
        Ok(Example {
            prompt: v.build_prompt(keywords)?,
            input,
            target,
        })
    }

    /// Teacher-forced cross-entropy averaged over every target position of
    /// the given pairs (`EOS` included).
    pub fn cross_entropy(&self, pairs: &[(Vec<String>, StrokeTokenSeq)]) -> Result<f64, LmError> {
        let mut total = 0.0;
        let mut count = 0;
        for (kw, seq) in pairs {
            let ex = self.example(kw, seq)?;
            let mut g = Graph::new();
            let mut b = Binder::new(&self.store);
            let (ce, n) = self.example_loss(&mut g, &mut b, &ex)?;
            total += g.value(ce).item() * n as f64;
            count += n;
        }
        if count == 0 {
            return Err(LmError::EmptyCorpus);
        }
        Ok(total / count as f64)
    }

    /// Logits for the token following `prefix` (stroke ids after `BOS`).
    pub fn next_logits(&self, prompt: &[usize], prefix: &[usize]) -> Result<Vec<f64>, LmError> {
        let mut input = vec![self.vocab.bos()];
        input.extend_from_slice(prefix);
        let mut g = Graph::new();
        let mut b = Binder::new(&self.store);
        let logits = self.forward(&mut g, &mut b, prompt, &input)?;
        let t = g.value(logits);
        let v = t.cols();
        let last = t.rows() - 1;
        Ok(t.data()[last * v..(last + 1) * v].to_vec())
    }

    pub fn sampling(&self) -> Sampling {
        self.cfg.sampling
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.cfg;
        let l = self.vocab.layout;
        let vb = self.viewbox;
        Checkpoint::new(self.store.clone())
            .with_meta("kind", KIND)
            .with_meta("embed_dim", c.embed_dim)
            .with_meta("layers", c.layers)
            .with_meta("heads", c.heads)
            .with_meta("max_len", c.max_len)
            .with_meta("lr", c.lr)
            .with_meta("seed", c.seed)
            .with_meta("batch_size", c.batch_size)
            .with_meta("max_steps", c.max_steps)
            .with_meta("temperature", c.sampling.temperature)
            .with_meta("top_k", c.sampling.top_k.map_or(0, |k| k))
            .with_meta("depth", l.depth)
            .with_meta("codebook_size", l.codebook_size)
            .with_meta("stages", l.stages)
            .with_meta("viewbox", format!("{} {} {} {}", vb.min_x, vb.min_y, vb.width, vb.height))
            .with_meta("words", serde_json::to_string(self.vocab.words()).expect("words"))
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, LmError> {
        if ck.meta.get("kind").map(String::as_str) != Some(KIND) {
            return Err(LmError::Config("checkpoint is not a stroke model".into()));
        }
        let top_k: usize = ck.meta_parse("top_k")?;
        let cfg = LmConfig {
            embed_dim: ck.meta_parse("embed_dim")?,
            layers: ck.meta_parse("layers")?,
            heads: ck.meta_parse("heads")?,
            max_len: ck.meta_parse("max_len")?,
            lr: ck.meta_parse("lr")?,
            seed: ck.meta_parse("seed")?,
            batch_size: ck.meta_parse("batch_size")?,
            max_steps: ck.meta_parse("max_steps")?,
            target_ce: None,
            sampling: Sampling {
                temperature: ck.meta_parse("temperature")?,
                top_k: (top_k > 0).then_some(top_k),
            },
        };
        cfg.validate()?;
        let layout = TokenLayout {
            depth: ck.meta_parse("depth")?,
            codebook_size: ck.meta_parse("codebook_size")?,
            stages: ck.meta_parse("stages")?,
        };
        let words: Vec<String> = serde_json::from_str(ck.meta.get("words").map_or("", String::as_str))
            .map_err(|e| LmError::Config(format!("words: {e}")))?;
        let vocab = Vocab::from_words(layout, words)?;
        let vb: Vec<f64> = ck
            .meta
            .get("viewbox")
            .map_or("", String::as_str)
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| LmError::Config(format!("bad viewbox value {s:?}"))))
            .collect::<Result<_, _>>()?;
        if vb.len() != 4 {
            return Err(LmError::Config("viewbox needs four numbers".into()));
        }
        for (name, shape) in param_shapes(&cfg, &vocab) {
            let v = ck.store.value(&name)?;
            if v.shape() != shape.as_slice() {
                return Err(LmError::Config(format!("{name} has shape {:?}, expected {shape:?}", v.shape())));
            }
        }
        Ok(Self {
            cfg,
            vocab,
            store: ck.store,
            viewbox: ViewBox::new(vb[0], vb[1], vb[2], vb[3]),
        })
    }
}

pub(crate) fn param_shapes(cfg: &LmConfig, vocab: &Vocab) -> Vec<(String, Vec<usize>)> {
    let e = cfg.embed_dim;
    let v = vocab.size();
    let mut out = vec![
        (PROMPT_TABLE.to_owned(), vec![vocab.word_count(), e]),
        ("stroke.embed".to_owned(), vec![v, e]),
        ("pos.embed".to_owned(), vec![cfg.max_len, e]),
    ];
    for l in 0..cfg.layers {
        let n = |k: &str| format!("layer.{l}.{k}");
        out.push((n("ln1.g"), vec![e]));
        out.push((n("ln1.b"), vec![e]));
        for w in ["attn.q", "attn.k", "attn.v", "attn.o"] {
            out.push((n(w), vec![e, e]));
        }
        out.push((n("attn.o.b"), vec![e]));
        out.push((n("ln2.g"), vec![e]));
        out.push((n("ln2.b"), vec![e]));
        out.push((n("mlp.w1"), vec![e, 4 * e]));
        out.push((n("mlp.w1.b"), vec![4 * e]));
        out.push((n("mlp.w2"), vec![4 * e, e]));
        out.push((n("mlp.w2.b"), vec![e]));
    }
    out.push(("final.ln.g".to_owned(), vec![e]));
    out.push(("final.ln.b".to_owned(), vec![e]));
    out.push(("head.w".to_owned(), vec![e, v]));
    out.push(("head.b".to_owned(), vec![v]));
    out
}
