use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{Gradients, Tensor, TensorError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const STKT_MAGIC: &[u8; 4] = b"STKT";
const STKT_VERSION: u32 = 1;
pub const FORMAT_VERSION: &str = "checkpoint STKT v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub frozen: bool,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Parameter {
    pub fn requires_grad(&self) -> bool {
        !self.frozen
    }
}

/// Named parameters plus per-parameter Adam state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_owned()));
        }
        let n = value.len();
        self.params.push(Parameter {
            name: name.to_owned(),
            value,
            grad: None,
            frozen: false,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        });
        self.index.insert(name.to_owned(), self.params.len() - 1);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, TensorError> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| TensorError::UnknownParameter(name.to_owned()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, TensorError> {
        Ok(&self.params[self.id(name)?.0].value)
    }

    /// Overwrites a parameter's value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<(), TensorError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(super::mismatch("set_value", format!("{:?} vs {:?}", p.value.shape(), value.shape())));
        }
        p.value = value;
        Ok(())
    }

    pub fn freeze(&mut self, id: ParamId) {
        self.params[id.0].frozen = true;
        self.params[id.0].grad = None;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.index.values().map(|&i| (ParamId(i), &self.params[i]))
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds a backward pass's gradients into the stored `grad` buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.param_entries() {
            let p = &mut self.params[id.0];
            if p.frozen {
                continue;
            }
            match &mut p.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => p.grad = Some(Tensor::new(p.value.shape().to_vec(), g.to_vec()).expect("gradient shape")),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// One Adam update on every trainable parameter holding a gradient,
    /// then clears all gradients.
    pub fn optimizer_step(&mut self, lr: f64) -> Result<(), TensorError> {
        if !self.params.iter().any(|p| !p.frozen && p.grad.is_some()) {
            return Err(TensorError::NoGradient);
        }
        for p in &mut self.params {
            let Some(grad) = p.grad.take() else { continue };
            if p.frozen {
                continue;
            }
            p.steps += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(p.steps as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(p.steps as i32);
            let w = p.value.data_mut();
            for (k, g) in grad.data().iter().enumerate() {
                p.m[k] = ADAM_BETA1 * p.m[k] + (1.0 - ADAM_BETA1) * g;
                p.v[k] = ADAM_BETA2 * p.v[k] + (1.0 - ADAM_BETA2) * g * g;
                let mhat = p.m[k] / bc1;
                let vhat = p.v[k] / bc2;
                w[k] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Parameters plus free-form string metadata, as stored on disk.
///
/// Layout (little-endian): `STKT`, `u32` version, `u32` metadata byte
/// length and `key=value` lines, `u32` tensor count, then per tensor in
/// name order: `u32` name length, name, `u8` frozen flag, `u32` rank,
/// `u32` dims, `f64` values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub store: ParameterStore,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<(), TensorError> {
    let v = u32::try_from(v).map_err(|_| TensorError::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>, TensorError> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(TensorError::Checkpoint("truncated".into()));
    }
    Ok(buf)
}

impl Checkpoint {
    pub fn new(store: ParameterStore) -> Self {
        Self {
            meta: BTreeMap::new(),
            store,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, TensorError> {
        self.meta
            .get(key)
            .ok_or_else(|| TensorError::Checkpoint(format!("missing metadata {key:?}")))?
            .parse()
            .map_err(|_| TensorError::Checkpoint(format!("bad metadata {key:?}")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        w.write_all(STKT_MAGIC)?;
        put_u32(&mut w, STKT_VERSION as usize)?;
        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(TensorError::Checkpoint(format!("metadata {k:?} not representable")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        put_u32(&mut w, meta.len())?;
        w.write_all(meta.as_bytes())?;
        put_u32(&mut w, self.store.len())?;
        for (_, p) in self.store.iter() {
            put_u32(&mut w, p.name.len())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&[p.frozen as u8])?;
            put_u32(&mut w, p.value.shape().len())?;
            for &d in p.value.shape() {
                put_u32(&mut w, d)?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TensorError> {
        let magic = get_bytes(&mut r, 4)?;
        if magic != STKT_MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let version = get_u32(&mut r)?;
        if version != STKT_VERSION as usize {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let n = get_u32(&mut r)?;
        let meta_text = String::from_utf8(get_bytes(&mut r, n)?).map_err(|_| TensorError::Checkpoint("metadata not UTF-8".into()))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TensorError::Checkpoint(format!("bad metadata line {line:?}")))?;
            meta.insert(k.to_owned(), v.to_owned());
        }
        let count = get_u32(&mut r)?;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let n = get_u32(&mut r)?;
            let name = String::from_utf8(get_bytes(&mut r, n)?).map_err(|_| TensorError::Checkpoint("name not UTF-8".into()))?;
            let frozen = get_bytes(&mut r, 1)?[0] != 0;
            let rank = get_u32(&mut r)?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(get_u32(&mut r)?);
            }
            let len: usize = shape.iter().product();
            let raw = get_bytes(&mut r, len * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let id = store.add(&name, Tensor::new(shape, data)?)?;
            if frozen {
                store.freeze(id);
            }
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(TensorError::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { meta, store })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorError> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn step_with_grad(store: &mut ParameterStore, id: ParamId, g: f64) {
        store.params[id.0].grad = Some(Tensor::scalar(g));
        store.optimizer_step(0.1).unwrap();
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = ParameterStore::new();
        let id = s.add("w", Tensor::scalar(1.0)).unwrap();
        step_with_grad(&mut s, id, 1.0);
        assert!((s.get(id).value.item() - 0.9).abs() < 1e-6);
        assert!(s.get(id).grad.is_none());
    }

    #[test]
    fn frozen_parameter_unchanged() {
        let mut s = ParameterStore::new();
        let a = s.add("a", Tensor::scalar(1.0)).unwrap();
        let b = s.add("b", Tensor::scalar(1.0)).unwrap();
        s.freeze(b);
        let mut g = Graph::new();
        let va = g.param(&s, a);
        let vb = g.param(&s, b);
        let y = g.mul(va, vb).unwrap();
        let grads = g.backward(y).unwrap();
        s.accumulate(&grads);
        s.optimizer_step(0.1).unwrap();
        assert_eq!(s.get(b).value.item(), 1.0);
        assert_ne!(s.get(a).value.item(), 1.0);
    }

    #[test]
    fn zero_gradients_are_a_fixed_point() {
        let mut s = ParameterStore::new();
        let id = s.add("w", Tensor::scalar(0.25)).unwrap();
        step_with_grad(&mut s, id, 0.0);
        step_with_grad(&mut s, id, 0.0);
        assert!((s.get(id).value.item() - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn step_without_gradient_fails() {
        let mut s = ParameterStore::new();
        s.add("w", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(s.optimizer_step(0.1), Err(TensorError::NoGradient)));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::new();
        s.add("w", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(s.add("w", Tensor::scalar(2.0)), Err(TensorError::DuplicateParameter(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut s = ParameterStore::new();
        s.add("b.weight", Tensor::from_fn(&[2, 3, 4], |i| i as f64 * 0.5 - 3.0)).unwrap();
        let f = s.add("a.table", Tensor::from_fn(&[5, 2], |i| (i as f64).sin())).unwrap();
        s.freeze(f);
        let ck = Checkpoint::new(s).with_meta("kind", "test").with_meta("d", 2);
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"STKT");
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.meta_parse::<usize>("d").unwrap(), 2);
        assert!(back.store.get(back.store.id("a.table").unwrap()).frozen);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        for (_, p) in ck.store.iter() {
            assert_eq!(back.store.value(&p.name).unwrap(), &p.value);
        }
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 1]).is_err());
    }
}
