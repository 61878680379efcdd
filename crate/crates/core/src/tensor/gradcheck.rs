//! Central finite-difference checks for graph gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParameterStore, Tensor, TensorError, Var};

/// Step used by [`max_relative_error`].
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-5;

/// Builds the scalar `f(inputs)` via `build`, then compares the analytic
/// gradient of every input element against `(f(x+h) - f(x-h)) / 2h`.
/// Returns the largest `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn max_relative_error<F>(inputs: &[Tensor], build: F) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let mut store = ParameterStore::new();
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(&format!("in{i}"), t.clone()))
        .collect::<Result<_, _>>()?;

    let eval = |store: &ParameterStore| -> Result<(Graph, Var), TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
        let out = build(&mut g, &vars)?;
        Ok((g, out))
    };

    let (g, out) = eval(&store)?;
    let grads = g.backward(out)?;
    let mut worst: f64 = 0.0;
    for (i, &id) in ids.iter().enumerate() {
        let analytic = grads.param(id).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for k in 0..inputs[i].len() {
            let base = inputs[i].data()[k];
            let mut probe = |delta: f64| -> Result<f64, TensorError> {
                let mut t = inputs[i].clone();
                t.data_mut()[k] = base + delta;
                store.set_value(id, t)?;
                let (g, out) = eval(&store)?;
                Ok(g.value(out).item())
            };
            let numeric = (probe(FD_STEP)? - probe(-FD_STEP)?) / (2.0 * FD_STEP);
            store.set_value(id, inputs[i].clone())?;
            let a = analytic[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Every differentiable primitive of [`Graph`], by the name accepted by
/// [`check_primitive`]. `straight_through` is absent: its backward pass is
/// a surrogate, not the derivative of its forward value.
pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "add_channel_bias",
    "add_col_bias",
    "conv1d",
    "conv_transpose1d",
    "matmul",
    "matmul_transposed",
    "transpose",
    "slice_cols",
    "concat_cols",
    "concat_rows",
    "causal_softmax",
    "layer_norm",
    "embedding",
    "mse",
    "cross_entropy",
    "sum",
    "mean",
];

/// Entries drawn away from zero so ReLU kinks stay outside the
/// finite-difference stencil.
fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Weighted readout `sum(out * r)` with a fixed random `r`, turning any
/// tensor output into a scalar with a generic gradient.
fn readout(g: &mut Graph, out: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = g.value(out).shape().to_vec();
    let r = g.input(rand_tensor(&mut rng, &shape));
    let y = g.mul(out, r)?;
    Ok(g.sum(y))
}

/// Runs the finite-difference check for one primitive on random inputs
/// drawn from `seed`, returning the worst relative error.
pub fn check_primitive(name: &str, seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(2..5usize);
    let c = rng.random_range(2..6usize);
    let mut t = |shape: &[usize]| rand_tensor(&mut rng, shape);
    let (inputs, build): (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>>) = match name {
        "add" => (vec![t(&[r, c]), t(&[r, c])], Box::new(|g, v| g.add(v[0], v[1]))),
        "sub" => (vec![t(&[r, c]), t(&[r, c])], Box::new(|g, v| g.sub(v[0], v[1]))),
        "mul" => (vec![t(&[r, c]), t(&[r, c])], Box::new(|g, v| g.mul(v[0], v[1]))),
        "scale" => (vec![t(&[r, c])], Box::new(|g, v| Ok(g.scale(v[0], -1.7)))),
        "relu" => (vec![t(&[r, c])], Box::new(|g, v| Ok(g.relu(v[0])))),
        "add_channel_bias" => (vec![t(&[r, c]), t(&[r])], Box::new(|g, v| g.add_channel_bias(v[0], v[1]))),
        "add_col_bias" => (vec![t(&[r, c]), t(&[c])], Box::new(|g, v| g.add_col_bias(v[0], v[1]))),
        "conv1d" | "conv_transpose1d" => {
            let k = rng.random_range(1..5usize);
            let stride = rng.random_range(1..3usize);
            let pad = rng.random_range(0..k.min(2));
            let l = rng.random_range(k + 1..k + 8);
            let cout = rng.random_range(1..4usize);
            let mut t = |shape: &[usize]| rand_tensor(&mut rng, shape);
            if name == "conv1d" {
                (
                    vec![t(&[c, l]), t(&[cout, c, k])],
                    Box::new(move |g, v| g.conv1d(v[0], v[1], stride, pad)),
                )
            } else {
                (
                    vec![t(&[c, l]), t(&[c, cout, k])],
                    Box::new(move |g, v| g.conv_transpose1d(v[0], v[1], stride, pad)),
                )
            }
        }
        "matmul" => {
            let n = rng.random_range(1..5usize);
            let mut t = |shape: &[usize]| rand_tensor(&mut rng, shape);
            (vec![t(&[r, c]), t(&[c, n])], Box::new(|g, v| g.matmul(v[0], v[1])))
        }
        "matmul_transposed" => {
            let n = rng.random_range(1..5usize);
            let ta = rng.random_bool(0.5);
            let tb = rng.random_bool(0.5);
            let mut t = |shape: &[usize]| rand_tensor(&mut rng, shape);
            let a = if ta { t(&[c, r]) } else { t(&[r, c]) };
            let b = if tb { t(&[n, c]) } else { t(&[c, n]) };
            (vec![a, b], Box::new(move |g, v| g.matmul_t(v[0], v[1], ta, tb)))
        }
        "transpose" => (vec![t(&[r, c])], Box::new(|g, v| g.transpose(v[0]))),
        "slice_cols" => (vec![t(&[r, c + 2])], Box::new(move |g, v| g.slice_cols(v[0], 1, c))),
        "concat_cols" => (vec![t(&[r, c]), t(&[r, 2])], Box::new(|g, v| g.concat_cols(v))),
        "concat_rows" => (vec![t(&[r, c]), t(&[2, c])], Box::new(|g, v| g.concat_rows(v))),
        "causal_softmax" => (vec![t(&[c, c])], Box::new(|g, v| g.causal_softmax(v[0]))),
        "layer_norm" => (
            vec![t(&[r, c + 1]), t(&[c + 1]), t(&[c + 1])],
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2])),
        ),
        "embedding" => {
            let ids: Vec<usize> = (0..c + 2).map(|_| rng.random_range(0..r)).collect();
            let mut t = |shape: &[usize]| rand_tensor(&mut rng, shape);
            (vec![t(&[r, 3])], Box::new(move |g, v| g.embedding(v[0], &ids)))
        }
        "mse" => {
            let inputs = vec![t(&[r, c]), t(&[r, c])];
            return max_relative_error(&inputs, |g, v| g.mse(v[0], v[1]));
        }
        "cross_entropy" => {
            let targets: Vec<Option<usize>> = (0..r)
                .map(|i| if i == 1 { None } else { Some(rng.random_range(0..c)) })
                .collect();
            let inputs = vec![rand_tensor(&mut rng, &[r, c])];
            return max_relative_error(&inputs, move |g, v| g.cross_entropy(v[0], &targets));
        }
        "sum" => (vec![t(&[r, c])], Box::new(|g, v| Ok(g.sum(v[0])))),
        "mean" => (vec![t(&[r, c])], Box::new(|g, v| Ok(g.mean(v[0])))),
        other => return Err(TensorError::UnknownParameter(format!("primitive {other}"))),
    };
    max_relative_error(&inputs, |g, v| {
        let out = build(g, v)?;
        readout(g, out, seed)
    })
}
