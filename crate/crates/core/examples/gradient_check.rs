//! Central finite-difference check of every autodiff primitive, plus a
//! hand-built expression.

use stroketok::tensor::gradcheck::{check_primitive, max_relative_error, PRIMITIVES};
use stroketok::tensor::Tensor;

fn main() -> anyhow::Result<()> {
    for name in PRIMITIVES {
        let worst = (0..5).map(|s| check_primitive(name, s)).collect::<Result<Vec<_>, _>>()?;
        let worst = worst.into_iter().fold(0.0, f64::max);
        println!("{name:<20} max rel. error {worst:.2e}");
    }

    // sum(relu(A B)^2)
    let a = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin());
    let b = Tensor::from_fn(&[4, 2], |i| (i as f64 * 0.91).cos());
    let err = max_relative_error(&[a, b], |g, v| {
        let ab = g.matmul(v[0], v[1])?;
        let t = g.relu(ab);
        let sq = g.mul(t, t)?;
        Ok(g.sum(sq))
    })?;
    println!("composite expression   max rel. error {err:.2e}");
    Ok(())
}
