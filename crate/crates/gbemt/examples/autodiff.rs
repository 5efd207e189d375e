//! The reverse-mode tape: record a small computation, backpropagate, and
//! compare against central finite differences.
//!
//! ```bash
//! cargo run --example autodiff
//! ```

use gbemt::tensor::{Tape, Tensor};

fn main() -> gbemt::Result<()> {
    // loss = sum(relu(x W + b)^2-ish): a tiny two-layer expression.
    let x_val = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.75]])?;
    let w_val = Tensor::from_rows(&[vec![0.2, -0.4], vec![0.9, 0.1], vec![-0.3, 0.7]])?;
    let b_val = Tensor::new(vec![2], vec![0.05, -0.2])?;

    let mut tape = Tape::new();
    let x = tape.leaf(x_val.clone(), true);
    let w = tape.leaf(w_val.clone(), true);
    let b = tape.leaf(b_val.clone(), true);
    let h = tape.matmul(x, w)?;
    let h = tape.add_bias(h, b)?;
    let h = tape.relu(h);
    let sq = tape.mul(h, h)?;
    let loss = tape.sum(sq);
    println!("loss = {:.6}", tape.value(loss).item()?);

    let grads = tape.backward(loss)?;
    let dw = grads.get(w).unwrap();
    println!("dL/dW = {:?}", dw.data());

    // Finite-difference check on W, forward values only.
    let f = |wt: &Tensor| -> f64 {
        let mut t = Tape::new();
        let x = t.constant(x_val.clone());
        let w = t.constant(wt.clone());
        let b = t.constant(b_val.clone());
        let h = t.matmul(x, w).unwrap();
        let h = t.add_bias(h, b).unwrap();
        let h = t.relu(h);
        let sq = t.mul(h, h).unwrap();
        let loss = t.sum(sq);
        t.value(loss).item().unwrap()
    };
    let h_step = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..w_val.len() {
        let mut plus = w_val.clone();
        plus.data_mut()[i] += h_step;
        let mut minus = w_val.clone();
        minus.data_mut()[i] -= h_step;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h_step);
        let rel = (dw.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(rel);
    }
    println!("worst relative error vs finite differences: {worst:.3e}");
    Ok(())
}
