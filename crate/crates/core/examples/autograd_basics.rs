//! Builds a small computation on the tape and reads back gradients.
//!
//! cargo run --example autograd_basics

use saved::autograd::{Graph, Tensor};

fn main() -> saved::Result<()> {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.8, -1.0]])?);
    let w = g.param(Tensor::from_rows(&[vec![0.2, 0.1], vec![-0.4, 0.3], vec![0.5, -0.6]])?);
    let h = g.matmul(x, w)?;
    let h = g.relu(h);
    let p = g.log_softmax(h)?;
    let loss = g.mean(p);
    g.backward(loss)?;
    println!("loss  = {:.6}", g.value(loss).item());
    println!("dL/dx = {:.6?}", g.grad(x).unwrap());
    println!("dL/dw = {:.6?}", g.grad(w).unwrap());
    Ok(())
}
