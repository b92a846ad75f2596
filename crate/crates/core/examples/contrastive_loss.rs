//! Evaluates the NT-Xent loss on hand-made embeddings and shows its
//! gradient with respect to the first view.
//!
//! cargo run --example contrastive_loss

use saved::autograd::Tensor;
use saved::loss::{nt_xent, nt_xent_with_grad, LossConfig};

fn main() -> saved::Result<()> {
    let cfg = LossConfig::default();
    let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?;
    println!("identical orthonormal views: {:.5}", nt_xent(&e, &e, &cfg)?);

    let swapped = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])?;
    println!("swapped positives:           {:.5}", nt_xent(&e, &swapped, &cfg)?);

    let single = Tensor::from_rows(&[vec![0.2, -0.7]])?;
    println!("single pair:                 {:.5}", nt_xent(&single, &single, &cfg)?);

    let z_i = Tensor::from_rows(&[vec![1.0, 0.2, 0.0], vec![0.1, 1.0, 0.3], vec![0.0, 0.2, 1.0]])?;
    let z_j = Tensor::from_rows(&[vec![0.9, 0.3, 0.1], vec![0.0, 1.1, 0.2], vec![0.2, 0.0, 0.8]])?;
    let (loss, grad_i, _) = nt_xent_with_grad(&z_i, &z_j, &cfg)?;
    println!("noisy batch of 3:            {loss:.5}");
    for (r, row) in grad_i.chunks(z_i.last_dim()).enumerate() {
        println!("  dL/dz_i[{r}] = {row:.4?}");
    }
    Ok(())
}
