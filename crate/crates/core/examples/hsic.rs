//! HSIC between a cause and an independent or a dependent variable.

use anmmm::kernels::{hsic_biased, rbf_gram, KernelWidths};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anmmm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 200;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let independent: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dependent: Vec<f64> = x.iter().map(|v| v * v + 0.05 * rng.random_range(-1.0..1.0)).collect();

    let width = KernelWidths::uniform(1, 1.0)?;
    let gram = |v: &[f64]| rbf_gram(&DMatrix::from_column_slice(v.len(), 1, v), &width);
    let kx = gram(&x)?;
    println!("independent: {:.3e}", hsic_biased(&kx, &gram(&independent)?)?);
    println!("y = x^2 + noise: {:.3e}", hsic_biased(&kx, &gram(&dependent)?)?);
    Ok(())
}
