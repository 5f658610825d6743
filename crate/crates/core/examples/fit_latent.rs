//! Fits the latent mechanism parameter on mixture data and summarizes it per
//! true mechanism.

use anmmm::gppom::{fit, FitOptions};
use anmmm::inference::standardize;
use anmmm::synth::{generate, Family, MixtureSpec};

fn main() -> anmmm::Result<()> {
    let data = generate(&MixtureSpec::standard(Family::F3, 2, 100)?, 11)?;
    let x = standardize(&data.x)?.values;
    let y = standardize(&data.y)?.values;
    let result = fit(&x, &y, 1.0, &FitOptions::default())?;
    println!(
        "objective {:.4} (nll {:.4}, hsic {:.3e}) after {} iterations, restart {}",
        result.objective.total, result.objective.nll, result.objective.hsic_raw, result.iterations, result.restart
    );
    let theta = result.state.theta();
    for mechanism in 1..=2 {
        let vals: Vec<f64> =
            (0..data.len()).filter(|&i| data.labels[i] == mechanism).map(|i| theta[(i, 0)]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        println!("mechanism {mechanism}: {} points, mean latent {mean:.3}", vals.len());
    }
    Ok(())
}
