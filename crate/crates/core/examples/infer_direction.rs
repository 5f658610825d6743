//! Causal direction on generated data, in both column orders.

use anmmm::cli::verdict_report;
use anmmm::gppom::FitOptions;
use anmmm::inference::infer_direction;
use anmmm::synth::{generate, Family, MixtureSpec};

fn main() -> anmmm::Result<()> {
    let data = generate(&MixtureSpec::standard(Family::F3, 2, 100)?, 3)?;
    let opts = FitOptions::default();
    let verdict = infer_direction(&data.x, &data.y, 1.0, &opts)?;
    print!("{}", verdict_report(&verdict));
    let swapped = infer_direction(&data.y, &data.x, 1.0, &opts)?;
    println!("swapped columns: {}", swapped.direction);
    Ok(())
}
