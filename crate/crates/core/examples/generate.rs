//! Draws a two-mechanism mixture and writes it as CSV to stdout.

use anmmm::io::to_csv;
use anmmm::synth::{generate, Family, MixtureSpec};

fn main() -> anmmm::Result<()> {
    let spec = MixtureSpec::standard(Family::F3, 2, 20)?.with_noise(0.05)?.with_first_weight(0.25)?;
    let data = generate(&spec, 7)?;
    let rows: Vec<Vec<f64>> = data
        .x
        .iter()
        .zip(&data.y)
        .zip(&data.labels)
        .map(|((&x, &y), &l)| vec![x, y, l as f64])
        .collect();
    print!("{}", to_csv(&rows, &["x,y,mechanism".to_string()]));
    Ok(())
}
