//! Groups observations by generating mechanism and scores the grouping.

use anmmm::clustering::{adjusted_rand_index, cluster_mechanisms, KMeansOptions};
use anmmm::gppom::FitOptions;
use anmmm::synth::{generate, Family, MixtureSpec};

fn main() -> anmmm::Result<()> {
    let data = generate(&MixtureSpec::standard(Family::F3, 2, 100)?, 5)?;
    let (clusters, _) =
        cluster_mechanisms(&data.x, &data.y, 1.0, 2, &FitOptions::default(), &KMeansOptions::default())?;
    println!("centroids {:?}", clusters.centroids.as_slice());
    println!("ARI {:.3}", adjusted_rand_index(&clusters.labels, &data.labels)?);
    Ok(())
}
