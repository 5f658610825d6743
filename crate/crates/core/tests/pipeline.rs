use anmmm::clustering::{cluster_mechanisms, KMeansOptions};
use anmmm::gppom::{fit, FitOptions, RestartOutcome};
use anmmm::inference::infer_direction;
use anmmm::synth::{generate, Family, MixtureSpec};

fn quick() -> FitOptions {
    FitOptions { restarts: 2, max_iters: 60, ..FitOptions::default() }
}

fn f3(n: usize, seed: u64) -> anmmm::synth::LabeledDataset {
    generate(&MixtureSpec::standard(Family::F3, 2, n).unwrap(), seed).unwrap()
}

#[test]
fn fit_returns_best_restart() {
    let x = [0.1, 0.5, 0.9, 0.3];
    let y = [0.2, 0.4, 1.1, 0.3];
    let r = fit(&x, &y, 0.0, &FitOptions { restarts: 2, ..quick() }).unwrap();
    let finals: Vec<f64> = r
        .restarts
        .iter()
        .filter_map(|o| match o {
            RestartOutcome::Converged { objective, degenerate: false, .. } => Some(*objective),
            _ => None,
        })
        .collect();
    let min = finals.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(r.objective.total, min);
}

#[test]
fn single_mechanism_trace_is_monotone() {
    let spec = MixtureSpec::standard(Family::F1, 1, 40).unwrap();
    let d = generate(&spec, 3).unwrap();
    let r = fit(&d.x, &d.y, 1.0, &quick()).unwrap();
    assert!(r.trace.windows(2).all(|w| w[1] < w[0]));
    assert!(r.objective.hsic_raw < 0.05, "hsic {}", r.objective.hsic_raw);
}

#[test]
fn latent_separates_mechanisms() {
    let d = f3(100, 5);
    let r = fit(&d.x, &d.y, 1.0, &FitOptions::default()).unwrap();
    let theta = r.state.theta();
    let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
    for i in 0..d.len() {
        for j in 0..i {
            let dist = (theta[(i, 0)] - theta[(j, 0)]).abs();
            if d.labels[i] == d.labels[j] {
                within += dist;
                nw += 1;
            } else {
                across += dist;
                na += 1;
            }
        }
    }
    assert!(within / nw as f64 <= across / na as f64, "within {} across {}", within / nw as f64, across / na as f64);
}

#[test]
fn swapping_columns_mirrors_the_verdict() {
    let d = f3(30, 9);
    let a = infer_direction(&d.x, &d.y, 1.0, &quick()).unwrap();
    let b = infer_direction(&d.y, &d.x, 1.0, &quick()).unwrap();
    assert_eq!(b, a.mirrored());
}

#[test]
fn cluster_labels_follow_row_permutation() {
    let d = f3(30, 4);
    let perm: Vec<usize> = (0..30).map(|i| (i * 7) % 30).collect();
    let px: Vec<f64> = perm.iter().map(|&i| d.x[i]).collect();
    let py: Vec<f64> = perm.iter().map(|&i| d.y[i]).collect();
    let km = KMeansOptions::default();
    let (a, _) = cluster_mechanisms(&d.x, &d.y, 1.0, 2, &quick(), &km).unwrap();
    let (b, _) = cluster_mechanisms(&px, &py, 1.0, 2, &quick(), &km).unwrap();
    let expected: Vec<usize> = perm.iter().map(|&i| a.labels[i]).collect();
    assert_eq!(b.labels, expected);
}

#[test]
fn one_cluster_gives_identical_labels() {
    let d = f3(20, 2);
    let (r, _) = cluster_mechanisms(&d.x, &d.y, 1.0, 1, &quick(), &KMeansOptions::default()).unwrap();
    assert!(r.labels.iter().all(|&l| l == 1));
}
