//! Reads a cause-effect pair file, subsamples it several times and scores
//! the direction calls.
//!
//! `cargo run --release --example pair_file -- pairs.txt [cause_col effect_col]`
//! With no path, a small generated file is used.

use anmmm::gppom::FitOptions;
use anmmm::inference::{infer_direction, Direction};
use anmmm::io::{accuracy, load_pairs, parse_pairs, subsample, to_csv, Outcome, RecordLog, TrialRecord};
use anmmm::synth::{generate, Family, MixtureSpec};

fn main() -> anmmm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let pairs = match args.first() {
        Some(path) => {
            let col = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
            load_pairs(path, col(1, 0), col(2, 1))?
        }
        None => {
            let d = generate(&MixtureSpec::standard(Family::F1, 2, 120)?, 1)?;
            let rows: Vec<Vec<f64>> = d.x.iter().zip(&d.y).map(|(&x, &y)| vec![x, y]).collect();
            parse_pairs(&to_csv(&rows, &["x y".into()]), 0, 1)?
        }
    };
    let (x, y) = (pairs.cause(), pairs.effect());
    let k = pairs.n().min(90);
    let opts = FitOptions { restarts: 2, max_iters: 200, ..FitOptions::default() };

    let mut log = RecordLog::new();
    for trial in 0..3 {
        let seed = 100 + trial as u64;
        let (xs, ys) = subsample(&x, &y, k, seed)?;
        let v = infer_direction(&xs, &ys, 1.0, &FitOptions { seed, ..opts.clone() })?;
        log.append(TrialRecord {
            trial,
            seed,
            dataset: "pair".into(),
            lambda: 1.0,
            outcome: Outcome::Direction { predicted: v.direction, truth: Direction::XtoY },
            wall_ms: None,
        });
    }
    print!("{}", log.to_text());
    println!("accuracy {:.2}", accuracy(log.records())?);
    Ok(())
}
