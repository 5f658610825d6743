//! A small benchmark grid run through the library, printing the summary table.

use anmmm::cli::{bench_table, run_bench, BenchConfig, FitSettings, Task};

fn main() -> anmmm::Result<()> {
    let cfg = BenchConfig {
        command: "bench",
        task: Task::Cluster,
        family: vec!["f1".into(), "f3".into()],
        n: vec![50],
        clusters: vec![2],
        sigma: vec![0.05],
        prop: vec![],
        lambda: vec![1.0],
        trials: 3,
        seed: 0,
        fit: FitSettings { restarts: 2, max_iters: 200, ..FitSettings::default() },
    };
    let results = run_bench(&cfg, None, false)?;
    print!("{}", bench_table(&cfg, &results)?);
    Ok(())
}
