//! Pair-file ingestion, subsampling and trial bookkeeping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::inference::Direction;

/// Numeric table read from a text file, with the two columns under study.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFile {
    pub rows: Vec<Vec<f64>>,
    /// 0-based column indices.
    pub cause_col: usize,
    pub effect_col: usize,
}

impl PairFile {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn cause(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[self.cause_col]).collect()
    }

    pub fn effect(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[self.effect_col]).collect()
    }
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty())
}

/// Parses a whitespace- or comma-separated numeric table. Blank lines and
/// lines starting with `#` are skipped. Columns are 0-based.
pub fn parse_pairs(text: &str, cause_col: usize, effect_col: usize) -> Result<PairFile> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row = split_fields(trimmed)
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("non-numeric cell '{f}'"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {w} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        for &c in &[cause_col, effect_col] {
            if c >= row.len() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("column {c} requested but the row has {} columns", row.len()),
                });
            }
            if !row[c].is_finite() {
                return Err(Error::Parse { line: line_no, message: format!("non-finite value in column {c}") });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, message: "no data rows".into() });
    }
    if rows[0].len() < 2 {
        return Err(Error::Parse { line: 0, message: "a pair file needs at least two columns".into() });
    }
    Ok(PairFile { rows, cause_col, effect_col })
}

pub fn load_pairs(path: impl AsRef<Path>, cause_col: usize, effect_col: usize) -> Result<PairFile> {
    parse_pairs(&fs::read_to_string(path)?, cause_col, effect_col)
}

/// CSV text with an optional block of `# ` comment lines first.
pub fn to_csv(rows: &[Vec<f64>], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// One positive integer label per line; `#` comments and blank lines skipped.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: usize = t.parse().map_err(|_| Error::Parse { line: i + 1, message: format!("label '{t}' is not a nonnegative integer") })?;
        labels.push(v);
    }
    Ok(labels)
}

/// `k` distinct indices from `0..n`, uniformly without replacement.
pub fn subsample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(invalid(format!("cannot draw {k} rows from {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, n, k).into_vec())
}

pub fn subsample(x: &[f64], y: &[f64], k: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(invalid("columns differ in length"));
    }
    let idx = subsample_indices(x.len(), k, seed)?;
    Ok((idx.iter().map(|&i| x[i]).collect(), idx.iter().map(|&i| y[i]).collect()))
}

/// Result of one trial.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Direction { predicted: Direction, truth: Direction },
    Clustering { ari: f64 },
}

/// One line of the trial log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    /// Identifier without whitespace or `=`.
    pub dataset: String,
    pub lambda: f64,
    pub outcome: Outcome,
    /// Milliseconds; omitted from the log when `None`.
    pub wall_ms: Option<u64>,
}

impl TrialRecord {
    /// 1 for a correct direction, 0 otherwise; the ARI for clustering trials.
    pub fn metric(&self) -> f64 {
        match &self.outcome {
            Outcome::Direction { predicted, truth } => f64::from(u8::from(predicted == truth)),
            Outcome::Clustering { ari } => *ari,
        }
    }

    /// `key=value` pairs separated by single spaces.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "trial={} seed={} dataset={} lambda={:?}",
            self.trial,
            self.seed,
            sanitize(&self.dataset),
            self.lambda
        );
        match &self.outcome {
            Outcome::Direction { predicted, truth } => {
                let _ = write!(s, " kind=direction predicted={predicted} truth={truth}");
            }
            Outcome::Clustering { ari } => {
                let _ = write!(s, " kind=clustering ari={ari:?}");
            }
        }
        let _ = write!(s, " metric={:?}", self.metric());
        if let Some(ms) = self.wall_ms {
            let _ = write!(s, " wall_ms={ms}");
        }
        s
    }
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_whitespace() || c == '=' { '_' } else { c }).collect()
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "XtoY" => Ok(Direction::XtoY),
            "YtoX" => Ok(Direction::YtoX),
            "NoDecision" => Ok(Direction::NoDecision),
            other => Err(invalid(format!("unknown direction '{other}'"))),
        }
    }
}

impl FromStr for TrialRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| invalid(format!("record field '{field}' is not key=value")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| invalid(format!("record lacks '{k}'")));
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| invalid(format!("record field '{k}' is not a number")))
        };
        let outcome = match get("kind")? {
            "direction" => Outcome::Direction { predicted: get("predicted")?.parse()?, truth: get("truth")?.parse()? },
            "clustering" => Outcome::Clustering { ari: num("ari")? },
            other => return Err(invalid(format!("unknown record kind '{other}'"))),
        };
        Ok(TrialRecord {
            trial: num("trial")? as usize,
            seed: get("seed")?.parse().map_err(|_| invalid("record seed is not an integer"))?,
            dataset: get("dataset")?.to_string(),
            lambda: num("lambda")?,
            outcome,
            wall_ms: kv.get("wall_ms").and_then(|v| v.parse().ok()),
        })
    }
}

/// Append-only list of trial records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordLog {
    records: Vec<TrialRecord>,
}

impl RecordLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, record: TrialRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| r.to_line() + "\n").collect()
    }

    /// Parses one record per non-empty, non-comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| {
                l.parse().map_err(|e: Error| Error::Parse { line: i + 1, message: e.to_string() })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }
}

/// Fraction of direction trials whose prediction matches the truth.
/// An abstention counts as incorrect.
pub fn accuracy(records: &[TrialRecord]) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for r in records {
        if let Outcome::Direction { predicted, truth } = &r.outcome {
            total += 1;
            correct += usize::from(predicted == truth);
        }
    }
    if total == 0 {
        return Err(invalid("accuracy needs at least one direction record"));
    }
    Ok(correct as f64 / total as f64)
}

/// Reads `dataset group` lines (whitespace separated, `#` comments allowed).
pub fn parse_grouping(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut f = t.split_whitespace();
        match (f.next(), f.next(), f.next()) {
            (Some(id), Some(group), None) => {
                map.insert(id.to_string(), group.to_string());
            }
            _ => return Err(Error::Parse { line: i + 1, message: "expected '<dataset> <group>'".into() }),
        }
    }
    Ok(map)
}

/// Mean over groups of the per-group accuracy. Records whose dataset is not
/// in `groups` form their own group.
pub fn grouped_accuracy(records: &[TrialRecord], groups: &BTreeMap<String, String>) -> Result<f64> {
    let mut by_group: BTreeMap<&str, Vec<TrialRecord>> = BTreeMap::new();
    for r in records {
        let g = groups.get(&r.dataset).map_or(r.dataset.as_str(), String::as_str);
        by_group.entry(g).or_default().push(r.clone());
    }
    let per_group = by_group.values().map(|rs| accuracy(rs)).collect::<Result<Vec<_>>>()?;
    if per_group.is_empty() {
        return Err(invalid("accuracy needs at least one direction record"));
    }
    Ok(per_group.iter().sum::<f64>() / per_group.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(predicted: Direction) -> TrialRecord {
        TrialRecord {
            trial: 0,
            seed: 1,
            dataset: "d".into(),
            lambda: 1.0,
            outcome: Outcome::Direction { predicted, truth: Direction::XtoY },
            wall_ms: None,
        }
    }

    #[test]
    fn parse_two_columns() {
        let p = parse_pairs("1 2\n3 4", 0, 1).unwrap();
        assert_eq!(p.rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn comment_header_skipped() {
        let p = parse_pairs("# x y\n1,2\n\n3, 4\n", 0, 1).unwrap();
        assert_eq!(p.n(), 2);
        assert_eq!(p.effect(), vec![2.0, 4.0]);
    }

    #[test]
    fn missing_column() {
        assert!(matches!(parse_pairs("1 2\n3 4", 0, 3), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn non_numeric_cell_reports_line() {
        assert!(matches!(parse_pairs("1 2\n3 x", 0, 1), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn ragged_rows() {
        assert!(parse_pairs("1 2 3\n3 4", 0, 1).is_err());
    }

    #[test]
    fn subsample_bounds() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let (xs, _) = subsample(&x, &x, 10, 3).unwrap();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, x);
        assert_eq!(subsample(&x, &x, 1, 3).unwrap().0.len(), 1);
        assert!(subsample(&x, &x, 11, 3).is_err());
    }

    #[test]
    fn overlapping_subsamples() {
        let a = subsample_indices(100, 90, 1).unwrap();
        let b = subsample_indices(100, 90, 2).unwrap();
        assert_ne!(a, b);
        let overlap = a.iter().filter(|i| b.contains(i)).count();
        assert!(overlap >= 80);
    }

    #[test]
    fn accuracy_counts() {
        let all: Vec<_> = (0..4).map(|_| dir(Direction::XtoY)).collect();
        assert_eq!(accuracy(&all).unwrap(), 1.0);
        let half: Vec<_> = (0..50)
            .map(|i| dir(if i % 2 == 0 { Direction::XtoY } else { Direction::YtoX }))
            .collect();
        assert_eq!(accuracy(&half).unwrap(), 0.5);
        let abstain = vec![dir(Direction::XtoY), dir(Direction::XtoY), dir(Direction::NoDecision)];
        assert!((accuracy(&abstain).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn record_line_round_trip() {
        let mut r = dir(Direction::NoDecision);
        r.dataset = "pair 0001".into();
        r.wall_ms = Some(12);
        let back: TrialRecord = r.to_line().parse().unwrap();
        assert_eq!(back.dataset, "pair_0001");
        assert_eq!(back.outcome, r.outcome);
        assert_eq!(back.wall_ms, Some(12));
        let c = TrialRecord { outcome: Outcome::Clustering { ari: 0.123456789 }, ..dir(Direction::XtoY) };
        assert_eq!(c.to_line().parse::<TrialRecord>().unwrap(), c);
    }

    #[test]
    fn grouping() {
        let g = parse_grouping("# id group\np1 a\np2 a\np3 b\n").unwrap();
        let mut recs = vec![dir(Direction::XtoY), dir(Direction::YtoX), dir(Direction::XtoY)];
        for (r, id) in recs.iter_mut().zip(["p1", "p2", "p3"]) {
            r.dataset = id.into();
        }
        // group a: 0.5, group b: 1.0
        assert!((grouped_accuracy(&recs, &g).unwrap() - 0.75).abs() < 1e-15);
    }
}
