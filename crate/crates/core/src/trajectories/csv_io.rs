//! CSV ingestion and export: `traj_id,t,x_1..x_d,action,reward`, one row per
//! step, sorted by `(traj_id, t)`, `t` starting at 1.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, Trajectory, DEFAULT_INITIAL_ACTION};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// Declared action labels, shared by every step. Inferred from the data
    /// (sorted, deduplicated) when absent.
    pub action_set: Option<Vec<i64>>,
    pub initial_action: i64,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            action_set: None,
            initial_action: DEFAULT_INITIAL_ACTION,
        }
    }
}

struct RawTrajectory {
    first_line: u64,
    covariates: Vec<Vec<f64>>,
    labels: Vec<(i64, u64)>,
    rewards: Vec<f64>,
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<T> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| parse_err(line, format!("missing column `{name}`")))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(line, format!("cannot parse `{name}` from {raw:?}")))
}

pub fn parse_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, format!("cannot read header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 5 {
        return Err(parse_err(1, "header must be traj_id,t,x_1..x_d,action,reward with d >= 1"));
    }
    let d = names.len() - 4;
    let mut expected = vec!["traj_id".to_string(), "t".to_string()];
    expected.extend((1..=d).map(|j| format!("x_{j}")));
    expected.push("action".into());
    expected.push("reward".into());
    if names.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(parse_err(1, format!("expected header {}, found {}", expected.join(","), names.join(","))));
    }

    let mut raw: Vec<RawTrajectory> = Vec::new();
    let mut current_id: Option<u64> = None;
    let mut line = 1;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(line + 1, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        line = rec.position().map_or(line + 1, |p| p.line());
        if rec.len() != names.len() {
            return Err(parse_err(line, format!("{} fields, expected {}", rec.len(), names.len())));
        }
        let id: u64 = field(&rec, 0, "traj_id", line)?;
        let t: usize = field(&rec, 1, "t", line)?;
        let x = (0..d)
            .map(|j| field::<f64>(&rec, 2 + j, &expected[2 + j], line))
            .collect::<Result<Vec<_>>>()?;
        let label: i64 = field(&rec, 2 + d, "action", line)?;
        let reward: f64 = field(&rec, 3 + d, "reward", line)?;
        if x.iter().any(|v| !v.is_finite()) || !reward.is_finite() {
            return Err(parse_err(line, "non-finite value"));
        }

        match current_id {
            Some(prev) if prev == id => {
                let tr = raw.last_mut().expect("current trajectory");
                if t != tr.rewards.len() + 1 {
                    return Err(parse_err(
                        line,
                        format!("trajectory {id}: expected t = {}, found {t}", tr.rewards.len() + 1),
                    ));
                }
            }
            Some(prev) if id < prev => {
                return Err(parse_err(line, format!("rows not sorted: traj_id {id} after {prev}")));
            }
            _ => {
                if t != 1 {
                    return Err(parse_err(line, format!("trajectory {id} must start at t = 1, found {t}")));
                }
                raw.push(RawTrajectory {
                    first_line: line,
                    covariates: Vec::new(),
                    labels: Vec::new(),
                    rewards: Vec::new(),
                });
                current_id = Some(id);
            }
        }
        let tr = raw.last_mut().expect("current trajectory");
        tr.covariates.push(x);
        tr.labels.push((label, line));
        tr.rewards.push(reward);
    }

    let first = raw.first().ok_or_else(|| parse_err(line, "no data rows"))?;
    let horizon = first.rewards.len();
    for tr in &raw {
        if tr.rewards.len() != horizon {
            return Err(parse_err(
                tr.first_line,
                format!("trajectory has {} steps, expected horizon {horizon}", tr.rewards.len()),
            ));
        }
    }

    let action_set = match &opts.action_set {
        Some(set) => set.clone(),
        None => {
            let mut set: Vec<i64> = raw.iter().flat_map(|tr| tr.labels.iter().map(|(l, _)| *l)).collect();
            set.sort_unstable();
            set.dedup();
            set
        }
    };

    let trajectories = raw
        .into_iter()
        .map(|tr| {
            let actions = tr
                .labels
                .iter()
                .map(|&(label, line)| {
                    action_set
                        .iter()
                        .position(|&l| l == label)
                        .ok_or_else(|| parse_err(line, format!("action {label} not in declared set {action_set:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Trajectory::new(tr.covariates, actions, tr.rewards))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset::new(trajectories, horizon, vec![action_set; horizon], d)?.with_initial_action(opts.initial_action))
}

pub fn read_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, opts)
}

pub fn write_csv<W: Write>(ds: &Dataset, out: W) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    write!(out, "traj_id,t")?;
    for j in 1..=ds.covariate_dim() {
        write!(out, ",x_{j}")?;
    }
    writeln!(out, ",action,reward")?;
    for (i, tr) in ds.trajectories().iter().enumerate() {
        for t in 0..tr.horizon() {
            write!(out, "{i},{}", t + 1)?;
            for v in &tr.covariates[t] {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{},{}", ds.action_sets()[t][tr.actions[t]], tr.rewards[t])?;
        }
    }
    out.flush()
}

pub fn write_csv_file(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, file).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "traj_id,t,x_1,x_2,action,reward\n\
        0,1,0.5,-1,1,2.5\n\
        0,2,1.5,0,-1,-3\n\
        1,1,0,0,-1,0.25\n\
        1,2,2,1,1,7\n";

    #[test]
    fn parses_and_maps_labels() {
        let ds = parse_csv(GOOD.as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.horizon(), 2);
        assert_eq!(ds.covariate_dim(), 2);
        assert_eq!(ds.action_sets()[0], vec![-1, 1]);
        assert_eq!(ds.trajectories()[0].actions, vec![1, 0]);
        assert_eq!(ds.trajectories()[1].covariates[1], vec![2.0, 1.0]);
    }

    #[test]
    fn write_then_parse_is_identity() {
        let ds = parse_csv(GOOD.as_bytes(), &CsvOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = parse_csv(buf.as_slice(), &CsvOptions::default()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn reports_line_of_bad_number() {
        let text = GOOD.replace("1,2,2,1,1,7", "1,2,2,oops,1,7");
        match parse_csv(text.as_bytes(), &CsvOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unsorted_and_gaps() {
        let unsorted = "traj_id,t,x_1,action,reward\n1,1,0,1,0\n0,1,0,1,0\n";
        assert!(matches!(
            parse_csv(unsorted.as_bytes(), &CsvOptions::default()),
            Err(Error::Parse { line: 3, .. })
        ));
        let gap = "traj_id,t,x_1,action,reward\n0,1,0,1,0\n0,3,0,1,0\n";
        assert!(matches!(
            parse_csv(gap.as_bytes(), &CsvOptions::default()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn rejects_ragged_horizons_and_bad_header() {
        let ragged = "traj_id,t,x_1,action,reward\n0,1,0,1,0\n0,2,0,1,0\n1,1,0,1,0\n";
        assert!(matches!(
            parse_csv(ragged.as_bytes(), &CsvOptions::default()),
            Err(Error::Parse { line: 4, .. })
        ));
        let header = "id,t,x_1,action,reward\n0,1,0,1,0\n";
        assert!(matches!(
            parse_csv(header.as_bytes(), &CsvOptions::default()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn declared_set_rejects_unknown_label() {
        let opts = CsvOptions {
            action_set: Some(vec![-1, 1]),
            ..CsvOptions::default()
        };
        let text = "traj_id,t,x_1,action,reward\n0,1,0,1,0\n1,1,0,3,0\n";
        assert!(matches!(parse_csv(text.as_bytes(), &opts), Err(Error::Parse { line: 3, .. })));
    }
}
