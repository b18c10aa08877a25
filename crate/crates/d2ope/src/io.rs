//! Dataset files: CSV with header `traj,t,state,action,reward,next_state`,
//! rows sorted by `(traj, t)`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use d2ope_core::{Dataset, Transition};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: [&str; 6] = ["traj", "t", "state", "action", "reward", "next_state"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    traj: usize,
    t: usize,
    state: usize,
    action: usize,
    reward: f64,
    next_state: usize,
}

/// Expected number of trajectories and horizon, when known in advance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Shape {
    pub n: Option<usize>,
    pub horizon: Option<usize>,
}

pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in data.tuples() {
        w.serialize(Row {
            traj: t.traj,
            t: t.t,
            state: t.state,
            action: t.action,
            reward: t.reward,
            next_state: t.next_state,
        })
        .map_err(|e| Error::Output(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Output(e.to_string()))
}

pub fn write_dataset_file(data: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(data, file)
}

pub fn read_dataset_file(path: &Path, shape: Shape) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, shape)
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses and validates a dataset. The horizon is taken from `shape` or, if
/// absent, from the length of the first trajectory.
pub fn read_dataset<R: Read>(input: R, shape: Shape) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|e| parse_error(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(parse_error(1, format!("expected header {}", HEADER.join(","))));
    }
    let mut rows: Vec<(u64, Row)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&header))
            .map_err(|e| parse_error(line, format!("malformed row: {e}")))?;
        if !row.reward.is_finite() {
            return Err(parse_error(line, "reward is not finite"));
        }
        rows.push((line, row));
    }
    let last_line = rows.last().map_or(1, |r| r.0);
    if rows.is_empty() {
        return Err(parse_error(1, "dataset has no rows"));
    }

    let horizon = match shape.horizon {
        Some(h) => h,
        None => rows.iter().take_while(|(_, r)| r.traj == rows[0].1.traj).count(),
    };
    if horizon == 0 {
        return Err(parse_error(1, "horizon must be positive"));
    }
    let mut tuples = Vec::with_capacity(rows.len());
    for (i, (line, row)) in rows.iter().enumerate() {
        let (traj, t) = (i / horizon, i % horizon);
        if row.t >= horizon {
            return Err(parse_error(*line, format!("t = {} is outside 0..{horizon}", row.t)));
        }
        if row.traj != traj || row.t != t {
            return Err(parse_error(
                *line,
                format!("expected (traj, t) = ({traj}, {t}), found ({}, {}); missing or unsorted tuples", row.traj, row.t),
            ));
        }
        if t > 0 {
            let prev = &rows[i - 1].1;
            if prev.next_state != row.state {
                return Err(parse_error(
                    *line,
                    format!("state {} does not continue next_state {} of the previous row", row.state, prev.next_state),
                ));
            }
        }
        tuples.push(Transition {
            traj: row.traj,
            t: row.t,
            state: row.state,
            action: row.action,
            reward: row.reward,
            next_state: row.next_state,
        });
    }
    if tuples.len() % horizon != 0 {
        return Err(parse_error(
            last_line,
            format!("trajectory {} ends after {} of {horizon} steps", tuples.len() / horizon, tuples.len() % horizon),
        ));
    }
    let n = tuples.len() / horizon;
    if let Some(expected) = shape.n {
        if expected != n {
            return Err(parse_error(
                last_line,
                format!("found {} rows, expected n * T = {}", tuples.len(), expected * horizon),
            ));
        }
    }
    Dataset::new(n, horizon, tuples).map_err(|e| parse_error(last_line, e.to_string()))
}
