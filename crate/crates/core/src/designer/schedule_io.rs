//! Plain-text gain schedules.
//!
//! ```text
//! strategy S4
//! grouping - 0 - 0 1 2 ...
//! gain 0 4 4
//! 1.2345678901234567e-1 ...
//! ...
//! ```
//!
//! `-` marks the zero gain. Gains are written row-major with 17 significant
//! digits, which round-trips every `f64` exactly.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::{GainSchedule, Strategy};

pub fn write_schedule(schedule: &GainSchedule) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "strategy {}", schedule.strategy);
    out.push_str("grouping");
    for g in &schedule.grouping {
        match g {
            Some(g) => {
                let _ = write!(out, " {g}");
            }
            None => out.push_str(" -"),
        }
    }
    out.push('\n');
    for (k, gain) in schedule.gains.iter().enumerate() {
        let _ = writeln!(out, "gain {k} {} {}", gain.nrows(), gain.ncols());
        for r in 0..gain.nrows() {
            let row: Vec<String> = (0..gain.ncols()).map(|c| format!("{:.16e}", gain[(r, c)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Read a bare grouping: a `grouping` line as in a schedule file. Other
/// lines are ignored, so a full schedule file is accepted as well.
pub fn read_grouping(text: &str, path: &str) -> Result<Vec<Option<usize>>> {
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        if fields.next() == Some("grouping") {
            return fields
                .map(|f| match f {
                    "-" => Ok(None),
                    n => n.parse::<usize>().map(Some).map_err(|_| Error::Parse {
                        path: path.to_string(),
                        message: format!("line {}: bad group id `{n}`", i + 1),
                    }),
                })
                .collect();
        }
    }
    Err(Error::Parse {
        path: path.to_string(),
        message: "no `grouping` line".into(),
    })
}

pub fn read_schedule(text: &str, path: &str) -> Result<GainSchedule> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_string(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (ln, first) = lines.next().ok_or_else(|| err(0, "empty schedule".into()))?;
    let strategy: Strategy = first
        .strip_prefix("strategy ")
        .ok_or_else(|| err(ln, "expected `strategy <tag>`".into()))?
        .parse()
        .map_err(|e: Error| err(ln, e.to_string()))?;

    let (ln, second) = lines.next().ok_or_else(|| err(ln, "missing grouping".into()))?;
    let mut fields = second.split_whitespace();
    if fields.next() != Some("grouping") {
        return Err(err(ln, "expected `grouping ...`".into()));
    }
    let grouping = fields
        .map(|f| match f {
            "-" => Ok(None),
            n => n
                .parse::<usize>()
                .map(Some)
                .map_err(|_| err(ln, format!("bad group id `{n}`"))),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut gains = Vec::new();
    while let Some((ln, header)) = lines.next() {
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (k, rows, cols) = match parts.as_slice() {
            ["gain", k, r, c] => {
                let parse = |s: &str| s.parse::<usize>().map_err(|_| err(ln, format!("bad integer `{s}`")));
                (parse(k)?, parse(r)?, parse(c)?)
            }
            _ => return Err(err(ln, "expected `gain <k> <rows> <cols>`".into())),
        };
        if k != gains.len() {
            return Err(err(ln, format!("gain {k} out of order, expected {}", gains.len())));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, row) = lines.next().ok_or_else(|| err(ln, "truncated gain matrix".into()))?;
            let before = values.len();
            for v in row.split_whitespace() {
                values.push(v.parse::<f64>().map_err(|_| err(ln, format!("bad number `{v}`")))?);
            }
            if values.len() - before != cols {
                return Err(err(ln, format!("expected {cols} entries")));
            }
        }
        gains.push(DMatrix::from_row_slice(rows, cols, &values));
    }
    if let Some(g) = grouping.iter().flatten().find(|&&g| g >= gains.len()) {
        return Err(err(0, format!("group {g} has no gain matrix")));
    }
    Ok(GainSchedule {
        strategy,
        grouping,
        gains,
    })
}
