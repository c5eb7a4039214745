use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::grid::{GridBox, GridField, Tag};
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Writes the text grid format: a short header, then one shortest round-trip decimal per cell.
pub fn write_field<T: Real, W: Write>(field: &GridField<T>, mut out: W) -> Result<()> {
    let g = field.grid();
    let join = |v: &[T]| v.iter().map(|x| format!("{:?}", to_f64(*x))).collect::<Vec<_>>().join(" ");
    let mut head = String::new();
    let _ = writeln!(head, "dim {}", g.dim());
    let _ = writeln!(head, "origin {}", join(g.origin()));
    let _ = writeln!(head, "lengths {}", join(g.lengths()));
    let _ = writeln!(
        head,
        "resolution {}",
        g.resolution().iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(head, "tag {}", field.tag().name());
    let _ = writeln!(head, "extension {:?}", to_f64(field.extension()));
    let _ = writeln!(head, "values");
    out.write_all(head.as_bytes())?;
    let mut body = String::with_capacity(field.values().len() * 20);
    for v in field.values() {
        let _ = writeln!(body, "{:?}", to_f64(*v));
    }
    out.write_all(body.as_bytes())?;
    Ok(())
}

pub fn read_field<T: Real, R: BufRead>(input: R) -> Result<GridField<T>> {
    let mut lines = input.lines().enumerate();
    let mut next = |key: &str| -> Result<(usize, Vec<String>)> {
        let (i, line) = lines.next().ok_or(Error::Parse { line: 0, message: format!("missing `{key}`") })?;
        let line = line?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Parse { line: i + 1, message: format!("expected `{key}`") });
        }
        Ok((i + 1, parts.map(str::to_string).collect()))
    };
    let num = |line: usize, s: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|e| Error::Parse { line, message: e.to_string() })
    };
    let (l, dim) = next("dim")?;
    let dim: usize = dim
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or(Error::Parse { line: l, message: "bad dimension".into() })?;
    let (l, o) = next("origin")?;
    let origin: Vec<T> = o.iter().map(|s| num(l, s).map(lit)).collect::<Result<_>>()?;
    let (l, le) = next("lengths")?;
    let lengths: Vec<T> = le.iter().map(|s| num(l, s).map(lit)).collect::<Result<_>>()?;
    let (l, r) = next("resolution")?;
    let resolution: Vec<usize> = r
        .iter()
        .map(|s| s.parse().map_err(|_| Error::Parse { line: l, message: "bad resolution".into() }))
        .collect::<Result<_>>()?;
    let (l, t) = next("tag")?;
    let tag = t.first().and_then(|s| Tag::parse(s)).ok_or(Error::Parse { line: l, message: "bad tag".into() })?;
    let (l, e) = next("extension")?;
    let extension: T = lit(num(l, e.first().map(String::as_str).unwrap_or(""))?);
    next("values")?;
    if origin.len() != dim {
        return Err(Error::Parse { line: 2, message: "origin does not match dimension".into() });
    }
    let grid = GridBox::new(&origin, &lengths, &resolution)?;
    let mut values = Vec::with_capacity(grid.len());
    for (i, line) in lines {
        let line = line?;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        values.push(lit(num(i + 1, s)?));
    }
    GridField::new(grid, values, tag, extension)
}
