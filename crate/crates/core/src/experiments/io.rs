//! File formats: dataset CSV, trajectory CSV, and margin-certificate files.
//!
//! All files are plain text with `#`-prefixed metadata lines and no
//! timestamps, so identical inputs produce byte-identical outputs. Floats
//! are written with Rust's shortest round-trip formatting, which makes the
//! dataset save/load cycle lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::MarginCertificate;
use crate::linalg::vec_norm;
use crate::model::Dataset;

use super::TrajectoryRecord;

#[derive(Debug, Error)]
pub enum FileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> FileError {
    FileError::Parse {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NaN".to_string(),
    }
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64, FileError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("not a number: {s:?}")))
}

fn parse_opt(path: &Path, line: usize, s: &str) -> Result<Option<f64>, FileError> {
    let v = parse_f64(path, line, s)?;
    Ok(if v.is_nan() { None } else { Some(v) })
}

/// Writes `y,x1,...,xd` rows; labels as bare integers, coordinates with
/// round-trip float formatting.
pub fn save_dataset(path: &Path, data: &Dataset) -> Result<(), FileError> {
    let mut out = BufWriter::new(File::create(path)?);
    let header: Vec<String> = std::iter::once("y".to_string())
        .chain((1..=data.dim()).map(|j| format!("x{j}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.len() {
        let mut row = vec![format!("{}", data.label(i) as i64)];
        row.extend(data.point(i).iter().map(|c| format!("{c}")));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Loads and validates a dataset CSV. Every violation is reported with its
/// 1-based line number: malformed numbers, labels outside {-1, +1}, points
/// outside the unit ball, zero points.
pub fn load_dataset(path: &Path) -> Result<Dataset, FileError> {
    let reader = BufReader::new(File::open(path)?);
    let mut dim: Option<usize> = None;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut header_seen = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if !header_seen {
            if fields.first() != Some(&"y") || fields.len() < 2 {
                return Err(parse_err(
                    path,
                    line_no,
                    "header must be y,x1,...,xd".to_string(),
                ));
            }
            for (j, f) in fields[1..].iter().enumerate() {
                if *f != format!("x{}", j + 1) {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("unexpected header column {f:?}"),
                    ));
                }
            }
            dim = Some(fields.len() - 1);
            header_seen = true;
            continue;
        }
        let d = dim.unwrap();
        if fields.len() != d + 1 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {} columns, found {}", d + 1, fields.len()),
            ));
        }
        let y = parse_f64(path, line_no, fields[0])?;
        if y != 1.0 && y != -1.0 {
            return Err(parse_err(
                path,
                line_no,
                format!("label {y} is not -1 or 1"),
            ));
        }
        let x: Vec<f64> = fields[1..]
            .iter()
            .map(|f| parse_f64(path, line_no, f))
            .collect::<Result<_, _>>()?;
        if x.iter().any(|c| !c.is_finite()) {
            return Err(parse_err(path, line_no, "non-finite coordinate"));
        }
        let norm = vec_norm(&x);
        if norm > 1.0 + 1e-12 {
            return Err(parse_err(
                path,
                line_no,
                format!("point norm {norm} exceeds 1"),
            ));
        }
        if norm == 0.0 {
            return Err(parse_err(path, line_no, "zero point"));
        }
        points.push(x);
        labels.push(y);
    }
    if !header_seen {
        return Err(parse_err(path, 1, "empty file"));
    }
    if points.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    Dataset::new(points, labels).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// Streaming trajectory writer. Metadata lines (prefixed `#`) come first,
/// then the header row; each record is flushed as written so partial runs
/// survive on disk.
pub struct TrajectoryWriter {
    out: BufWriter<File>,
    depth: usize,
}

pub fn trajectory_header(depth: usize) -> String {
    let mut cols = vec![
        "step".to_string(),
        "time".to_string(),
        "risk".to_string(),
        "eta".to_string(),
        "radius".to_string(),
        "budget".to_string(),
        "conservation_residual".to_string(),
    ];
    for k in 1..=depth {
        cols.push(format!("fro_{k}"));
        cols.push(format!("spec_{k}"));
        cols.push(format!("ratio_{k}"));
    }
    for k in 1..depth {
        cols.push(format!("adj_{k}"));
    }
    cols.extend(
        [
            "cos_v1",
            "cos_ubar",
            "cos_v1_ubar",
            "margin_obj",
            "perp_mass",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    cols.join(",")
}

impl TrajectoryWriter {
    pub fn create(path: &Path, depth: usize, meta: &[(String, String)]) -> Result<Self, FileError> {
        let mut out = BufWriter::new(File::create(path)?);
        for (k, v) in meta {
            writeln!(out, "# {k} = {v}")?;
        }
        writeln!(out, "{}", trajectory_header(depth))?;
        out.flush()?;
        Ok(Self { out, depth })
    }

    pub fn write(&mut self, r: &TrajectoryRecord) -> Result<(), FileError> {
        debug_assert_eq!(r.fro.len(), self.depth);
        let mut cols = vec![
            format!("{}", r.step),
            format!("{}", r.time),
            format!("{}", r.risk),
            fmt_opt(r.eta),
            fmt_opt(r.radius),
            fmt_opt(r.budget),
            fmt_opt(r.conservation_residual),
        ];
        for k in 0..self.depth {
            cols.push(format!("{}", r.fro[k]));
            cols.push(format!("{}", r.spec[k]));
            cols.push(fmt_opt(r.ratio[k]));
        }
        for a in &r.adjacent {
            cols.push(fmt_opt(*a));
        }
        cols.push(fmt_opt(r.cos_v1));
        cols.push(fmt_opt(r.cos_ubar));
        cols.push(fmt_opt(r.cos_v1_ubar));
        cols.push(fmt_opt(r.margin_obj));
        cols.push(fmt_opt(r.perp_mass));
        writeln!(self.out, "{}", cols.join(","))?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parsed trajectory file.
pub struct TrajectoryTable {
    pub depth: usize,
    pub meta: Vec<(String, String)>,
    pub rows: Vec<TrajectoryRecord>,
}

pub fn load_trajectory(path: &Path) -> Result<TrajectoryTable, FileError> {
    let reader = BufReader::new(File::open(path)?);
    let mut meta = Vec::new();
    let mut depth: Option<usize> = None;
    let mut rows = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        if depth.is_none() {
            // Header row: count fro_k columns to recover the depth.
            let cols: Vec<&str> = trimmed.split(',').collect();
            let d = cols.iter().filter(|c| c.starts_with("fro_")).count();
            if d == 0 {
                return Err(parse_err(path, line_no, "header has no fro_k columns"));
            }
            if trimmed != trajectory_header(d) {
                return Err(parse_err(path, line_no, "unrecognized trajectory header"));
            }
            depth = Some(d);
            continue;
        }
        let d = depth.unwrap();
        let fields: Vec<&str> = trimmed.split(',').collect();
        let expected = 7 + 3 * d + (d - 1) + 5;
        if fields.len() != expected {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {expected} columns, found {}", fields.len()),
            ));
        }
        let step = fields[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(path, line_no, format!("bad step {:?}", fields[0])))?;
        let mut fro = Vec::with_capacity(d);
        let mut spec = Vec::with_capacity(d);
        let mut ratio = Vec::with_capacity(d);
        for k in 0..d {
            fro.push(parse_f64(path, line_no, fields[7 + 3 * k])?);
            spec.push(parse_f64(path, line_no, fields[8 + 3 * k])?);
            ratio.push(parse_opt(path, line_no, fields[9 + 3 * k])?);
        }
        let base = 7 + 3 * d;
        let mut adjacent = Vec::with_capacity(d - 1);
        for k in 0..(d - 1) {
            adjacent.push(parse_opt(path, line_no, fields[base + k])?);
        }
        let tail = base + d - 1;
        rows.push(TrajectoryRecord {
            step,
            time: parse_f64(path, line_no, fields[1])?,
            risk: parse_f64(path, line_no, fields[2])?,
            eta: parse_opt(path, line_no, fields[3])?,
            radius: parse_opt(path, line_no, fields[4])?,
            budget: parse_opt(path, line_no, fields[5])?,
            conservation_residual: parse_opt(path, line_no, fields[6])?,
            fro,
            spec,
            ratio,
            adjacent,
            cos_v1: parse_opt(path, line_no, fields[tail])?,
            cos_ubar: parse_opt(path, line_no, fields[tail + 1])?,
            cos_v1_ubar: parse_opt(path, line_no, fields[tail + 2])?,
            margin_obj: parse_opt(path, line_no, fields[tail + 3])?,
            perp_mass: parse_opt(path, line_no, fields[tail + 4])?,
        });
    }
    match depth {
        Some(depth) => Ok(TrajectoryTable { depth, meta, rows }),
        None => Err(parse_err(path, 1, "no trajectory header found")),
    }
}

/// Writes a margin certificate as flat `key = value` lines.
pub fn save_certificate(path: &Path, cert: &MarginCertificate) -> Result<(), FileError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# margin certificate")?;
    writeln!(out, "gamma = {}", cert.gamma)?;
    let u: Vec<String> = cert.u_bar.iter().map(|x| format!("{x}")).collect();
    writeln!(out, "u_bar = {}", u.join(","))?;
    let s: Vec<String> = cert.support.iter().map(|i| format!("{i}")).collect();
    writeln!(out, "support = {}", s.join(","))?;
    let a: Vec<String> = cert.duals.iter().map(|x| format!("{x}")).collect();
    writeln!(out, "duals = {}", a.join(","))?;
    if let Some(spread) = cert.spread {
        writeln!(out, "spread = {spread}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_certificate(path: &Path) -> Result<MarginCertificate, FileError> {
    let reader = BufReader::new(File::open(path)?);
    let mut gamma = None;
    let mut u_bar = None;
    let mut support = None;
    let mut duals = None;
    let mut spread = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| parse_err(path, line_no, "expected key = value"))?;
        let value = value.trim();
        match key.trim() {
            "gamma" => gamma = Some(parse_f64(path, line_no, value)?),
            "u_bar" => {
                u_bar = Some(
                    value
                        .split(',')
                        .map(|f| parse_f64(path, line_no, f))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
            "support" => {
                support = Some(
                    value
                        .split(',')
                        .filter(|f| !f.trim().is_empty())
                        .map(|f| {
                            f.trim()
                                .parse::<usize>()
                                .map_err(|_| parse_err(path, line_no, format!("bad index {f:?}")))
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
            "duals" => {
                duals = Some(
                    value
                        .split(',')
                        .filter(|f| !f.trim().is_empty())
                        .map(|f| parse_f64(path, line_no, f))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
            "spread" => spread = Some(parse_f64(path, line_no, value)?),
            other => {
                return Err(parse_err(path, line_no, format!("unknown key {other:?}")));
            }
        }
    }
    let missing = |k: &str| parse_err(path, 0, format!("missing key {k:?}"));
    Ok(MarginCertificate {
        gamma: gamma.ok_or_else(|| missing("gamma"))?,
        u_bar: u_bar.ok_or_else(|| missing("u_bar"))?,
        support: support.ok_or_else(|| missing("support"))?,
        duals: duals.ok_or_else(|| missing("duals"))?,
        spread,
    })
}
