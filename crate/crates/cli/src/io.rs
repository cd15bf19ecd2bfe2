//! Observation files (CSV or JSON lines) and versioned result tables.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use lie_mef::Observation;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub const OBSERVATIONS_SCHEMA: &str = "# lie-mef observations v1";
pub const OBSERVATION_COLUMNS: [&str; 7] = ["frame", "point_id", "x1", "x2", "depth", "y1", "y2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsFormat {
    Csv,
    JsonLines,
}

impl ObsFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => ObsFormat::JsonLines,
            _ => ObsFormat::Csv,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    frame: usize,
    point_id: usize,
    x1: f64,
    x2: f64,
    depth: f64,
    y1: f64,
    y2: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonPoint {
    x: [f64; 2],
    depth: f64,
    y: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonFrame {
    frame: usize,
    points: Vec<JsonPoint>,
}

/// Frames are numbered from 1; frame `k` pairs camera `k − 1` with camera `k`.
pub fn write_observations<W: Write>(out: W, frames: &[Vec<Observation>], format: ObsFormat) -> Result<()> {
    match format {
        ObsFormat::Csv => {
            let mut out = out;
            writeln!(out, "{OBSERVATIONS_SCHEMA}")?;
            let mut w = csv::Writer::from_writer(out);
            for (i, frame) in frames.iter().enumerate() {
                for (j, o) in frame.iter().enumerate() {
                    w.serialize(CsvRow {
                        frame: i + 1,
                        point_id: j,
                        x1: o.pixel.x,
                        x2: o.pixel.y,
                        depth: o.depth,
                        y1: o.y.x,
                        y2: o.y.y,
                    })?;
                }
            }
            w.flush()?;
        }
        ObsFormat::JsonLines => {
            let mut out = out;
            for (i, frame) in frames.iter().enumerate() {
                let record = JsonFrame {
                    frame: i + 1,
                    points: frame
                        .iter()
                        .map(|o| JsonPoint {
                            x: [o.pixel.x, o.pixel.y],
                            depth: o.depth,
                            y: [o.y.x, o.y.y],
                        })
                        .collect(),
                };
                serde_json::to_writer(&mut out, &record)?;
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

fn check_point(frame: usize, x: [f64; 2], depth: f64, y: [f64; 2]) -> Result<Observation> {
    if x.iter().chain(&y).chain(std::iter::once(&depth)).any(|v| !v.is_finite()) {
        bail!("frame {frame}: non-finite value");
    }
    if !(depth > 0.0) {
        bail!("frame {frame}: depth must be positive, got {depth}");
    }
    Ok(Observation::new(Vector2::from(x), depth, Vector2::from(y)))
}

fn slot(frames: &mut Vec<Vec<Observation>>, frame: usize) -> Result<&mut Vec<Observation>> {
    if frame == 0 {
        bail!("frame numbers start at 1");
    }
    if frames.len() < frame {
        frames.resize_with(frame, Vec::new);
    }
    Ok(&mut frames[frame - 1])
}

/// Reads frames `1..=max frame`; frames without rows come back empty.
pub fn read_observations<R: BufRead>(input: R, format: ObsFormat) -> Result<Vec<Vec<Observation>>> {
    let mut frames: Vec<Vec<Observation>> = Vec::new();
    match format {
        ObsFormat::Csv => {
            let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
            let headers = r.headers()?.clone();
            if headers.iter().collect::<Vec<_>>() != OBSERVATION_COLUMNS {
                bail!("unexpected header {:?}, expected {:?}", headers.iter().collect::<Vec<_>>(), OBSERVATION_COLUMNS);
            }
            for (i, row) in r.deserialize::<CsvRow>().enumerate() {
                let row = row.with_context(|| format!("record {}", i + 1))?;
                let obs = check_point(row.frame, [row.x1, row.x2], row.depth, [row.y1, row.y2])?;
                slot(&mut frames, row.frame)?.push(obs);
            }
        }
        ObsFormat::JsonLines => {
            for (i, line) in input.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: JsonFrame = serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?;
                let frame = slot(&mut frames, record.frame).with_context(|| format!("line {}", i + 1))?;
                for p in record.points {
                    frame.push(check_point(record.frame, p.x, p.depth, p.y)?);
                }
            }
        }
    }
    Ok(frames)
}

pub fn load_observations(path: &Path) -> Result<Vec<Vec<Observation>>> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_observations(std::io::BufReader::new(file), ObsFormat::from_path(path))
        .with_context(|| format!("invalid observation file {}", path.display()))
}

pub fn save_observations(path: &Path, frames: &[Vec<Observation>]) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    write_observations(&mut out, frames, ObsFormat::from_path(path))?;
    out.flush()?;
    Ok(())
}

/// A result table: schema comment lines, a header row and string cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &str, header: Vec<String>) -> Self {
        Table {
            comments: vec![format!("lie-mef {schema}")],
            header,
            rows: Vec::new(),
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for c in &self.comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut comments = Vec::new();
        let mut body = String::new();
        for line in input.lines() {
            let line = line?;
            match line.strip_prefix("# ") {
                Some(c) if body.is_empty() => comments.push(c.to_string()),
                _ => {
                    body.push_str(&line);
                    body.push('\n');
                }
            }
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { comments, header, rows })
    }

    /// Writes to `path`, or to stdout when `path` is `None`.
    pub fn save(&self, path: Option<&Path>) -> Result<()> {
        match path {
            Some(p) => {
                let file = std::fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
                let mut out = std::io::BufWriter::new(file);
                self.write(&mut out)?;
                out.flush()?;
            }
            None => self.write(std::io::stdout().lock())?,
        }
        Ok(())
    }
}

/// Full-precision, round-trippable float formatting.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}
