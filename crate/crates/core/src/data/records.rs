use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One observation: pedestrian `ped` at world position `(x, y)` in `frame`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawRecord {
    pub frame: i64,
    pub ped: i64,
    pub x: f64,
    pub y: f64,
}

/// Records from one trajectory file, sorted by `(frame, ped)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub records: Vec<RawRecord>,
    /// Seconds between consecutive frames.
    pub frame_interval: f64,
}

impl Recording {
    pub fn new(mut records: Vec<RawRecord>, frame_interval: f64) -> Result<Self> {
        if !(frame_interval > 0.0) {
            return Err(Error::Config(format!(
                "frame interval must be > 0, got {frame_interval}"
            )));
        }
        records.sort_by_key(|r| (r.frame, r.ped));
        if let Some(w) = records
            .windows(2)
            .find(|w| (w[0].frame, w[0].ped) == (w[1].frame, w[1].ped))
        {
            return Err(Error::Data(format!(
                "duplicate record for frame {} pedestrian {}",
                w[0].frame, w[0].ped
            )));
        }
        Ok(Self {
            records,
            frame_interval,
        })
    }
}

/// Parses whitespace-separated `frame ped_id x y` lines.
pub fn parse_records(text: &str, origin: &Path) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut last_frame = i64::MIN;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            msg,
        };
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let frame =
            parse_id(fields[0]).ok_or_else(|| err(format!("bad frame id {:?}", fields[0])))?;
        let ped =
            parse_id(fields[1]).ok_or_else(|| err(format!("bad pedestrian id {:?}", fields[1])))?;
        let x: f64 = fields[2]
            .parse()
            .map_err(|_| err(format!("bad x {:?}", fields[2])))?;
        let y: f64 = fields[3]
            .parse()
            .map_err(|_| err(format!("bad y {:?}", fields[3])))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(err("non-finite coordinate".into()));
        }
        if frame < last_frame {
            return Err(err(format!(
                "frame {frame} after frame {last_frame}; frames must be monotone"
            )));
        }
        last_frame = frame;
        if !seen.insert((frame, ped)) {
            return Err(err(format!(
                "duplicate record for frame {frame} pedestrian {ped}"
            )));
        }
        records.push(RawRecord { frame, ped, x, y });
    }
    Ok(records)
}

// ETH/UCY exports write ids as floats ("10.0").
fn parse_id(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    (f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

/// Loads one trajectory file.
pub fn load_domain(path: &Path, frame_interval: f64) -> Result<Recording> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_records(&text, path)?;
    if records.is_empty() {
        return Err(Error::EmptyDomain(path.display().to_string()));
    }
    Recording::new(records, frame_interval)
}

/// Trajectory files of one split directory, sorted by file name.
pub fn split_files(domain_dir: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let dir = domain_dir.join(split);
    let entries = fs::read_dir(&dir)
        .map_err(|e| Error::Protocol(format!("missing split directory {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let path = entry.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Protocol(format!(
            "split directory {} has no files",
            dir.display()
        )));
    }
    Ok(files)
}

/// Writes records as `frame ped x y` lines.
pub fn write_records(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("{} {} {} {}\n", r.frame, r.ped, r.x, r.y));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
