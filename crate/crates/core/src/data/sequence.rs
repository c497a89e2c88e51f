use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::data::records::{load_domain, split_files, RawRecord, Recording};
use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Window lengths and stride used to cut recordings into samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowConfig {
    pub obs_len: usize,
    pub pred_len: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            obs_len: 8,
            pred_len: 12,
            stride: 1,
        }
    }
}

impl WindowConfig {
    pub fn total(&self) -> usize {
        self.obs_len + self.pred_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_len < 1 || self.pred_len < 1 {
            return Err(Error::Config(format!(
                "obs_len and pred_len must be >= 1 (got {} and {})",
                self.obs_len, self.pred_len
            )));
        }
        if self.stride < 1 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// One prediction instance: `N` pedestrians tracked over `obs_len + pred_len`
/// frames.
///
/// Coordinates are indexed `[pedestrian][frame]`. `relative` is empty until
/// [`SequenceSample::decentralize`] runs.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub ped_ids: Vec<i64>,
    pub absolute: Vec<Vec<Point>>,
    pub relative: Vec<Vec<Point>>,
    pub offset: Point,
    pub obs_len: usize,
    pub pred_len: usize,
}

/// The observed part of a sample, the only view of target-domain data the
/// trainer ever receives.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedSample {
    pub ped_ids: Vec<i64>,
    /// `[pedestrian][frame]` for the `obs_len` observed frames.
    pub relative: Vec<Vec<Point>>,
    pub offset: Point,
}

impl ObservedSample {
    pub fn num_peds(&self) -> usize {
        self.ped_ids.len()
    }

    pub fn obs_len(&self) -> usize {
        self.relative.first().map_or(0, Vec::len)
    }

    /// Relative positions of every pedestrian at observed frame `t`.
    pub fn frame(&self, t: usize) -> Vec<Point> {
        self.relative.iter().map(|track| track[t]).collect()
    }
}

fn mean_position(tracks: &[Vec<Point>], frame: usize) -> Point {
    let n = tracks.len() as f64;
    let (sx, sy) = tracks.iter().fold((0.0, 0.0), |(sx, sy), t| {
        (sx + t[frame][0], sy + t[frame][1])
    });
    [sx / n, sy / n]
}

fn shift(tracks: &[Vec<Point>], by: Point, sign: f64) -> Vec<Vec<Point>> {
    tracks
        .iter()
        .map(|t| {
            t.iter()
                .map(|p| [p[0] + sign * by[0], p[1] + sign * by[1]])
                .collect()
        })
        .collect()
}

impl SequenceSample {
    pub fn num_peds(&self) -> usize {
        self.ped_ids.len()
    }

    pub fn is_decentralized(&self) -> bool {
        !self.relative.is_empty()
    }

    /// Subtracts the mean last-observed position from every coordinate.
    pub fn decentralize(mut self) -> Self {
        self.offset = mean_position(&self.absolute, self.obs_len - 1);
        self.relative = shift(&self.absolute, self.offset, -1.0);
        self
    }

    /// Observed frames only, decentralized from the observed positions.
    pub fn observed(&self) -> ObservedSample {
        let obs: Vec<Vec<Point>> = self
            .absolute
            .iter()
            .map(|t| t[..self.obs_len].to_vec())
            .collect();
        let offset = mean_position(&obs, self.obs_len - 1);
        ObservedSample {
            ped_ids: self.ped_ids.clone(),
            relative: shift(&obs, offset, -1.0),
            offset,
        }
    }

    /// Relative future positions `[pedestrian][step]`.
    pub fn future_relative(&self) -> Vec<Vec<Point>> {
        self.relative
            .iter()
            .map(|t| t[self.obs_len..].to_vec())
            .collect()
    }

    /// World-frame future positions `[pedestrian][step]`.
    pub fn future_absolute(&self) -> Vec<Vec<Point>> {
        self.absolute
            .iter()
            .map(|t| t[self.obs_len..].to_vec())
            .collect()
    }
}

/// Maps relative coordinates back to the world frame.
pub fn recentralize(relative: &[Vec<Point>], offset: Point) -> Vec<Vec<Point>> {
    shift(relative, offset, 1.0)
}

/// Cuts a recording into windows of `obs_len + pred_len` consecutive frame
/// ids, keeping only pedestrians present in every frame of the window.
pub fn build_sequences(records: &[RawRecord], window: WindowConfig) -> Result<Vec<SequenceSample>> {
    window.validate()?;
    let mut by_frame: BTreeMap<i64, HashMap<i64, Point>> = BTreeMap::new();
    for r in records {
        by_frame
            .entry(r.frame)
            .or_default()
            .insert(r.ped, [r.x, r.y]);
    }
    let frames: Vec<&HashMap<i64, Point>> = by_frame.values().collect();
    let total = window.total();
    let mut samples = Vec::new();
    if frames.len() < total {
        return Ok(samples);
    }
    for start in (0..=frames.len() - total).step_by(window.stride) {
        let span = &frames[start..start + total];
        let mut peds: Vec<i64> = span[0]
            .keys()
            .copied()
            .filter(|p| span.iter().all(|f| f.contains_key(p)))
            .collect();
        if peds.is_empty() {
            continue;
        }
        peds.sort_unstable();
        let absolute = peds
            .iter()
            .map(|p| span.iter().map(|f| f[p]).collect())
            .collect();
        samples.push(SequenceSample {
            ped_ids: peds,
            absolute,
            relative: Vec::new(),
            offset: [0.0, 0.0],
            obs_len: window.obs_len,
            pred_len: window.pred_len,
        });
    }
    Ok(samples)
}

/// Loads every file of `domain_dir/split`, windows each file separately and
/// decentralizes the samples.
pub fn load_split(
    domain_dir: &Path,
    split: &str,
    frame_interval: f64,
    window: WindowConfig,
) -> Result<Vec<SequenceSample>> {
    let mut out = Vec::new();
    for file in split_files(domain_dir, split)? {
        let rec = load_domain(&file, frame_interval)?;
        out.extend(samples_from_recording(&rec, window)?);
    }
    Ok(out)
}

pub fn samples_from_recording(
    rec: &Recording,
    window: WindowConfig,
) -> Result<Vec<SequenceSample>> {
    Ok(build_sequences(&rec.records, window)?
        .into_iter()
        .map(SequenceSample::decentralize)
        .collect())
}
