//! Calibration, zero-origin normalization and fixed-length resampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensor_data::{CalibrationRecord, Dataset, Label, Sequence};

/// Default number of resampled time steps.
pub const DEFAULT_FEATURES: usize = 100;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("calibration for subject {calibration:?} applied to sequence of subject {sequence:?}")]
    SubjectMismatch { sequence: String, calibration: String },
    #[error("no calibration record for subject {0:?}")]
    MissingCalibration(String),
    #[error("need at least 2 distinct timestamps, found {0}")]
    TooFewTimestamps(usize),
    #[error("resample length must be at least 2, got {0}")]
    BadLength(usize),
    #[error("sequence {id}: {source}")]
    InSequence {
        id: String,
        #[source]
        source: Box<PreprocessError>,
    },
    #[error("flattened length {len} is not a multiple of 3")]
    BadFlatLength { len: usize },
    #[error("resampled csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A sequence resampled onto `N` evenly spaced time steps. Rows are
/// `(yaw, pitch, roll)` in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampledSequence {
    pub values: Vec<[f64; 3]>,
    pub label: Label,
    pub subject_id: String,
    /// Provenance; augmented copies carry `<source>#aug<k>`.
    pub sequence_id: String,
}

impl ResampledSequence {
    pub fn n_features(&self) -> usize {
        self.values.len()
    }

    /// Id of the recorded sequence this row derives from.
    pub fn source_id(&self) -> &str {
        match self.sequence_id.find("#aug") {
            Some(i) => &self.sequence_id[..i],
            None => &self.sequence_id,
        }
    }

    pub fn is_augmented(&self) -> bool {
        self.sequence_id.contains("#aug")
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[c]).collect()
    }

    /// Channel-major copy: all yaw values, then pitch, then roll.
    pub fn channel_major(&self) -> Vec<f64> {
        (0..3).flat_map(|c| self.values.iter().map(move |r| r[c])).collect()
    }
}

/// Subtracts the subject's calibration means from every rotation.
pub fn calibrate(seq: &Sequence, cal: &CalibrationRecord) -> Result<Sequence, PreprocessError> {
    if seq.subject_id != cal.subject_id {
        return Err(PreprocessError::SubjectMismatch {
            sequence: seq.subject_id.clone(),
            calibration: cal.subject_id.clone(),
        });
    }
    let m = cal.means();
    let mut out = seq.clone();
    for f in &mut out.frames {
        let r = f.rotation();
        f.set_rotation([r[0] - m[0], r[1] - m[1], r[2] - m[2]]);
    }
    Ok(out)
}

/// Subtracts frame 0's rotation from every frame.
pub fn zero_origin(seq: &Sequence) -> Sequence {
    let mut out = seq.clone();
    if let Some(first) = seq.frames.first() {
        let o = first.rotation();
        for f in &mut out.frames {
            let r = f.rotation();
            f.set_rotation([r[0] - o[0], r[1] - o[1], r[2] - o[2]]);
        }
    }
    out
}

/// Builds the strictly increasing knot list. Frames sharing a timestamp
/// collapse to the last one.
fn knots(seq: &Sequence) -> (Vec<f64>, Vec<[f64; 3]>) {
    let ts = seq.timestamps();
    let mut t_out: Vec<f64> = Vec::with_capacity(ts.len());
    let mut v_out: Vec<[f64; 3]> = Vec::with_capacity(ts.len());
    for (t, f) in ts.iter().zip(&seq.frames) {
        let t = *t as f64;
        if t_out.last() == Some(&t) {
            *v_out.last_mut().unwrap() = f.rotation();
        } else {
            t_out.push(t);
            v_out.push(f.rotation());
        }
    }
    (t_out, v_out)
}

/// `n` evenly spaced points from `lo` to `hi`, both endpoints exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { hi } else { lo + step * k as f64 })
        .collect()
}

/// Piecewise-linear interpolation of `values` (at strictly increasing `ts`)
/// evaluated at the non-decreasing query points `query`.
fn interp_sorted(ts: &[f64], values: &[[f64; 3]], query: &[f64]) -> Vec<[f64; 3]> {
    let mut seg = 0;
    query
        .iter()
        .map(|&q| {
            while seg + 2 < ts.len() && q > ts[seg + 1] {
                seg += 1;
            }
            let (t0, t1) = (ts[seg], ts[seg + 1]);
            let (a, b) = (values[seg], values[seg + 1]);
            if q <= t0 {
                return a;
            }
            if q >= t1 {
                return b;
            }
            let w = (q - t0) / (t1 - t0);
            [
                a[0] + (b[0] - a[0]) * w,
                a[1] + (b[1] - a[1]) * w,
                a[2] + (b[2] - a[2]) * w,
            ]
        })
        .collect()
}

/// Linearly interpolates each rotation channel onto `n` evenly spaced
/// timestamps spanning the recording.
pub fn resample(seq: &Sequence, n: usize) -> Result<ResampledSequence, PreprocessError> {
    if n < 2 {
        return Err(PreprocessError::BadLength(n));
    }
    let (ts, vals) = knots(seq);
    if ts.len() < 2 {
        return Err(PreprocessError::TooFewTimestamps(ts.len()));
    }
    let grid = linspace(ts[0], *ts.last().unwrap(), n);
    Ok(ResampledSequence {
        values: interp_sorted(&ts, &vals, &grid),
        label: seq.label,
        subject_id: seq.subject_id.clone(),
        sequence_id: seq.sequence_id.clone(),
    })
}

/// Interleaved `[y1,p1,r1, y2,p2,r2, ...]` layout.
pub fn flatten(r: &ResampledSequence) -> Vec<f64> {
    r.values.iter().flat_map(|row| row.iter().copied()).collect()
}

pub fn unflatten(flat: &[f64]) -> Result<Vec<[f64; 3]>, PreprocessError> {
    if flat.len() % 3 != 0 {
        return Err(PreprocessError::BadFlatLength { len: flat.len() });
    }
    Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Options for [`preprocess_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub calibrate: bool,
    pub zero_origin: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            calibrate: true,
            zero_origin: true,
        }
    }
}

fn preprocess_one(
    seq: &Sequence,
    d: &Dataset,
    n: usize,
    opts: PreprocessConfig,
) -> Result<ResampledSequence, PreprocessError> {
    let mut s = if opts.calibrate {
        let cal = d
            .calibrations
            .get(&seq.subject_id)
            .ok_or_else(|| PreprocessError::MissingCalibration(seq.subject_id.clone()))?;
        calibrate(seq, cal)?
    } else {
        seq.clone()
    };
    if opts.zero_origin {
        s = zero_origin(&s);
    }
    resample(&s, n)
}

/// calibrate → zero_origin → resample for every sequence, preserving order.
pub fn preprocess_dataset(
    d: &Dataset,
    n: usize,
    opts: PreprocessConfig,
) -> Result<Vec<ResampledSequence>, PreprocessError> {
    d.sequences
        .par_iter()
        .map(|seq| {
            preprocess_one(seq, d, n, opts).map_err(|e| PreprocessError::InSequence {
                id: format!("{}/{}", seq.subject_id, seq.sequence_id),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Writes rows as `subject_id,label,v_1,...,v_3N` lines.
pub fn write_resampled(rows: &[ResampledSequence], path: &Path) -> Result<(), PreprocessError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        write!(out, "{},{}", r.subject_id, r.label)?;
        for v in flatten(r) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads rows written by [`write_resampled`]. Sequence ids are synthesized
/// as `row<line>` since the format does not carry them.
pub fn read_resampled(path: &Path) -> Result<Vec<ResampledSequence>, PreprocessError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let csv = |reason: String| PreprocessError::Csv { line: i + 1, reason };
        let mut fields = line.split(',');
        let subject = fields.next().unwrap_or_default().to_string();
        let label = Label::from_str_label(fields.next().unwrap_or_default())
            .map_err(|e| csv(e.to_string()))?;
        let flat = fields
            .map(|f| f.trim().parse::<f64>().map_err(|_| csv(format!("bad value {f:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let values = unflatten(&flat).map_err(|e| csv(e.to_string()))?;
        rows.push(ResampledSequence {
            values,
            label,
            subject_id: subject,
            sequence_id: format!("row{}", i + 1),
        });
    }
    Ok(rows)
}
