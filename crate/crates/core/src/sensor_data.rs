//! Frame, sequence and dataset model plus the on-disk CSV layout.
//!
//! A dataset lives in a directory tree
//! `<root>/<subject_id>/<letter>/<sequence_id>.csv`, one frame per line with
//! the seven fields `td,yaw,pitch,roll,ax,ay,az` and no header. An optional
//! `<root>/<subject_id>/calibration.csv` holds a single line
//! `mean_yaw,mean_pitch,mean_roll`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of letter classes.
pub const NUM_CLASSES: usize = 26;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot parse frame {line:?}: {reason}")]
    Parse { line: String, reason: String },
    #[error("cannot parse calibration {path}: {reason}")]
    Calibration { path: PathBuf, reason: String },
    #[error("unknown label directory {0:?}; expected a lowercase letter a-z")]
    UnknownLabel(String),
    #[error("invalid label index {0}")]
    LabelIndex(usize),
    #[error("sequence {id} has {frames} frames; at least 2 are required")]
    TooShort { id: String, frames: usize },
    #[error("dataset directory {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One sensor sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Milliseconds since the previous frame.
    pub td_ms: u64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    /// Acceleration in mm/s². Stored for completeness; no model reads it.
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

impl Frame {
    pub fn rotation(&self) -> [f64; 3] {
        [self.yaw_deg, self.pitch_deg, self.roll_deg]
    }

    pub fn set_rotation(&mut self, r: [f64; 3]) {
        self.yaw_deg = r[0];
        self.pitch_deg = r[1];
        self.roll_deg = r[2];
    }

    fn is_finite(&self) -> bool {
        [
            self.yaw_deg,
            self.pitch_deg,
            self.roll_deg,
            self.ax,
            self.ay,
            self.az,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Parses one `td,yaw,pitch,roll,ax,ay,az` line.
pub fn parse_frame(line: &str) -> Result<Frame, DataError> {
    let fail = |reason: String| DataError::Parse {
        line: line.to_string(),
        reason,
    };
    let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
    if fields.len() != 7 {
        return Err(fail(format!("expected 7 fields, found {}", fields.len())));
    }
    let td: i64 = fields[0]
        .parse()
        .map_err(|_| fail(format!("td {:?} is not an integer", fields[0])))?;
    if td < 0 {
        return Err(fail(format!("negative td {td}")));
    }
    let mut vals = [0.0; 6];
    for (slot, field) in vals.iter_mut().zip(&fields[1..]) {
        *slot = field
            .parse()
            .map_err(|_| fail(format!("{field:?} is not a number")))?;
    }
    let frame = Frame {
        td_ms: td as u64,
        yaw_deg: vals[0],
        pitch_deg: vals[1],
        roll_deg: vals[2],
        ax: vals[3],
        ay: vals[4],
        az: vals[5],
    };
    if !frame.is_finite() {
        return Err(fail("non-finite value".into()));
    }
    Ok(frame)
}

/// Formats a frame as a CSV line (without newline). Floats use the shortest
/// representation that parses back to the same value.
pub fn format_frame(f: &Frame) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        f.td_ms, f.yaw_deg, f.pitch_deg, f.roll_deg, f.ax, f.ay, f.az
    )
}

/// A lowercase letter class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(u8);

impl Label {
    pub fn from_index(index: usize) -> Result<Self, DataError> {
        if index < NUM_CLASSES {
            Ok(Label(index as u8))
        } else {
            Err(DataError::LabelIndex(index))
        }
    }

    pub fn from_char(c: char) -> Result<Self, DataError> {
        if c.is_ascii_lowercase() {
            Ok(Label(c as u8 - b'a'))
        } else {
            Err(DataError::UnknownLabel(c.to_string()))
        }
    }

    pub fn from_str_label(s: &str) -> Result<Self, DataError> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_char(c).map_err(|_| DataError::UnknownLabel(s.into())),
            _ => Err(DataError::UnknownLabel(s.into())),
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn letter(self) -> char {
        (b'a' + self.0) as char
    }

    pub fn all() -> impl Iterator<Item = Label> {
        (0..NUM_CLASSES as u8).map(Label)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_char(self.letter())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Label::from_str_label(&s).map_err(serde::de::Error::custom)
    }
}

/// One writing event.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Frame>,
    pub label: Label,
    pub subject_id: String,
    pub sequence_id: String,
}

impl Sequence {
    pub fn new(
        frames: Vec<Frame>,
        label: Label,
        subject_id: impl Into<String>,
        sequence_id: impl Into<String>,
    ) -> Result<Self, DataError> {
        let sequence_id = sequence_id.into();
        if frames.len() < 2 {
            return Err(DataError::TooShort {
                id: sequence_id,
                frames: frames.len(),
            });
        }
        Ok(Sequence {
            frames,
            label,
            subject_id: subject_id.into(),
            sequence_id,
        })
    }

    pub fn timestamps(&self) -> Vec<u64> {
        timestamps(&self.frames)
    }
}

/// Cumulative time axis. The first frame's delta is discarded so the axis
/// always starts at zero.
pub fn timestamps(frames: &[Frame]) -> Vec<u64> {
    let mut out = Vec::with_capacity(frames.len());
    let mut t = 0u64;
    for (i, f) in frames.iter().enumerate() {
        if i > 0 {
            t += f.td_ms;
        }
        out.push(t);
    }
    out
}

/// Per-subject mean orientation from an upright hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub subject_id: String,
    pub mean_yaw: f64,
    pub mean_pitch: f64,
    pub mean_roll: f64,
}

impl CalibrationRecord {
    pub fn means(&self) -> [f64; 3] {
        [self.mean_yaw, self.mean_pitch, self.mean_roll]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
    pub calibrations: BTreeMap<String, CalibrationRecord>,
}

impl Dataset {
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.sequences.iter().map(|q| q.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Sorts sequences by (subject, label, sequence id).
    pub fn canonicalize(&mut self) {
        self.sequences.sort_by(|a, b| {
            (&a.subject_id, a.label, &a.sequence_id).cmp(&(&b.subject_id, b.label, &b.sequence_id))
        });
    }
}

/// Result of [`load_dataset_with_summary`].
#[derive(Debug)]
pub struct LoadSummary {
    pub dataset: Dataset,
    /// Files rejected because they held fewer than two frames.
    pub skipped: Vec<PathBuf>,
}

pub fn load_dataset(root: &Path) -> Result<Dataset, DataError> {
    load_dataset_with_summary(root).map(|s| s.dataset)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut entries = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort();
    Ok(entries)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_dataset_with_summary(root: &Path) -> Result<LoadSummary, DataError> {
    if !root.is_dir() {
        return Err(DataError::MissingRoot(root.to_path_buf()));
    }
    struct Job {
        path: PathBuf,
        subject: String,
        label: Label,
    }
    let mut jobs = Vec::new();
    let mut calibrations = BTreeMap::new();
    for subject_dir in sorted_entries(root)? {
        if !subject_dir.is_dir() {
            continue;
        }
        let subject = file_name(&subject_dir);
        for entry in sorted_entries(&subject_dir)? {
            if entry.is_dir() {
                let label = Label::from_str_label(&file_name(&entry))?;
                for file in sorted_entries(&entry)? {
                    if file.extension().is_some_and(|e| e == "csv") {
                        jobs.push(Job {
                            path: file,
                            subject: subject.clone(),
                            label,
                        });
                    }
                }
            } else if file_name(&entry) == "calibration.csv" {
                let rec = read_calibration(&entry, &subject)?;
                calibrations.insert(subject.clone(), rec);
            }
        }
    }

    let parsed: Vec<Result<Option<Sequence>, DataError>> = jobs
        .par_iter()
        .map(|job| {
            let text = fs::read_to_string(&job.path).map_err(io_err(&job.path))?;
            let frames = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(parse_frame)
                .collect::<Result<Vec<_>, _>>()?;
            let id = job
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            match Sequence::new(frames, job.label, job.subject.clone(), id) {
                Ok(s) => Ok(Some(s)),
                Err(DataError::TooShort { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut sequences = Vec::with_capacity(parsed.len());
    let mut skipped = Vec::new();
    for (job, res) in jobs.iter().zip(parsed) {
        match res? {
            Some(s) => sequences.push(s),
            None => {
                log::warn!("skipping {}: fewer than 2 frames", job.path.display());
                skipped.push(job.path.clone());
            }
        }
    }
    Ok(LoadSummary {
        dataset: Dataset {
            sequences,
            calibrations,
        },
        skipped,
    })
}

fn read_calibration(path: &Path, subject: &str) -> Result<CalibrationRecord, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let fail = |reason: &str| DataError::Calibration {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| fail("empty file"))?;
    let vals = line
        .split(',')
        .map(|f| f.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| fail("non-numeric field"))?;
    if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
        return Err(fail("expected 3 finite fields"));
    }
    Ok(CalibrationRecord {
        subject_id: subject.to_string(),
        mean_yaw: vals[0],
        mean_pitch: vals[1],
        mean_roll: vals[2],
    })
}

/// Writes `dataset` in the standard directory layout under `root`.
pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<(), DataError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    for seq in &dataset.sequences {
        let dir = root.join(&seq.subject_id).join(seq.label.letter().to_string());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!("{}.csv", seq.sequence_id));
        let mut buf = String::new();
        for f in &seq.frames {
            buf.push_str(&format_frame(f));
            buf.push('\n');
        }
        fs::write(&path, buf).map_err(io_err(&path))?;
    }
    for (subject, cal) in &dataset.calibrations {
        let dir = root.join(subject);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join("calibration.csv");
        let mut file = fs::File::create(&path).map_err(io_err(&path))?;
        writeln!(file, "{},{},{}", cal.mean_yaw, cal.mean_pitch, cal.mean_roll)
            .map_err(io_err(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(td: u64, y: f64, p: f64, r: f64) -> Frame {
        Frame {
            td_ms: td,
            yaw_deg: y,
            pitch_deg: p,
            roll_deg: r,
            ax: 0.0,
            ay: 0.0,
            az: 0.0,
        }
    }

    #[test]
    fn parses_sample_rows() {
        let f = parse_frame("7,90.10,-10.34,-20.02,206.9,-374.1,1052.9").unwrap();
        assert_eq!(
            f,
            Frame {
                td_ms: 7,
                yaw_deg: 90.10,
                pitch_deg: -10.34,
                roll_deg: -20.02,
                ax: 206.9,
                ay: -374.1,
                az: 1052.9
            }
        );
        let g = parse_frame("25,90.27,-9.86,-20.29,193.0,-401.7,1046.2").unwrap();
        assert_eq!(g.td_ms, 25);
        assert_eq!(g.roll_deg, -20.29);
        assert_eq!(g.az, 1046.2);
        assert_eq!(parse_frame("0,0,0,0,0,0,0").unwrap(), frame(0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_malformed_lines() {
        for bad in ["1,2,3", "1,2,3,4,5,6,7,8", "-3,0,0,0,0,0,0", "x,0,0,0,0,0,0", "1,0,abc,0,0,0,0", "1.5,0,0,0,0,0,0"] {
            let err = parse_frame(bad).unwrap_err();
            assert!(err.to_string().contains(bad), "{err}");
        }
    }

    #[test]
    fn timestamps_anchor_at_zero() {
        let t = timestamps(&[frame(7, 0., 0., 0.), frame(25, 0., 0., 0.)]);
        assert_eq!(t, vec![0, 25]);
        assert_eq!(timestamps(&[frame(5, 0., 0., 0.)]), vec![0]);
        let t = timestamps(&[frame(3, 0., 0., 0.), frame(0, 0., 0., 0.), frame(0, 0., 0., 0.)]);
        assert_eq!(t, vec![0, 0, 0]);
    }

    #[test]
    fn labels_are_a_bijection() {
        for (i, l) in Label::all().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(Label::from_char(l.letter()).unwrap(), l);
        }
        assert!(Label::from_index(26).is_err());
        assert!(Label::from_char('A').is_err());
        assert!(Label::from_str_label("ab").is_err());
    }

    #[test]
    fn short_sequences_rejected() {
        let err = Sequence::new(vec![frame(0, 0., 0., 0.)], Label::from_char('a').unwrap(), "s", "x");
        assert!(matches!(err, Err(DataError::TooShort { frames: 1, .. })));
    }

    #[test]
    fn empty_directory_loads_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let d = load_dataset(dir.path()).unwrap();
        assert!(d.sequences.is_empty());
    }

    #[test]
    fn missing_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(&dir.path().join("nope")),
            Err(DataError::MissingRoot(_))
        ));
    }

    #[test]
    fn loads_minimal_layout_and_skips_short_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("subject_01").join("a");
        fs::create_dir_all(&a).unwrap();
        fs::write(
            a.join("s1.csv"),
            "7,90.10,-10.34,-20.02,206.9,-374.1,1052.9\n25,90.27,-9.86,-20.29,193.0,-401.7,1046.2\n",
        )
        .unwrap();
        fs::write(a.join("s2.csv"), "7,90.10,-10.34,-20.02,206.9,-374.1,1052.9\n").unwrap();
        let summary = load_dataset_with_summary(dir.path()).unwrap();
        assert_eq!(summary.dataset.sequences.len(), 1);
        assert_eq!(summary.skipped.len(), 1);
        let s = &summary.dataset.sequences[0];
        assert_eq!(s.label.letter(), 'a');
        assert_eq!(s.subject_id, "subject_01");
        assert_eq!(s.sequence_id, "s1");
    }

    #[test]
    fn unknown_label_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("subject_01").join("A")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DataError::UnknownLabel(_))));
    }

    #[test]
    fn write_then_load_round_trips() {
        let mut d = Dataset::default();
        for (i, c) in ['a', 'q', 'z'].iter().enumerate() {
            d.sequences.push(
                Sequence::new(
                    vec![frame(3, 1.25, -2.5 * i as f64, 0.1), frame(11, 1.0 / 3.0, 7.0, -0.2)],
                    Label::from_char(*c).unwrap(),
                    format!("subj{}", i % 2),
                    format!("seq{i}"),
                )
                .unwrap(),
            );
        }
        d.calibrations.insert(
            "subj0".into(),
            CalibrationRecord {
                subject_id: "subj0".into(),
                mean_yaw: 90.0,
                mean_pitch: -10.5,
                mean_roll: 0.125,
            },
        );
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&d, dir.path()).unwrap();
        let mut back = load_dataset(dir.path()).unwrap();
        d.canonicalize();
        back.canonicalize();
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn frame_format_round_trip(
            td in 0u64..100_000,
            vals in proptest::array::uniform6(-1.0e4f64..1.0e4),
        ) {
            let f = Frame { td_ms: td, yaw_deg: vals[0], pitch_deg: vals[1], roll_deg: vals[2], ax: vals[3], ay: vals[4], az: vals[5] };
            let back = parse_frame(&format_frame(&f)).unwrap();
            prop_assert_eq!(back.td_ms, f.td_ms);
            for (a, b) in [back.yaw_deg, back.pitch_deg, back.roll_deg, back.ax, back.ay, back.az]
                .iter()
                .zip(vals.iter())
            {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn timestamps_monotone(tds in proptest::collection::vec(0u64..50, 1..40)) {
            let frames: Vec<Frame> = tds.iter().map(|&t| frame(t, 0., 0., 0.)).collect();
            let ts = timestamps(&frames);
            prop_assert_eq!(ts.len(), frames.len());
            prop_assert_eq!(ts[0], 0);
            prop_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
