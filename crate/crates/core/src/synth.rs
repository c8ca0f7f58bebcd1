//! Deterministic synthetic pen-motion generator.
//!
//! Each letter gets a smooth orientation trace built from a few seeded
//! sinusoids per channel. Subjects differ in speed, per-channel scale,
//! a fixed orientation offset, personal style, sampling rate and noise,
//! so that splitting by subject is genuinely harder than splitting at
//! random. Output uses the ordinary [`Dataset`] layout.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::UnitQuaternion;
use crate::preprocess::linspace;
use crate::seed;
use crate::sensor_data::{CalibrationRecord, Dataset, Frame, Label, Sequence, NUM_CLASSES};

pub const WAYPOINTS: usize = 12;
pub const MAX_WAYPOINT_DEG: f64 = 45.0;
/// Writing time of one letter at speed 1.
pub const BASE_DURATION_MS: f64 = 1500.0;
/// Minimum RMS distance between two templates' zero-origin traces.
pub const TEMPLATE_MARGIN_DEG: f64 = 8.0;
const MARGIN_POINTS: usize = 64;
const GRAVITY_MM_S2: f64 = 1000.0;
const SHARED_WEIGHT: f64 = 0.6;
const LETTER_WEIGHT: f64 = 0.4;
const NOISE_DEG: (f64, f64) = (1.0, 3.0);
const REP_VAR: (f64, f64) = (0.05, 0.12);
const REP_DEG: (f64, f64) = (1.5, 4.0);
const STYLE_DEG: (f64, f64) = (6.0, 14.0);

/// Idealized orientation trace of one letter.
#[derive(Debug, Clone, PartialEq)]
pub struct LetterTemplate {
    pub label: Label,
    pub waypoints: Vec<[f64; 3]>,
}

impl LetterTemplate {
    /// Uniform Catmull-Rom curve through the waypoints, `u` in [0, 1].
    /// Passes exactly through every waypoint; end tangents use mirrored
    /// phantom points.
    pub fn eval(&self, u: f64) -> [f64; 3] {
        let w = &self.waypoints;
        let segs = w.len() - 1;
        let s = u.clamp(0.0, 1.0) * segs as f64;
        let i = (s.floor() as usize).min(segs - 1);
        let t = s - i as f64;
        let at = |j: isize| -> [f64; 3] {
            if j < 0 {
                std::array::from_fn(|c| 2.0 * w[0][c] - w[1][c])
            } else if j as usize > segs {
                std::array::from_fn(|c| 2.0 * w[segs][c] - w[segs - 1][c])
            } else {
                w[j as usize]
            }
        };
        let i = i as isize;
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        let (t2, t3) = (t * t, t * t * t);
        std::array::from_fn(|c| {
            0.5 * (2.0 * p1[c]
                + (p2[c] - p0[c]) * t
                + (2.0 * p0[c] - 5.0 * p1[c] + 4.0 * p2[c] - p3[c]) * t2
                + (3.0 * p1[c] - p0[c] - 3.0 * p2[c] + p3[c]) * t3)
        })
    }

    /// `n` evenly spaced curve points with the first point subtracted.
    pub fn trace(&self, n: usize) -> Vec<[f64; 3]> {
        let pts: Vec<[f64; 3]> = linspace(0.0, 1.0, n).into_iter().map(|u| self.eval(u)).collect();
        let o = pts[0];
        pts.iter().map(|p| std::array::from_fn(|c| p[c] - o[c])).collect()
    }
}

/// RMS distance between two equally long traces.
pub fn trace_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    (sq / a.len() as f64).sqrt()
}

/// Sum of 2 to 4 sinusoids per channel sampled at the waypoints, shifted to
/// start at zero and shrunk if any value exceeds the bound.
fn random_waypoints<R: Rng>(rng: &mut R) -> Vec<[f64; 3]> {
    let us = linspace(0.0, 1.0, WAYPOINTS);
    let mut w = vec![[0.0; 3]; WAYPOINTS];
    for c in 0..3 {
        let terms = rng.gen_range(2..=4);
        for _ in 0..terms {
            let freq = 0.5 * rng.gen_range(1..=6) as f64;
            let amp = rng.gen_range(8.0..25.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            for (wp, u) in w.iter_mut().zip(&us) {
                wp[c] += amp * (2.0 * PI * freq * u + phase).sin();
            }
        }
    }
    let o = w[0];
    for wp in &mut w {
        for c in 0..3 {
            wp[c] -= o[c];
        }
    }
    let peak = w.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > MAX_WAYPOINT_DEG {
        let k = MAX_WAYPOINT_DEG / peak;
        w.iter_mut().flatten().for_each(|v| *v *= k);
    }
    w
}

/// 26 templates, each a weighted sum of one motion shared by every letter
/// and a letter's own curve. Zero-origin traces are pairwise at least
/// [`TEMPLATE_MARGIN_DEG`] apart. A template too close to an earlier one
/// is redrawn.
pub fn make_templates(seed: u64) -> Vec<LetterTemplate> {
    let mut rng = seed::rng(seed::derive(seed, "synth-templates"));
    let shared = random_waypoints(&mut rng);
    let mut out: Vec<LetterTemplate> = Vec::with_capacity(NUM_CLASSES);
    let mut traces: Vec<Vec<[f64; 3]>> = Vec::with_capacity(NUM_CLASSES);
    for label in Label::all() {
        loop {
            let own = random_waypoints(&mut rng);
            let waypoints = shared
                .iter()
                .zip(&own)
                .map(|(a, b)| std::array::from_fn(|c| SHARED_WEIGHT * a[c] + LETTER_WEIGHT * b[c]))
                .collect();
            let t = LetterTemplate { label, waypoints };
            let tr = t.trace(MARGIN_POINTS);
            if traces.iter().all(|o| trace_distance(o, &tr) >= TEMPLATE_MARGIN_DEG) {
                out.push(t);
                traces.push(tr);
                break;
            }
        }
    }
    out
}

/// How one simulated person writes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub subject_id: String,
    /// Divides the writing duration; in [0.5, 2].
    pub speed: f64,
    /// Per-channel amplitude multipliers.
    pub scale: [f64; 3],
    /// Fixed orientation of the pen relative to the calibration frame.
    pub offset: UnitQuaternion,
    pub noise_deg: f64,
    /// Mean sampling period; in [5, 30].
    pub period_mean_ms: f64,
    /// Half-width of the uniform period jitter.
    pub period_jitter_ms: f64,
    /// Monotone time-warp strength, |w| < 1.
    pub time_warp: f64,
    /// Relative repetition-to-repetition variation of amplitude, duration and warp.
    pub rep_variability: f64,
    /// Amplitude of a smooth deformation drawn afresh for every repetition.
    pub rep_deg: f64,
    /// Amplitude of the smooth per-letter deformation that makes up a personal style.
    pub style_deg: f64,
}

impl SubjectProfile {
    /// A profile that reproduces templates exactly at a 10 ms period.
    pub fn identity(subject_id: impl Into<String>) -> Self {
        SubjectProfile {
            subject_id: subject_id.into(),
            speed: 1.0,
            scale: [1.0; 3],
            offset: UnitQuaternion::IDENTITY,
            noise_deg: 0.0,
            period_mean_ms: 10.0,
            period_jitter_ms: 0.0,
            time_warp: 0.0,
            rep_variability: 0.0,
            rep_deg: 0.0,
            style_deg: 0.0,
        }
    }

    /// A random writer. `noise_scale` multiplies the sensor noise and the
    /// repetition-to-repetition variation; the subject's own transforms are
    /// unaffected.
    pub fn random<R: Rng>(subject_id: impl Into<String>, noise_scale: f64, rng: &mut R) -> Self {
        let offset_euler = [
            rng.gen_range(-90.0..90.0),
            rng.gen_range(-15.0..15.0),
            rng.gen_range(-20.0..20.0),
        ];
        let period_mean_ms = rng.gen_range(6.0..14.0);
        SubjectProfile {
            subject_id: subject_id.into(),
            speed: rng.gen_range(0.7..1.5),
            scale: std::array::from_fn(|_| rng.gen_range(0.8..1.25)),
            offset: UnitQuaternion::from_euler_deg(offset_euler),
            noise_deg: noise_scale * rng.gen_range(NOISE_DEG.0..NOISE_DEG.1),
            period_mean_ms,
            period_jitter_ms: rng.gen_range(0.0..0.4) * period_mean_ms,
            time_warp: rng.gen_range(-0.3..0.3),
            rep_variability: noise_scale * rng.gen_range(REP_VAR.0..REP_VAR.1),
            rep_deg: noise_scale * rng.gen_range(REP_DEG.0..REP_DEG.1),
            style_deg: rng.gen_range(STYLE_DEG.0..STYLE_DEG.1),
        }
    }

    /// The upright-hold mean orientation a calibration would record.
    pub fn calibration(&self) -> CalibrationRecord {
        let [y, p, r] = self.offset.to_euler_deg();
        CalibrationRecord {
            subject_id: self.subject_id.clone(),
            mean_yaw: y,
            mean_pitch: p,
            mean_roll: r,
        }
    }
}

/// Adds a smooth deformation of amplitude `style_deg` to every waypoint but
/// the first, modelling how one subject habitually writes one letter.
pub fn stylize<R: Rng>(template: &LetterTemplate, style_deg: f64, rng: &mut R) -> LetterTemplate {
    let n = template.waypoints.len();
    let us = linspace(0.0, 1.0, n);
    let mut out = template.clone();
    for c in 0..3 {
        let amp = style_deg * rng.gen_range(0.5..1.0);
        let freq = rng.gen_range(0.5..2.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let base = (phase).sin();
        for (wp, u) in out.waypoints.iter_mut().zip(&us) {
            wp[c] += amp * ((2.0 * PI * freq * u + phase).sin() - base);
        }
    }
    out
}

/// One writing of `template` by `profile`: stretch, orientation offset and
/// speed are applied to the dense curve, which is sampled at jittered
/// integer-millisecond intervals and corrupted with Gaussian noise.
pub fn gen_sequence<R: Rng>(
    template: &LetterTemplate,
    profile: &SubjectProfile,
    sequence_id: impl Into<String>,
    rng: &mut R,
) -> Sequence {
    let rep_template;
    let template = if profile.rep_deg > 0.0 {
        rep_template = stylize(template, profile.rep_deg, rng);
        &rep_template
    } else {
        template
    };
    let rv = profile.rep_variability;
    let amp: [f64; 3] = std::array::from_fn(|c| profile.scale[c] * (1.0 + rv * rng.gen_range(-1.0..=1.0)));
    let duration = BASE_DURATION_MS / profile.speed * (1.0 + rv * rng.gen_range(-1.0..=1.0));
    let warp = (profile.time_warp + 5.0 * rv * rng.gen_range(-1.0..=1.0)).clamp(-0.9, 0.9);
    let noise = Normal::new(0.0, profile.noise_deg.max(0.0)).expect("finite sigma");
    let accel = Normal::new(0.0, 15.0).expect("finite sigma");

    let mut frames = Vec::new();
    let mut t = 0.0;
    let mut td = profile.period_mean_ms.round().max(1.0) as u64;
    loop {
        let u = t / duration;
        let u = u + warp * (PI * u).sin() / PI;
        let v = template.eval(u);
        let q = profile
            .offset
            .compose(&UnitQuaternion::from_euler_deg(std::array::from_fn(|c| amp[c] * v[c])));
        let mut rot = q.to_euler_deg();
        if profile.noise_deg > 0.0 {
            for r in &mut rot {
                *r += noise.sample(rng);
            }
        }
        let m = q.matrix();
        let g: [f64; 3] = std::array::from_fn(|i| GRAVITY_MM_S2 * m[2][i] + accel.sample(rng));
        frames.push(Frame {
            td_ms: td,
            yaw_deg: rot[0],
            pitch_deg: rot[1],
            roll_deg: rot[2],
            ax: (g[0] * 10.0).round() / 10.0,
            ay: (g[1] * 10.0).round() / 10.0,
            az: (g[2] * 10.0).round() / 10.0,
        });
        let j = profile.period_jitter_ms;
        let step = if j > 0.0 {
            profile.period_mean_ms + rng.gen_range(-j..=j)
        } else {
            profile.period_mean_ms
        };
        td = step.round().max(1.0) as u64;
        if t + td as f64 > duration {
            break;
        }
        t += td as f64;
    }
    Sequence::new(frames, template.label, profile.subject_id.clone(), sequence_id)
        .expect("duration spans at least two periods")
}

/// Generator options beyond the dataset shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub reps: usize,
    pub seed: u64,
    /// Multiplies every subject's sensor noise; 0 gives noise-free traces.
    pub noise_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 8,
            reps: 20,
            seed: 0,
            noise_scale: 1.0,
        }
    }
}

pub fn subject_id(i: usize) -> String {
    format!("s{:02}", i + 1)
}

/// `n_subjects × 26 × reps` sequences with one calibration record per subject.
pub fn gen_dataset(n_subjects: usize, reps: usize, seed: u64) -> Dataset {
    gen_dataset_with(&SynthConfig {
        n_subjects,
        reps,
        seed,
        ..Default::default()
    })
}

pub fn gen_dataset_with(cfg: &SynthConfig) -> Dataset {
    let templates = make_templates(cfg.seed);
    let profiles: Vec<SubjectProfile> = (0..cfg.n_subjects)
        .map(|s| {
            let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "synth-subject", s as u64));
            SubjectProfile::random(subject_id(s), cfg.noise_scale, &mut rng)
        })
        .collect();
    let styled: Vec<Vec<LetterTemplate>> = profiles
        .iter()
        .enumerate()
        .map(|(s, p)| {
            templates
                .iter()
                .enumerate()
                .map(|(l, t)| {
                    let idx = (s * NUM_CLASSES + l) as u64;
                    stylize(t, p.style_deg, &mut seed::rng(seed::derive_indexed(cfg.seed, "synth-style", idx)))
                })
                .collect()
        })
        .collect();
    let per_subject = NUM_CLASSES * cfg.reps;
    let sequences: Vec<Sequence> = (0..cfg.n_subjects * per_subject)
        .into_par_iter()
        .map(|i| {
            let (s, rest) = (i / per_subject, i % per_subject);
            let (l, rep) = (rest / cfg.reps, rest % cfg.reps);
            let t = &styled[s][l];
            let id = format!("{}{:03}", t.label.letter(), rep + 1);
            let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "synth-seq", i as u64));
            gen_sequence(t, &profiles[s], id, &mut rng)
        })
        .collect();
    let calibrations: BTreeMap<String, CalibrationRecord> =
        profiles.iter().map(|p| (p.subject_id.clone(), p.calibration())).collect();
    let mut d = Dataset {
        sequences,
        calibrations,
    };
    d.canonicalize();
    d
}
