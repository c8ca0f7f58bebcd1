//! Label-preserving augmentation of resampled rows: Gaussian jitter, a small
//! random rotation and a per-channel stretch.
//!
//! Rows are interpreted as intrinsic Z-Y-X Euler angles (yaw about the
//! vertical axis, then pitch, then roll), all in degrees.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::ResampledSequence;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("augment.{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Standard deviation of the additive jitter, degrees.
    pub noise_sigma: f64,
    /// Upper bound on the random rotation angle, degrees.
    pub max_rotation_deg: f64,
    pub stretch_low: f64,
    pub stretch_high: f64,
    pub copies_per_sequence: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise_sigma: 0.5,
            max_rotation_deg: 5.0,
            stretch_low: 0.9,
            stretch_high: 1.1,
            copies_per_sequence: 4,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |field, reason: &str| {
            Err(AugmentError::Invalid {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", "must be a finite value >= 0");
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return bad("max_rotation_deg", "must lie in [0, 180]");
        }
        if !(self.stretch_low > 0.0 && self.stretch_low <= self.stretch_high && self.stretch_high.is_finite()) {
            return bad("stretch_low", "need 0 < stretch_low <= stretch_high");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes the given components. Returns `None` for a zero quaternion.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        (n > 0.0 && n.is_finite()).then(|| UnitQuaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Rotation of `angle_deg` about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: [f64; 3], angle_deg: f64) -> Option<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return None;
        }
        let half = angle_deg.to_radians() / 2.0;
        let s = half.sin() / n;
        Some(UnitQuaternion {
            w: half.cos(),
            x: axis[0] * s,
            y: axis[1] * s,
            z: axis[2] * s,
        })
    }

    /// Intrinsic Z-Y-X Euler angles in degrees to a quaternion.
    pub fn from_euler_deg(ypr: [f64; 3]) -> Self {
        let (sy, cy) = (ypr[0].to_radians() / 2.0).sin_cos();
        let (sp, cp) = (ypr[1].to_radians() / 2.0).sin_cos();
        let (sr, cr) = (ypr[2].to_radians() / 2.0).sin_cos();
        UnitQuaternion {
            w: cr * cp * cy + sr * sp * sy,
            x: sr * cp * cy - cr * sp * sy,
            y: cr * sp * cy + sr * cp * sy,
            z: cr * cp * sy - sr * sp * cy,
        }
    }

    /// Back to intrinsic Z-Y-X Euler angles in degrees. Yaw and roll lie in
    /// (-180, 180]; pitch in [-90, 90]. When pitch is within 1e-6° of ±90°
    /// roll is pinned to 0 and the whole heading is carried by yaw.
    pub fn to_euler_deg(&self) -> [f64; 3] {
        let m = self.matrix();
        let pitch = (-m[2][0]).clamp(-1.0, 1.0).asin().to_degrees();
        if 90.0 - pitch.abs() < 1e-6 {
            let yaw = (-m[0][1]).atan2(m[1][1]).to_degrees();
            return [yaw, pitch.signum() * 90.0, 0.0];
        }
        let yaw = m[1][0].atan2(m[0][0]).to_degrees();
        let roll = m[2][1].atan2(m[2][2]).to_degrees();
        [yaw, pitch, roll]
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let UnitQuaternion { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Hamilton product `self ⊗ rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &UnitQuaternion) -> UnitQuaternion {
        let (a, b) = (self, rhs);
        UnitQuaternion {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    pub fn inverse(&self) -> UnitQuaternion {
        UnitQuaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Rotation angle in degrees, in [0, 180].
    pub fn angle_deg(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        (2.0 * v.atan2(self.w.abs())).to_degrees()
    }

    /// Random axis uniform on the sphere, angle uniform in `[0, max_deg]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_deg: f64) -> Self {
        loop {
            let axis: [f64; 3] = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            let angle = rng.gen::<f64>() * max_deg;
            if let Some(q) = UnitQuaternion::from_axis_angle(axis, angle) {
                return q;
            }
        }
    }
}

/// Shifts `angle` by a multiple of 360° so it lies nearest to `reference`.
fn unwrap_near(angle: f64, reference: f64) -> f64 {
    angle + 360.0 * ((reference - angle) / 360.0).round()
}

pub fn jitter<R: Rng + ?Sized>(r: &ResampledSequence, sigma: f64, rng: &mut R) -> ResampledSequence {
    let mut out = r.clone();
    if sigma == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    for row in &mut out.values {
        for v in row.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    out
}

/// Left-composes every row's orientation with `q`.
pub fn rotate(r: &ResampledSequence, q: &UnitQuaternion) -> ResampledSequence {
    let mut out = r.clone();
    for row in &mut out.values {
        let turned = q.compose(&UnitQuaternion::from_euler_deg(*row)).to_euler_deg();
        *row = [
            unwrap_near(turned[0], row[0]),
            turned[1],
            unwrap_near(turned[2], row[2]),
        ];
    }
    out
}

pub fn stretch(r: &ResampledSequence, sy: f64, sp: f64, sr: f64) -> ResampledSequence {
    let mut out = r.clone();
    for row in &mut out.values {
        row[0] *= sy;
        row[1] *= sp;
        row[2] *= sr;
    }
    out
}

/// One augmented copy: jitter, then rotation, then stretch.
pub fn augment_row<R: Rng + ?Sized>(
    r: &ResampledSequence,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> ResampledSequence {
    let q = UnitQuaternion::random(rng, cfg.max_rotation_deg);
    let mut s = [0.0; 3];
    for v in &mut s {
        *v = if cfg.stretch_high > cfg.stretch_low {
            rng.gen_range(cfg.stretch_low..=cfg.stretch_high)
        } else {
            cfg.stretch_low
        };
    }
    let out = jitter(r, cfg.noise_sigma, rng);
    let out = rotate(&out, &q);
    stretch(&out, s[0], s[1], s[2])
}

/// Returns the originals followed by `copies_per_sequence` augmented copies
/// of each original. Copy `k` of row `i` draws from its own substream, so the
/// result does not depend on scheduling.
pub fn augment_dataset(
    rows: &[ResampledSequence],
    cfg: &AugmentConfig,
) -> Result<Vec<ResampledSequence>, AugmentError> {
    cfg.validate()?;
    let copies = cfg.copies_per_sequence;
    let augmented: Vec<ResampledSequence> = (0..rows.len() * copies)
        .into_par_iter()
        .map(|j| {
            let (i, k) = (j / copies, j % copies);
            let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "augment", j as u64));
            let mut out = augment_row(&rows[i], cfg, &mut rng);
            out.sequence_id = format!("{}#aug{}", rows[i].sequence_id, k);
            out
        })
        .collect();
    let mut all = rows.to_vec();
    all.extend(augmented);
    Ok(all)
}
