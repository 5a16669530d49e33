//! Simulated sliders (prismatic joints) and doors (revolute joints).
//!
//! Rewards come from an analytic constraint model instead of a physics
//! engine. A slider moves by the projection of the commanded displacement on
//! its track, clamped to the travel limit. A door opens by the commanded angle
//! scaled by a Gaussian alignment factor on radius and axis-pitch mismatch,
//! clamped to its opening limit; the reward is the arc length travelled by the
//! handle. Every mechanism resets before each action.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Side length of a context image in pixels.
pub const IMAGE_SIZE: usize = 64;
/// Rendering scale.
pub const PIXELS_PER_METER: f64 = 100.0;
/// Motions shorter than this do not register and are reported as zero.
pub const MOTION_RESOLUTION: f64 = 1e-3;

/// Width of the door alignment falloff in radius (m).
pub const DOOR_SIGMA_RADIUS: f64 = 0.025;
/// Width of the door alignment falloff in axis pitch (rad).
pub const DOOR_SIGMA_PITCH: f64 = 0.15;
/// Opening limit shared by every door.
pub const DOOR_MAX_ANGLE: f64 = FRAC_PI_2;

pub const SLIDER_LENGTH_RANGE: (f64, f64) = (0.10, 0.50);
pub const SLIDER_OFFSET_RANGE: (f64, f64) = (-0.15, 0.15);
pub const DOOR_RADIUS_RANGE: (f64, f64) = (0.05, 0.30);
pub const DOOR_PITCH_RANGE: (f64, f64) = (-FRAC_PI_4, FRAC_PI_4);

/// Smallest commanded door radius. The radius must be strictly positive.
pub const DOOR_MIN_COMMAND_RADIUS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MechanismKind {
    Slider,
    Door,
}

impl MechanismKind {
    pub fn action_dim(self) -> usize {
        match self {
            MechanismKind::Slider => 2,
            MechanismKind::Door => 3,
        }
    }

    fn salt(self) -> u64 {
        match self {
            MechanismKind::Slider => 0x51_1DE5,
            MechanismKind::Door => 0xD0_0125,
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MechanismKind::Slider => f.write_str("slider"),
            MechanismKind::Door => f.write_str("door"),
        }
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "slider" => Ok(MechanismKind::Slider),
            "door" => Ok(MechanismKind::Door),
            other => Err(Error::InvalidArgument(format!(
                "unknown mechanism kind {other:?} (expected slider or door)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliderParams {
    /// Track direction φ in [0, π).
    pub track_angle: f64,
    /// Travel limit L_s in meters.
    pub track_length: f64,
    /// Track start relative to the canvas center, meters (x right, y up).
    pub handle_offset: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoorParams {
    /// Hinge-to-handle distance in meters.
    pub radius: f64,
    /// +1 or -1, the direction in which the door opens.
    pub hinge_sign: i8,
    /// Pitch of the rotation axis in radians.
    pub axis_pitch: f64,
    /// Opening limit in radians.
    pub max_angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MechanismParams {
    Slider(SliderParams),
    Door(DoorParams),
}

/// One slider or door instance. Regenerating from `(kind, seed)` yields the
/// same parameters bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMechanism")]
pub struct Mechanism {
    pub kind: MechanismKind,
    pub seed: u64,
    pub params: MechanismParams,
}

#[derive(Deserialize)]
struct RawMechanism {
    kind: MechanismKind,
    seed: u64,
    params: serde_json::Value,
}

impl TryFrom<RawMechanism> for Mechanism {
    type Error = Error;

    fn try_from(raw: RawMechanism) -> Result<Self> {
        let params = match raw.kind {
            MechanismKind::Slider => {
                MechanismParams::Slider(serde_json::from_value(raw.params)?)
            }
            MechanismKind::Door => {
                let door: DoorParams = serde_json::from_value(raw.params)?;
                if door.hinge_sign != 1 && door.hinge_sign != -1 {
                    return Err(Error::parse("mechanism", "hinge_sign must be +1 or -1"));
                }
                MechanismParams::Door(door)
            }
        };
        Ok(Mechanism {
            kind: raw.kind,
            seed: raw.seed,
            params,
        })
    }
}

/// A point in the continuous action space.
///
/// Slider: `(pitch θ, magnitude q)`. Door: `(radius r, angle q, pitch ψ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub Vec<f64>);

impl Deref for Action {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Action {
    fn from(v: Vec<f64>) -> Self {
        Action(v)
    }
}

/// Closed per-dimension intervals `[low, high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::DimensionMismatch {
                expected: low.len(),
                got: high.len(),
            });
        }
        if let Some(d) = (0..low.len()).find(|&d| !(low[d] < high[d])) {
            return Err(Error::InvalidArgument(format!(
                "bounds dimension {d}: low {} not below high {}",
                low[d], high[d]
            )));
        }
        Ok(ActionBounds { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim()
            && a.iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(&x, (&lo, &hi))| x >= lo && x <= hi)
    }

    pub fn check(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: a.len(),
            });
        }
        for (dim, &value) in a.iter().enumerate() {
            let (low, high) = (self.low[dim], self.high[dim]);
            if !(value >= low && value <= high) {
                return Err(Error::OutOfBounds {
                    dim,
                    value,
                    low,
                    high,
                });
            }
        }
        Ok(())
    }

    pub fn clip(&self, a: &mut [f64]) {
        for (x, (&lo, &hi)) in a.iter_mut().zip(self.low.iter().zip(&self.high)) {
            *x = x.clamp(lo, hi);
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        Action(
            self.low
                .iter()
                .zip(&self.high)
                .map(|(&lo, &hi)| rng.gen_range(lo..=hi))
                .collect(),
        )
    }
}

pub fn action_bounds(kind: MechanismKind) -> ActionBounds {
    match kind {
        MechanismKind::Slider => ActionBounds {
            low: vec![-PI, -0.60],
            high: vec![PI, 0.60],
        },
        MechanismKind::Door => ActionBounds {
            low: vec![DOOR_MIN_COMMAND_RADIUS, -PI, -FRAC_PI_2],
            high: vec![0.40, PI, FRAC_PI_2],
        },
    }
}

pub fn generate_mechanism(kind: MechanismKind, seed: u64) -> Mechanism {
    let mut rng = seed::rng(seed ^ kind.salt());
    let params = match kind {
        MechanismKind::Slider => MechanismParams::Slider(SliderParams {
            track_angle: rng.gen_range(0.0..PI),
            track_length: rng.gen_range(SLIDER_LENGTH_RANGE.0..=SLIDER_LENGTH_RANGE.1),
            handle_offset: [
                rng.gen_range(SLIDER_OFFSET_RANGE.0..=SLIDER_OFFSET_RANGE.1),
                rng.gen_range(SLIDER_OFFSET_RANGE.0..=SLIDER_OFFSET_RANGE.1),
            ],
        }),
        MechanismKind::Door => MechanismParams::Door(DoorParams {
            radius: rng.gen_range(DOOR_RADIUS_RANGE.0..=DOOR_RADIUS_RANGE.1),
            hinge_sign: if rng.gen_bool(0.5) { 1 } else { -1 },
            axis_pitch: rng.gen_range(DOOR_PITCH_RANGE.0..=DOOR_PITCH_RANGE.1),
            max_angle: DOOR_MAX_ANGLE,
        }),
    };
    Mechanism { kind, seed, params }
}

impl Mechanism {
    pub fn generate(kind: MechanismKind, seed: u64) -> Self {
        generate_mechanism(kind, seed)
    }

    pub fn bounds(&self) -> ActionBounds {
        action_bounds(self.kind)
    }

    pub fn render(&self) -> ContextImage {
        render(self)
    }

    pub fn execute(&self, a: &[f64]) -> Result<f64> {
        execute_action(self, a)
    }

    pub fn optimal(&self) -> (Action, f64) {
        oracle_optimal(self)
    }

    /// Reward without the bounds check. Callers guarantee `a` is in bounds.
    pub(crate) fn reward_unchecked(&self, a: &[f64]) -> f64 {
        let distance = match self.params {
            MechanismParams::Slider(s) => {
                let projection = a[1] * (a[0] - s.track_angle).cos();
                projection.clamp(0.0, s.track_length)
            }
            MechanismParams::Door(d) => {
                let dr = (a[0] - d.radius) / DOOR_SIGMA_RADIUS;
                let dp = (a[2] - d.axis_pitch) / DOOR_SIGMA_PITCH;
                let alignment = (-0.5 * dr * dr).exp() * (-0.5 * dp * dp).exp();
                let angle = (f64::from(d.hinge_sign) * a[1] * alignment).clamp(0.0, d.max_angle);
                d.radius * angle
            }
        };
        if distance < MOTION_RESOLUTION {
            0.0
        } else {
            distance
        }
    }
}

/// Distance moved by the handle when `a` is applied to `m`.
pub fn execute_action(m: &Mechanism, a: &[f64]) -> Result<f64> {
    m.bounds().check(a)?;
    Ok(m.reward_unchecked(a))
}

/// Optimal action and reward. Used for evaluation only, never by the agent.
pub fn oracle_optimal(m: &Mechanism) -> (Action, f64) {
    match m.params {
        MechanismParams::Slider(s) => (
            Action(vec![s.track_angle, s.track_length]),
            s.track_length,
        ),
        MechanismParams::Door(d) => (
            Action(vec![
                d.radius,
                f64::from(d.hinge_sign) * d.max_angle,
                d.axis_pitch,
            ]),
            d.radius * d.max_angle,
        ),
    }
}

/// Row-major grayscale raster with pixels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ContextImage {
    pixels: Vec<f64>,
}

impl ContextImage {
    pub fn blank() -> Self {
        ContextImage {
            pixels: vec![0.0; IMAGE_SIZE * IMAGE_SIZE],
        }
    }

    pub fn from_pixels(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != IMAGE_SIZE * IMAGE_SIZE {
            return Err(Error::DimensionMismatch {
                expected: IMAGE_SIZE * IMAGE_SIZE,
                got: pixels.len(),
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("pixel outside [0, 1]".into()));
        }
        Ok(ContextImage { pixels })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMAGE_SIZE + col]
    }

    /// Binary PGM (P5, 8-bit).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{IMAGE_SIZE} {IMAGE_SIZE}\n255\n").into_bytes();
        out.extend(self.pixels.iter().map(|&p| (p * 255.0).round() as u8));
        out
    }
}

// Subsamples per pixel side for anti-aliasing.
const SUPERSAMPLE: usize = 4;
const CENTER: f64 = (IMAGE_SIZE / 2) as f64;

const TRACK_INTENSITY: f64 = 0.6;
const HANDLE_INTENSITY: f64 = 1.0;
const DOOR_PANEL_INTENSITY: f64 = 0.5;
const HINGE_INTENSITY: f64 = 0.3;
const TRACK_HALF_WIDTH: f64 = 1.0;
const DOOR_HEIGHT_PX: f64 = 24.0;

pub fn render(m: &Mechanism) -> ContextImage {
    match m.params {
        MechanismParams::Slider(s) => render_slider(&s),
        MechanismParams::Door(d) => render_door(&d),
    }
}

fn supersampled(mut shade: impl FnMut(f64, f64) -> f64) -> ContextImage {
    let mut img = ContextImage::blank();
    let step = 1.0 / SUPERSAMPLE as f64;
    let norm = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for row in 0..IMAGE_SIZE {
        for col in 0..IMAGE_SIZE {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                let y = row as f64 - 0.5 + (sy as f64 + 0.5) * step;
                for sx in 0..SUPERSAMPLE {
                    let x = col as f64 - 0.5 + (sx as f64 + 0.5) * step;
                    acc += shade(x, y);
                }
            }
            img.pixels[row * IMAGE_SIZE + col] = (acc / norm).clamp(0.0, 1.0);
        }
    }
    img
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (cx * cx + cy * cy).sqrt()
}

fn render_slider(s: &SliderParams) -> ContextImage {
    // Screen coordinates: x to the right, y down.
    let start = (
        CENTER + PIXELS_PER_METER * s.handle_offset[0],
        CENTER - PIXELS_PER_METER * s.handle_offset[1],
    );
    let len = PIXELS_PER_METER * s.track_length;
    let end = (
        start.0 + len * s.track_angle.cos(),
        start.1 - len * s.track_angle.sin(),
    );
    let mut img = supersampled(|x, y| {
        if segment_distance((x, y), start, end) <= TRACK_HALF_WIDTH {
            TRACK_INTENSITY
        } else {
            0.0
        }
    });
    let (hc, hr) = (start.0.round() as i64, start.1.round() as i64);
    for r in hr - 2..=hr + 2 {
        for c in hc - 2..=hc + 2 {
            if (0..IMAGE_SIZE as i64).contains(&r) && (0..IMAGE_SIZE as i64).contains(&c) {
                img.pixels[r as usize * IMAGE_SIZE + c as usize] = HANDLE_INTENSITY;
            }
        }
    }
    img
}

fn render_door(d: &DoorParams) -> ContextImage {
    let half_w = 0.5 * PIXELS_PER_METER * d.radius;
    let half_h = 0.5 * DOOR_HEIGHT_PX;
    let sign = f64::from(d.hinge_sign);
    let hinge_u = -sign * half_w;
    let handle_u = sign * (half_w - 2.5);
    let (sin, cos) = d.axis_pitch.sin_cos();
    supersampled(|x, y| {
        let (wx, wy) = (x - CENTER, CENTER - y);
        let u = wx * cos + wy * sin;
        let v = -wx * sin + wy * cos;
        if (u - handle_u).abs() <= 1.5 && v.abs() <= 1.5 {
            HANDLE_INTENSITY
        } else if (u - hinge_u).abs() <= 1.0 && v.abs() <= half_h + 1.0 {
            HINGE_INTENSITY
        } else if u.abs() <= half_w && v.abs() <= half_h {
            DOOR_PANEL_INTENSITY
        } else {
            0.0
        }
    })
}
