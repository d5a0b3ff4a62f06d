//! Synthetic action catalog with planted important joints.
//!
//! Every class moves a documented set of joints along a sinusoid on top of a
//! standing rest pose. All other joints stay at rest, apart from Gaussian
//! positional noise. The displacement of planted joint `v` at frame `t` is
//!
//! ```text
//! amplitude * weight(v) * sin(2*pi*cycles*t/T + phase) * direction
//! ```
//!
//! where `direction` is a unit vector and `phase` is drawn per sample.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{joint::*, NTU_JOINTS};
use super::SkeletonSequence;
use crate::error::{Error, Result};
use crate::seed::mix;

pub const DEFAULT_FRAMES: usize = 64;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.005;

/// Standing pose in meters, Kinect camera frame (y up, z away from the sensor).
pub const REST_POSE: [[f64; 3]; NTU_JOINTS] = [
    [0.00, 0.00, 3.00],   // spine base
    [0.00, 0.28, 3.00],   // spine mid
    [0.00, 0.58, 3.00],   // neck
    [0.00, 0.72, 3.00],   // head
    [-0.18, 0.48, 3.00],  // shoulder L
    [-0.24, 0.22, 3.00],  // elbow L
    [-0.26, -0.02, 3.00], // wrist L
    [-0.27, -0.09, 3.00], // hand L
    [0.18, 0.48, 3.00],   // shoulder R
    [0.24, 0.22, 3.00],   // elbow R
    [0.26, -0.02, 3.00],  // wrist R
    [0.27, -0.09, 3.00],  // hand R
    [-0.09, -0.02, 3.00], // hip L
    [-0.10, -0.45, 3.00], // knee L
    [-0.10, -0.85, 3.00], // ankle L
    [-0.10, -0.90, 2.90], // foot L
    [0.09, -0.02, 3.00],  // hip R
    [0.10, -0.45, 3.00],  // knee R
    [0.10, -0.85, 3.00],  // ankle R
    [0.10, -0.90, 2.90],  // foot R
    [0.00, 0.50, 3.00],   // spine shoulder
    [-0.28, -0.16, 3.00], // hand tip L
    [-0.24, -0.10, 2.97], // thumb L
    [0.28, -0.16, 3.00],  // hand tip R
    [0.24, -0.10, 2.97],  // thumb R
];

#[derive(Debug, Clone, Copy)]
pub struct ActionClass {
    pub id: usize,
    pub name: &'static str,
    /// Peak displacement in meters of a joint with weight 1.
    pub amplitude_m: f64,
    pub cycles: f64,
    /// Unit direction of motion.
    pub direction: [f64; 3],
    /// `(joint, signed weight)`, with `0 < |weight| <= 1`.
    pub planted: &'static [(usize, f64)],
}

impl ActionClass {
    pub fn planted_joints(&self) -> Vec<usize> {
        self.planted.iter().map(|&(v, _)| v).collect()
    }

    /// Peak displacement of `joint`, zero when not planted.
    pub fn joint_amplitude(&self, joint: usize) -> f64 {
        self.planted
            .iter()
            .find(|&&(v, _)| v == joint)
            .map_or(0.0, |&(_, w)| self.amplitude_m * w)
    }
}

const UP: [f64; 3] = [0.0, 1.0, 0.0];
const RIGHT: [f64; 3] = [1.0, 0.0, 0.0];
const TOWARD: [f64; 3] = [0.0, 0.0, -1.0];

pub const CATALOG: [ActionClass; 8] = [
    ActionClass {
        id: 0,
        name: "raise right arm",
        amplitude_m: 0.30,
        cycles: 1.0,
        direction: UP,
        planted: &[
            (ELBOW_RIGHT, 0.5),
            (WRIST_RIGHT, 0.9),
            (HAND_RIGHT, 1.0),
            (HAND_TIP_RIGHT, 1.0),
            (THUMB_RIGHT, 1.0),
        ],
    },
    ActionClass {
        id: 1,
        name: "raise left arm",
        amplitude_m: 0.30,
        cycles: 1.0,
        direction: UP,
        planted: &[
            (ELBOW_LEFT, 0.5),
            (WRIST_LEFT, 0.9),
            (HAND_LEFT, 1.0),
            (HAND_TIP_LEFT, 1.0),
            (THUMB_LEFT, 1.0),
        ],
    },
    ActionClass {
        id: 2,
        name: "wave right hand",
        amplitude_m: 0.12,
        cycles: 4.0,
        direction: RIGHT,
        planted: &[
            (WRIST_RIGHT, 0.7),
            (HAND_RIGHT, 1.0),
            (HAND_TIP_RIGHT, 1.0),
            (THUMB_RIGHT, 1.0),
        ],
    },
    ActionClass {
        id: 3,
        name: "kick right leg",
        amplitude_m: 0.25,
        cycles: 1.5,
        direction: TOWARD,
        planted: &[(KNEE_RIGHT, 0.5), (ANKLE_RIGHT, 1.0), (FOOT_RIGHT, 1.0)],
    },
    ActionClass {
        id: 4,
        name: "kick left leg",
        amplitude_m: 0.25,
        cycles: 1.5,
        direction: TOWARD,
        planted: &[(KNEE_LEFT, 0.5), (ANKLE_LEFT, 1.0), (FOOT_LEFT, 1.0)],
    },
    ActionClass {
        id: 5,
        name: "nod head",
        amplitude_m: 0.15,
        cycles: 3.0,
        direction: TOWARD,
        planted: &[(HEAD, 1.0), (NECK, 0.5)],
    },
    ActionClass {
        id: 6,
        name: "bow",
        amplitude_m: 0.30,
        cycles: 1.0,
        direction: TOWARD,
        planted: &[(SPINE_SHOULDER, 0.6), (NECK, 0.85), (HEAD, 1.0)],
    },
    ActionClass {
        id: 7,
        name: "clap",
        amplitude_m: 0.10,
        cycles: 4.0,
        direction: RIGHT,
        // hands move toward each other: left along +x, right along -x
        planted: &[
            (HAND_LEFT, 1.0),
            (HAND_TIP_LEFT, 1.0),
            (HAND_RIGHT, -1.0),
            (HAND_TIP_RIGHT, -1.0),
        ],
    },
];

pub fn class_count() -> usize {
    CATALOG.len()
}

pub fn action_class(class_id: usize) -> Result<&'static ActionClass> {
    CATALOG
        .get(class_id)
        .ok_or_else(|| Error::Config(format!("unknown synthetic class {class_id}")))
}

/// Planted joints of a catalog class.
pub fn planted_joints(class_id: usize) -> Result<Vec<usize>> {
    Ok(action_class(class_id)?.planted_joints())
}

/// Phase of a generated sample, exposed so tests can rebuild the trajectory.
pub fn sample_phase(class_id: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, class_id as u64, 0x5e9]));
    rng.random::<f64>() * TAU
}

pub fn synth_generate(
    class_id: usize,
    seed: u64,
    frames: usize,
    noise_sigma: f64,
) -> Result<SkeletonSequence> {
    let class = action_class(class_id)?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let phase = sample_phase(class_id, seed);
    let noise = Normal::new(0.0, noise_sigma)
        .map_err(|e| Error::Config(format!("noise_sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, class_id as u64, 0x401e]));

    let mut positions = Vec::with_capacity(frames * NTU_JOINTS * 3);
    for t in 0..frames {
        let s = (TAU * class.cycles * t as f64 / frames as f64 + phase).sin();
        for (v, rest) in REST_POSE.iter().enumerate() {
            let a = class.joint_amplitude(v) * s;
            for c in 0..3 {
                let mut p = rest[c] + a * class.direction[c];
                if noise_sigma > 0.0 {
                    p += noise.sample(&mut rng);
                }
                positions.push(p);
            }
        }
    }
    SkeletonSequence::new(
        frames,
        NTU_JOINTS,
        positions,
        class_id,
        format!("synth-c{class_id:02}-{seed:016x}"),
    )
}
