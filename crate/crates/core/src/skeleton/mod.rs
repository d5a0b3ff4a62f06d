//! Skeleton sequences, the NTU 25-joint kinematic tree, file IO and the
//! three-branch (joint / velocity / bone) preprocessing.

mod graph;
mod ntu;
mod preprocess;
pub mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use graph::{build_ntu_graph, joint, SkeletonGraph, NTU_JOINTS, NTU_ROOT};
pub use ntu::{label_from_filename, parse_ntu_file, parse_ntu_skeleton, write_ntu_skeleton};
pub use preprocess::{preprocess, MultiBranchInput};

/// A `T x V x 3` sequence of joint positions in meters.
///
/// Positions are stored frame-major, `[t][v][xyz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: usize,
    joints: usize,
    positions: Vec<f64>,
    pub label: usize,
    pub sample_id: String,
}

impl SkeletonSequence {
    pub fn new(
        frames: usize,
        joints: usize,
        positions: Vec<f64>,
        label: usize,
        sample_id: impl Into<String>,
    ) -> Result<Self> {
        if frames < 2 {
            return Err(Error::InvalidSequence(format!(
                "need at least 2 frames, got {frames}"
            )));
        }
        if joints == 0 {
            return Err(Error::InvalidSequence("zero joints".into()));
        }
        if positions.len() != frames * joints * 3 {
            return Err(Error::InvalidSequence(format!(
                "expected {} coordinates for {frames}x{joints}x3, got {}",
                frames * joints * 3,
                positions.len()
            )));
        }
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidSequence(format!(
                "non-finite coordinate at frame {}, joint {}",
                i / (joints * 3),
                (i / 3) % joints
            )));
        }
        Ok(Self {
            frames,
            joints,
            positions,
            label,
            sample_id: sample_id.into(),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    #[inline]
    pub fn position(&self, t: usize, v: usize) -> [f64; 3] {
        let i = (t * self.joints + v) * 3;
        [self.positions[i], self.positions[i + 1], self.positions[i + 2]]
    }

    /// Returns a copy whose coordinates were rewritten by `f(t, v, xyz)`.
    /// Used by the perturbation module; the closure must keep values finite.
    pub(crate) fn map_positions(&self, mut f: impl FnMut(usize, usize, [f64; 3]) -> [f64; 3]) -> Self {
        let mut positions = self.positions.clone();
        for t in 0..self.frames {
            for v in 0..self.joints {
                let i = (t * self.joints + v) * 3;
                let p = f(t, v, [positions[i], positions[i + 1], positions[i + 2]]);
                positions[i..i + 3].copy_from_slice(&p);
            }
        }
        Self {
            positions,
            ..self.clone()
        }
    }

    pub fn to_doc(&self) -> SampleDoc {
        let positions = (0..self.frames)
            .map(|t| (0..self.joints).map(|v| self.position(t, v)).collect())
            .collect();
        SampleDoc {
            sample_id: self.sample_id.clone(),
            label: self.label,
            frames: self.frames,
            joints: self.joints,
            positions,
        }
    }

    pub fn from_doc(doc: SampleDoc) -> Result<Self> {
        if doc.positions.len() != doc.frames {
            return Err(Error::InvalidSequence(format!(
                "header says {} frames, positions has {}",
                doc.frames,
                doc.positions.len()
            )));
        }
        let mut flat = Vec::with_capacity(doc.frames * doc.joints * 3);
        for (t, frame) in doc.positions.iter().enumerate() {
            if frame.len() != doc.joints {
                return Err(Error::InvalidSequence(format!(
                    "frame {t} has {} joints, header says {}",
                    frame.len(),
                    doc.joints
                )));
            }
            for p in frame {
                flat.extend_from_slice(p);
            }
        }
        Self::new(doc.frames, doc.joints, flat, doc.label, doc.sample_id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(text)?)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// JSON interchange document for one sample (units: meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDoc {
    pub sample_id: String,
    pub label: usize,
    pub frames: usize,
    pub joints: usize,
    pub positions: Vec<Vec<[f64; 3]>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_frame() {
        let err = SkeletonSequence::new(1, 25, vec![0.0; 75], 0, "x").unwrap_err();
        assert!(matches!(err, Error::InvalidSequence(_)));
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = vec![0.0; 2 * 3 * 3];
        p[7] = f64::NAN;
        assert!(SkeletonSequence::new(2, 3, p, 0, "x").is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p: Vec<f64> = (0..2 * 25 * 3).map(|i| (i as f64).sin() * 0.731).collect();
        let seq = SkeletonSequence::new(2, 25, p, 4, "sample").unwrap();
        let back = SkeletonSequence::from_json(&seq.to_json().unwrap()).unwrap();
        assert_eq!(seq, back);
    }
}
