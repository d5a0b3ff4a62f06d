use super::{SkeletonGraph, SkeletonSequence};
use crate::error::{Error, Result};

/// The three model input streams, each `T x V x 3`, layout `[t][v][xyz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBranchInput {
    pub frames: usize,
    pub joints: usize,
    /// Positions relative to the root joint of the same frame.
    pub joint: Vec<f64>,
    /// One-step forward difference; the last frame repeats, giving zero.
    pub velocity: Vec<f64>,
    /// Child minus parent; zero at the root.
    pub bone: Vec<f64>,
}

impl MultiBranchInput {
    pub fn branches(&self) -> [&[f64]; 3] {
        [&self.joint, &self.velocity, &self.bone]
    }

    pub fn len(&self) -> usize {
        self.frames * self.joints * 3
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn preprocess(seq: &SkeletonSequence, graph: &SkeletonGraph) -> Result<MultiBranchInput> {
    let (t_len, v_len) = (seq.frames(), seq.joints());
    if graph.node_count() != v_len {
        return Err(Error::Preprocess(format!(
            "sequence has {v_len} joints, graph has {}",
            graph.node_count()
        )));
    }
    let n = t_len * v_len * 3;
    let mut joint = vec![0.0; n];
    let mut velocity = vec![0.0; n];
    let mut bone = vec![0.0; n];
    let root = graph.root();
    for t in 0..t_len {
        let next = (t + 1).min(t_len - 1);
        let r = seq.position(t, root);
        for v in 0..v_len {
            let p = seq.position(t, v);
            let q = seq.position(next, v);
            let parent = graph.parent(v).map(|u| seq.position(t, u));
            let i = (t * v_len + v) * 3;
            for c in 0..3 {
                joint[i + c] = p[c] - r[c];
                velocity[i + c] = q[c] - p[c];
                bone[i + c] = parent.map_or(0.0, |u| p[c] - u[c]);
            }
        }
    }
    Ok(MultiBranchInput {
        frames: t_len,
        joints: v_len,
        joint,
        velocity,
        bone,
    })
}
