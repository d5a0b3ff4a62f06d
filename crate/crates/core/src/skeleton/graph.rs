use crate::error::{Error, Result};

pub const NTU_JOINTS: usize = 25;
/// Middle of the spine.
pub const NTU_ROOT: usize = joint::SPINE_MID;

/// Kinect v2 / NTU RGB+D joint indices (0-based).
pub mod joint {
    pub const SPINE_BASE: usize = 0;
    pub const SPINE_MID: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const SHOULDER_LEFT: usize = 4;
    pub const ELBOW_LEFT: usize = 5;
    pub const WRIST_LEFT: usize = 6;
    pub const HAND_LEFT: usize = 7;
    pub const SHOULDER_RIGHT: usize = 8;
    pub const ELBOW_RIGHT: usize = 9;
    pub const WRIST_RIGHT: usize = 10;
    pub const HAND_RIGHT: usize = 11;
    pub const HIP_LEFT: usize = 12;
    pub const KNEE_LEFT: usize = 13;
    pub const ANKLE_LEFT: usize = 14;
    pub const FOOT_LEFT: usize = 15;
    pub const HIP_RIGHT: usize = 16;
    pub const KNEE_RIGHT: usize = 17;
    pub const ANKLE_RIGHT: usize = 18;
    pub const FOOT_RIGHT: usize = 19;
    pub const SPINE_SHOULDER: usize = 20;
    pub const HAND_TIP_LEFT: usize = 21;
    pub const THUMB_LEFT: usize = 22;
    pub const HAND_TIP_RIGHT: usize = 23;
    pub const THUMB_RIGHT: usize = 24;
}

/// (child, parent) pairs of the NTU kinematic tree rooted at the spine middle.
const NTU_EDGES: [(usize, usize); NTU_JOINTS - 1] = {
    use joint::*;
    [
        (SPINE_BASE, SPINE_MID),
        (SPINE_SHOULDER, SPINE_MID),
        (NECK, SPINE_SHOULDER),
        (HEAD, NECK),
        (SHOULDER_LEFT, SPINE_SHOULDER),
        (ELBOW_LEFT, SHOULDER_LEFT),
        (WRIST_LEFT, ELBOW_LEFT),
        (HAND_LEFT, WRIST_LEFT),
        (THUMB_LEFT, HAND_LEFT),
        (HAND_TIP_LEFT, THUMB_LEFT),
        (SHOULDER_RIGHT, SPINE_SHOULDER),
        (ELBOW_RIGHT, SHOULDER_RIGHT),
        (WRIST_RIGHT, ELBOW_RIGHT),
        (HAND_RIGHT, WRIST_RIGHT),
        (THUMB_RIGHT, HAND_RIGHT),
        (HAND_TIP_RIGHT, THUMB_RIGHT),
        (HIP_LEFT, SPINE_BASE),
        (KNEE_LEFT, HIP_LEFT),
        (ANKLE_LEFT, KNEE_LEFT),
        (FOOT_LEFT, ANKLE_LEFT),
        (HIP_RIGHT, SPINE_BASE),
        (KNEE_RIGHT, HIP_RIGHT),
        (ANKLE_RIGHT, KNEE_RIGHT),
        (FOOT_RIGHT, ANKLE_RIGHT),
    ]
};

/// A rooted skeleton tree plus its symmetric normalized adjacency
/// `D^-1/2 (A + I) D^-1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    node_count: usize,
    root: usize,
    edges: Vec<(usize, usize)>,
    parent: Vec<Option<usize>>,
    adjacency: Vec<f64>,
    /// Nonzero entries of each adjacency row, `(column, weight)`.
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl SkeletonGraph {
    /// Builds a graph from `(child, parent)` edges. The edge set must be a
    /// spanning tree over `node_count` nodes rooted at `root`.
    pub fn from_tree(node_count: usize, root: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count == 0 || root >= node_count {
            return Err(Error::Config(format!(
                "root {root} invalid for {node_count} nodes"
            )));
        }
        if edges.len() + 1 != node_count {
            return Err(Error::Config(format!(
                "a tree over {node_count} nodes needs {} edges, got {}",
                node_count - 1,
                edges.len()
            )));
        }
        let mut parent = vec![None; node_count];
        for &(child, par) in edges {
            if child >= node_count || par >= node_count || child == par {
                return Err(Error::Config(format!("bad edge ({child}, {par})")));
            }
            if child == root {
                return Err(Error::Config("root cannot have a parent".into()));
            }
            if parent[child].replace(par).is_some() {
                return Err(Error::Config(format!("joint {child} has two parents")));
            }
        }
        // Every node must reach the root without revisiting a node.
        for start in 0..node_count {
            let mut v = start;
            let mut steps = 0;
            while v != root {
                v = parent[v].ok_or_else(|| Error::Config(format!("joint {v} is detached")))?;
                steps += 1;
                if steps > node_count {
                    return Err(Error::Config("cycle in skeleton edges".into()));
                }
            }
        }

        let n = node_count;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        for &(c, p) in edges {
            a[c * n + p] = 1.0;
            a[p * n + c] = 1.0;
        }
        let deg: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] /= (deg[i] * deg[j]).sqrt();
            }
        }
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| a[i * n + j] != 0.0)
                    .map(|j| (j, a[i * n + j]))
                    .collect()
            })
            .collect();

        Ok(Self {
            node_count,
            root,
            edges: edges.to_vec(),
            parent,
            adjacency: a,
            neighbors,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    /// Row-major `V x V` normalized adjacency.
    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.neighbors[v]
    }
}

pub fn build_ntu_graph() -> SkeletonGraph {
    SkeletonGraph::from_tree(NTU_JOINTS, NTU_ROOT, &NTU_EDGES).expect("NTU tree is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ntu_graph_is_spanning_tree() {
        let g = build_ntu_graph();
        assert_eq!(g.node_count(), 25);
        assert_eq!(g.edges().len(), 24);
        // connectivity via union-find over undirected edges
        let mut comp: Vec<usize> = (0..25).collect();
        fn find(c: &mut [usize], x: usize) -> usize {
            if c[x] != x {
                let r = find(c, c[x]);
                c[x] = r;
            }
            c[x]
        }
        for &(a, b) in g.edges() {
            let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
            assert_ne!(ra, rb, "edge ({a},{b}) closes a cycle");
            comp[ra] = rb;
        }
        let r0 = find(&mut comp, 0);
        assert!((0..25).all(|v| find(&mut comp, v) == r0));
        for v in 0..25 {
            assert_eq!(g.parent(v).is_none(), v == NTU_ROOT);
        }
    }

    #[test]
    fn adjacency_symmetric_and_matches_definition() {
        let g = build_ntu_graph();
        let n = g.node_count();
        let a = g.adjacency();
        // recompute D^-1/2 (A+I) D^-1/2 directly from the edge list
        let mut raw = vec![vec![0.0f64; n]; n];
        for (i, row) in raw.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &(c, p) in g.edges() {
            raw[c][p] = 1.0;
            raw[p][c] = 1.0;
        }
        let d: Vec<f64> = raw.iter().map(|r| r.iter().sum()).collect();
        for i in 0..n {
            let row_sum: f64 = a[i * n..(i + 1) * n].iter().sum();
            assert!(row_sum.is_finite() && row_sum > 0.0);
            for j in 0..n {
                assert_eq!(a[i * n + j], a[j * n + i]);
                let want = raw[i][j] / (d[i] * d[j]).sqrt();
                assert!((a[i * n + j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_cycles_and_double_parents() {
        assert!(SkeletonGraph::from_tree(3, 0, &[(1, 2), (2, 1)]).is_err());
        assert!(SkeletonGraph::from_tree(3, 0, &[(1, 0), (1, 2)]).is_err());
        assert!(SkeletonGraph::from_tree(3, 0, &[(1, 0)]).is_err());
        assert!(SkeletonGraph::from_tree(3, 0, &[(1, 0), (2, 1)]).is_ok());
    }
}
