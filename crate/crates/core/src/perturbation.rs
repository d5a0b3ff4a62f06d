//! Spherical-coordinate joint perturbation.
//!
//! Each targeted joint gets one displacement of length `r`, direction given
//! by an azimuth `theta` and a polar angle `phi`, and that same displacement
//! is added to the joint in every frame:
//!
//! ```text
//! dx = r sin(phi) cos(theta)
//! dy = r sin(phi) sin(theta)
//! dz = r cos(phi)
//! ```
//!
//! The angles come from two standard-normal draws `z1, z2`, wrapped into
//! range as `theta = z1 mod 2pi` and `phi = |z2| mod pi`. The draws are keyed
//! by `(seed, draw_index, joint)` only, so a joint receives the same offset
//! whatever other joints are targeted alongside it.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::mix;
use crate::skeleton::SkeletonSequence;

/// Converts a radius given in centimeters to meters.
pub fn cm_to_m(cm: f64) -> f64 {
    cm / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub radius_m: f64,
    pub targets: Vec<usize>,
    pub seed: u64,
    pub samples: usize,
}

impl PerturbationSpec {
    pub fn new(radius_m: f64, targets: Vec<usize>, seed: u64, samples: usize) -> Result<Self> {
        let spec = Self {
            radius_m,
            targets,
            seed,
            samples,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_cm(radius_cm: f64, targets: Vec<usize>, seed: u64, samples: usize) -> Result<Self> {
        Self::new(cm_to_m(radius_cm), targets, seed, samples)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_m >= 0.0 && self.radius_m.is_finite()) {
            return Err(Error::Config(format!(
                "radius must be finite and >= 0, got {}",
                self.radius_m
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("perturbation samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointOffset {
    pub theta: f64,
    pub phi: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl JointOffset {
    pub fn from_angles(radius_m: f64, theta: f64, phi: f64) -> Self {
        Self {
            theta,
            phi,
            dx: radius_m * phi.sin() * theta.cos(),
            dy: radius_m * phi.sin() * theta.sin(),
            dz: radius_m * phi.cos(),
        }
    }

    pub fn vector(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn norm(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy + self.dz * self.dz).sqrt()
    }
}

/// Offset of one joint for one draw.
pub fn joint_offset(radius_m: f64, seed: u64, draw_index: usize, joint: usize) -> JointOffset {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, draw_index as u64, joint as u64]));
    let z1: f64 = StandardNormal.sample(&mut rng);
    let z2: f64 = StandardNormal.sample(&mut rng);
    let theta = z1.rem_euclid(TAU);
    let phi = z2.abs() % PI;
    JointOffset::from_angles(radius_m, theta, phi)
}

pub fn draw_offsets(spec: &PerturbationSpec, draw_index: usize) -> BTreeMap<usize, JointOffset> {
    spec.targets
        .iter()
        .map(|&v| (v, joint_offset(spec.radius_m, spec.seed, draw_index, v)))
        .collect()
}

/// Adds each target's fixed offset to that joint in every frame.
pub fn perturb(
    seq: &SkeletonSequence,
    spec: &PerturbationSpec,
    draw_index: usize,
) -> Result<SkeletonSequence> {
    let joints = seq.joints();
    if let Some(&joint) = spec.targets.iter().find(|&&v| v >= joints) {
        return Err(Error::Target { joint, joints });
    }
    let mut offsets: Vec<Option<[f64; 3]>> = vec![None; joints];
    for (v, off) in draw_offsets(spec, draw_index) {
        offsets[v] = Some(off.vector());
    }
    Ok(seq.map_positions(|_, v, p| match offsets[v] {
        Some(d) => [p[0] + d[0], p[1] + d[1], p[2] + d[2]],
        None => p,
    }))
}

/// The neighborhood of `seq` used by the stability metrics: `samples`
/// perturbations of the given spec, one per draw index.
pub fn neighborhood(seq: &SkeletonSequence, spec: &PerturbationSpec) -> Result<Vec<SkeletonSequence>> {
    (0..spec.samples).map(|i| perturb(seq, spec, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::synth::synth_generate;
    use proptest::prelude::*;

    fn seq() -> SkeletonSequence {
        synth_generate(2, 11, 16, 0.005).unwrap()
    }

    #[test]
    fn zero_radius_gives_zero_offsets() {
        let spec = PerturbationSpec::new(0.0, (0..25).collect(), 3, 1).unwrap();
        for off in draw_offsets(&spec, 0).values() {
            assert_eq!(off.vector().map(f64::abs), [0.0; 3]);
        }
        let s = seq();
        assert_eq!(perturb(&s, &spec, 0).unwrap(), s);
    }

    #[test]
    fn offsets_have_radius_norm() {
        let spec = PerturbationSpec::from_cm(2.5, (0..25).collect(), 42, 1).unwrap();
        for draw in 0..20 {
            for off in draw_offsets(&spec, draw).values() {
                assert!((off.norm() - 0.025).abs() <= 0.025 * 1e-12);
                assert!((0.0..TAU).contains(&off.theta));
                assert!((0.0..PI).contains(&off.phi));
            }
        }
        assert_eq!(draw_offsets(&spec, 3), draw_offsets(&spec, 3));
    }

    #[test]
    fn empty_targets_is_identity() {
        let spec = PerturbationSpec::new(0.4, vec![], 1, 1).unwrap();
        let s = seq();
        assert_eq!(perturb(&s, &spec, 0).unwrap(), s);
    }

    #[test]
    fn offsets_independent_of_target_set() {
        let a = PerturbationSpec::new(0.1, vec![3, 7], 9, 1).unwrap();
        let b = PerturbationSpec::new(0.1, vec![7, 20, 1], 9, 1).unwrap();
        assert_eq!(draw_offsets(&a, 4)[&7], draw_offsets(&b, 4)[&7]);
    }

    #[test]
    fn draw_indices_differ_but_reproduce() {
        let spec = PerturbationSpec::new(0.05, vec![10, 11], 5, 2).unwrap();
        let s = seq();
        let p0 = perturb(&s, &spec, 0).unwrap();
        let p1 = perturb(&s, &spec, 1).unwrap();
        assert_ne!(p0, p1);
        assert_eq!(p0, perturb(&s, &spec, 0).unwrap());
        assert_eq!(p1, perturb(&s, &spec, 1).unwrap());
    }

    #[test]
    fn target_out_of_range() {
        let spec = PerturbationSpec::new(0.05, vec![25], 5, 1).unwrap();
        assert!(matches!(
            perturb(&seq(), &spec, 0),
            Err(Error::Target { joint: 25, joints: 25 })
        ));
    }

    #[test]
    fn invalid_specs() {
        assert!(PerturbationSpec::new(-0.1, vec![], 0, 1).is_err());
        assert!(PerturbationSpec::new(f64::NAN, vec![], 0, 1).is_err());
        assert!(PerturbationSpec::new(0.1, vec![], 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn exact_radius_frame_constant_and_local(
            radius_cm in 0.5f64..100.0,
            seed in any::<u64>(),
            draw in 0usize..50,
            targets in prop::collection::btree_set(0usize..25, 0..25),
        ) {
            let s = seq();
            let spec = PerturbationSpec::from_cm(radius_cm, targets.iter().copied().collect(), seed, 1).unwrap();
            let out = perturb(&s, &spec, draw).unwrap();
            let offsets = draw_offsets(&spec, draw);
            for t in 0..s.frames() {
                for v in 0..25 {
                    let (a, b) = (s.position(t, v), out.position(t, v));
                    match offsets.get(&v) {
                        None => prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits)),
                        Some(off) => {
                            let d: Vec<f64> = (0..3).map(|c| b[c] - a[c]).collect();
                            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                            prop_assert!((n - spec.radius_m).abs() <= 1e-9 * spec.radius_m);
                            for (dc, oc) in d.iter().zip(off.vector()) {
                                prop_assert!((dc - oc).abs() <= 1e-14);
                            }
                        }
                    }
                }
            }
            prop_assert_eq!(out.label, s.label);
            prop_assert_eq!(&out.sample_id, &s.sample_id);
        }
    }
}
