use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Rigid transform `x -> rotation * x + translation` (mm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: [f64; 3]) -> Self {
        RigidTransform {
            rotation,
            translation: Vector3::from(translation),
        }
    }

    /// Rotation from XYZ Euler angles in degrees (X applied first).
    pub fn from_euler_deg(angles: [f64; 3], translation: [f64; 3]) -> Self {
        let [x, y, z] = angles.map(f64::to_radians);
        Self::new(*Rotation3::from_euler_angles(x, y, z).matrix(), translation)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|x| x.is_finite()) {
            return Err(Error::Config("pose contains non-finite values".into()));
        }
        let gram = self.rotation.transpose() * self.rotation;
        if (gram - Matrix3::identity()).abs().max() > 1e-6 || self.rotation.determinant() < 0.0 {
            return Err(Error::Config("pose rotation is not a proper orthonormal matrix".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let w = self.rotation * Vector3::from(p) + self.translation;
        [w.x, w.y, w.z]
    }

    #[inline]
    pub fn apply_vector(&self, d: [f64; 3]) -> [f64; 3] {
        let w = self.rotation * Vector3::from(d);
        [w.x, w.y, w.z]
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRepr {
            rotation: self.rotation_row_major(),
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        Ok(RigidTransform::new(Matrix3::from_row_slice(&r.rotation), r.translation))
    }
}

/// `frames` poses starting at `start`, each translated by `step` mm.
pub fn linear_trajectory(start: RigidTransform, step: [f64; 3], frames: usize) -> Vec<RigidTransform> {
    (0..frames)
        .map(|i| {
            let mut p = start;
            p.translation += Vector3::from(step) * i as f64;
            p
        })
        .collect()
}
