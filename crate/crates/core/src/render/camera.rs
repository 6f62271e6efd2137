//! Perspective cameras and the three-level view rig.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{add, cross, dot, norm, normalized, scale, sub, TriMesh, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub eye: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Degrees.
    pub vertical_fov: f64,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(eye: Vec3, look_at: Vec3, up: Vec3, vertical_fov: f64, near: f64, far: f64) -> Result<Self> {
        let f = sub(look_at, eye);
        if norm(f) == 0.0 {
            return Err(Error::Invalid("camera eye equals look_at".into()));
        }
        if !(vertical_fov > 0.0 && vertical_fov < 120.0) {
            return Err(Error::Invalid(format!("vertical fov {vertical_fov} outside (0, 120)")));
        }
        if norm(cross(f, up)) <= 1e-12 * norm(f) * norm(up) {
            return Err(Error::Invalid("camera up is parallel to the view direction".into()));
        }
        if !(near > 0.0 && far > near) {
            return Err(Error::Invalid(format!("clip planes near={near} far={far}")));
        }
        Ok(Self {
            eye,
            look_at,
            up,
            vertical_fov,
            near,
            far,
        })
    }

    /// Right, up and backward axes; world-to-camera is `(p − eye)·[r u b]`.
    pub fn basis(&self) -> [Vec3; 3] {
        let f = normalized(sub(self.look_at, self.eye));
        let r = normalized(cross(f, self.up));
        let u = cross(r, f);
        [r, u, scale(f, -1.0)]
    }

    pub fn focal(&self) -> f64 {
        1.0 / (self.vertical_fov.to_radians() / 2.0).tan()
    }

    pub fn distance(&self) -> f64 {
        norm(sub(self.look_at, self.eye))
    }

    /// Normalized device coordinates and normalized inverse depth of `p`.
    pub fn project(&self, p: Vec3) -> [f64; 3] {
        let [r, u, b] = self.basis();
        let rel = sub(p, self.eye);
        let depth = -dot(rel, b);
        let f = self.focal();
        [
            f * dot(rel, r) / depth,
            f * dot(rel, u) / depth,
            (self.far - depth) / (self.far - self.near),
        ]
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self {
            eye: add(self.eye, t),
            look_at: add(self.look_at, t),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    /// Landmark sets anchoring the close-up views, in view order.
    pub part_landmarks: Vec<String>,
    /// Eye-to-anchor distances of the three levels, in bounding radii.
    pub distances: [f64; 3],
    /// Degrees about the vertical axis for levels 2 and 3.
    pub azimuths: Vec<f64>,
    /// Degrees, per level.
    pub vertical_fov: [f64; 3],
    /// Near and far planes, in bounding radii.
    pub near: f64,
    pub far: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            part_landmarks: ["left_eye", "right_eye", "nose", "lips"].map(String::from).to_vec(),
            distances: [0.6, 1.5, 2.5],
            azimuths: vec![-45.0, 0.0, 45.0],
            vertical_fov: [30.0, 75.0, 50.0],
            near: 0.01,
            far: 100.0,
        }
    }
}

/// Views grouped by level: facial parts, close face, full face.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderRig {
    pub levels: Vec<Vec<Camera>>,
}

const UP: Vec3 = [0.0, 1.0, 0.0];
/// The face looks down +z.
const FRONT: Vec3 = [0.0, 0.0, 1.0];

impl RenderRig {
    pub fn build(mesh: &TriMesh, cfg: &RigConfig) -> Result<Self> {
        if !(cfg.distances[0] < cfg.distances[1] && cfg.distances[1] < cfg.distances[2] && cfg.distances[0] > 0.0) {
            return Err(Error::Config(format!("rig distances {:?} must increase", cfg.distances)));
        }
        let radius = mesh.bounding_radius();
        if !(radius > 0.0) {
            return Err(Error::Mesh("rig needs a mesh with positive extent".into()));
        }
        let (near, far) = (cfg.near * radius, cfg.far * radius);
        let cam = |anchor: Vec3, dir: Vec3, level: usize| {
            let d = cfg.distances[level] * radius;
            Camera::new(add(anchor, scale(dir, d)), anchor, UP, cfg.vertical_fov[level], near, far)
        };
        let parts = cfg
            .part_landmarks
            .iter()
            .map(|name| cam(mesh.landmark_centroid(name)?, FRONT, 0))
            .collect::<Result<Vec<_>>>()?;
        let center = mesh.centroid();
        let ring = |level: usize| {
            cfg.azimuths
                .iter()
                .map(|az| {
                    let a = az.to_radians();
                    cam(center, [a.sin(), 0.0, a.cos()], level)
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            levels: vec![parts, ring(1)?, ring(2)?],
        })
    }

    /// Cameras in (level, view) order.
    pub fn cameras(&self) -> impl Iterator<Item = &Camera> {
        self.levels.iter().flatten()
    }

    /// `(level, view)` pairs, both 1-based, in camera order.
    pub fn labels(&self) -> Vec<(usize, usize)> {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(l, cams)| (0..cams.len()).map(move |v| (l + 1, v + 1)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self {
            levels: self
                .levels
                .iter()
                .map(|l| l.iter().map(|c| c.translated(t)).collect())
                .collect(),
        }
    }
}
