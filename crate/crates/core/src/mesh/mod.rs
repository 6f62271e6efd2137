//! Indexed triangle meshes and the geometry operations built on them.

mod normals;
pub mod obj;
mod query;
mod sampling;
mod simplify;
mod subdivide;

use std::collections::BTreeMap;
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use normals::{face_normals, face_normals_var, vertex_normals, FaceNormals};
pub use query::{closest_point, point_triangle_distance_sq, ClosestPoint};
pub use sampling::{
    hybrid_sample, sample_surface, sims_sample, vertex_only_points, SamplingStrategy, StencilSet,
    SurfaceSample, HYBRID_SURFACE_RATIO, SIMS_RATIO,
};
pub use simplify::{simplify, Simplified};
pub use subdivide::{loop_subdivide, loop_subdivide_with_stencil};

pub type Vec3 = [f64; 3];

/// Named lists of 0-based vertex indices ("left_eye", "nose", ...).
pub type Landmarks = BTreeMap<String, Vec<usize>>;

/// Indexed triangle surface with counter-clockwise winding.
///
/// `F = 0` is allowed and denotes a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    landmarks: Landmarks,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::Mesh(format!(
                    "face {fi} {f:?} references a vertex beyond {n}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Mesh(format!("face {fi} {f:?} is degenerate")));
            }
        }
        if vertices.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Mesh("non-finite vertex coordinate".into()));
        }
        Ok(Self {
            vertices,
            faces,
            landmarks: Landmarks::new(),
        })
    }

    pub fn point_cloud(points: Vec<Vec3>) -> Result<Self> {
        Self::new(points, vec![])
    }

    pub fn with_landmarks(mut self, landmarks: Landmarks) -> Result<Self> {
        for (name, idx) in &landmarks {
            if let Some(&bad) = idx.iter().find(|&&i| i >= self.vertices.len()) {
                return Err(Error::Mesh(format!(
                    "landmark `{name}` index {bad} out of range"
                )));
            }
        }
        self.landmarks = landmarks;
        Ok(self)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn landmarks(&self) -> &Landmarks {
        &self.landmarks
    }

    pub fn landmark(&self, name: &str) -> Result<&[usize]> {
        self.landmarks
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingLandmark(name.to_string()))
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity and landmarks, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Mesh(format!(
                "with_vertices: expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            landmarks: self.landmarks.clone(),
        })
    }

    /// Vertices as a `[V, 3]` tensor.
    pub fn vertex_tensor(&self) -> Tensor {
        Tensor::from_parts(
            vec![self.vertices.len(), 3],
            self.vertices.iter().flatten().copied().collect(),
        )
    }

    pub fn from_vertex_tensor(&self, t: &Tensor) -> Result<Self> {
        if t.shape() != [self.vertices.len(), 3] {
            return Err(Error::Shape(format!(
                "expected vertex tensor [{}, 3], got {:?}",
                self.vertices.len(),
                t.shape()
            )));
        }
        self.with_vertices(t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Per-corner vertex index lists for gathering face corners.
    pub fn corners(&self) -> [Rc<[usize]>; 3] {
        let c = |k: usize| -> Rc<[usize]> { self.faces.iter().map(|f| f[k]).collect() };
        [c(0), c(1), c(2)]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn face_areas(&self) -> Vec<f64> {
        (0..self.faces.len()).map(|f| self.face_area(f)).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    /// Mean of the vertex positions.
    pub fn centroid(&self) -> Vec3 {
        centroid(&self.vertices)
    }

    /// Largest vertex distance from [`centroid`](Self::centroid).
    pub fn bounding_radius(&self) -> f64 {
        let c = self.centroid();
        self.vertices
            .iter()
            .map(|&v| norm(sub(v, c)))
            .fold(0.0, f64::max)
    }

    /// Centroid of the landmark set's vertices.
    pub fn landmark_centroid(&self, name: &str) -> Result<Vec3> {
        let idx = self.landmark(name)?;
        if idx.is_empty() {
            return Err(Error::MissingLandmark(name.to_string()));
        }
        Ok(centroid(&idx.iter().map(|&i| self.vertices[i]).collect::<Vec<_>>()))
    }

    /// Unique undirected edges `(a, b)` with `a < b`, in first-seen order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let e = (a.min(b), a.max(b));
                if seen.insert(e) {
                    out.push(e);
                }
            }
        }
        out
    }

    /// Sorted one-ring neighbour lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            nb[a].push(b);
            nb[b].push(a);
        }
        for n in &mut nb {
            n.sort_unstable();
        }
        nb
    }

    pub fn translated(&self, t: Vec3) -> Self {
        let mut m = self.clone();
        m.vertices.iter_mut().for_each(|v| *v = add(*v, t));
        m
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.vertices.iter_mut().for_each(|v| *v = scale(*v, s));
        m
    }

    pub fn read_obj(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        obj::read(&bytes)
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, obj::write(self)).map_err(|e| Error::io(path, e))
    }

    /// Loads an OBJ and, when `landmarks` is given, its JSON sidecar.
    pub fn read_obj_with_landmarks(path: &Path, landmarks: Option<&Path>) -> Result<Self> {
        let mesh = Self::read_obj(path)?;
        match landmarks {
            Some(lp) => mesh.with_landmarks(read_landmarks(lp)?),
            None => Ok(mesh),
        }
    }
}

/// Parses a landmark sidecar: `{"nose": [..], ...}` of 0-based indices.
pub fn parse_landmarks(json: &str) -> Result<Landmarks> {
    #[derive(Deserialize)]
    #[serde(transparent)]
    struct Raw(BTreeMap<String, Vec<usize>>);
    Ok(serde_json::from_str::<Raw>(json)?.0)
}

pub fn read_landmarks(path: &Path) -> Result<Landmarks> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&s)
}

pub fn landmarks_to_json(l: &Landmarks) -> String {
    #[derive(Serialize)]
    #[serde(transparent)]
    struct Raw<'a>(&'a Landmarks);
    serde_json::to_string_pretty(&Raw(l)).expect("landmarks serialize")
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalized(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n <= crate::autodiff::NORM_EPS {
        [0.0; 3]
    } else {
        scale(a, 1.0 / n)
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let mut c = [0.0; 3];
    for p in points {
        c = add(c, *p);
    }
    scale(c, 1.0 / points.len().max(1) as f64)
}

/// Regular icosahedron inscribed in the unit sphere.
pub fn icosahedron() -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let vertices = raw.iter().map(|&v| normalized(v)).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TriMesh::new(vertices, faces).expect("icosahedron is valid")
}

/// Unit sphere built by `levels` midpoint subdivisions of the icosahedron,
/// each followed by projection back onto the sphere.
pub fn icosphere(levels: usize) -> TriMesh {
    let mut m = icosahedron();
    for _ in 0..levels {
        let (sub, _) = subdivide::midpoint_subdivide(&m);
        let verts = sub.vertices().iter().map(|&v| normalized(v)).collect();
        m = sub.with_vertices(verts).expect("same count");
    }
    m
}

/// Regular tetrahedron.
pub fn tetrahedron() -> TriMesh {
    TriMesh::new(
        vec![
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ],
        vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
    )
    .expect("tetrahedron is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_degenerate_faces() {
        let v = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 2]]).is_ok());
    }

    #[test]
    fn icosahedron_counts_and_closed() {
        let m = icosahedron();
        assert_eq!((m.num_vertices(), m.edges().len(), m.num_faces()), (12, 30, 20));
        assert!((m.bounding_radius() - 1.0).abs() < 1e-12);
        // outward winding: face normals point away from origin
        let n = face_normals(&m);
        for (f, nf) in n.normals.iter().enumerate() {
            let c = centroid(&m.faces()[f].map(|i| m.vertices()[i]));
            assert!(dot(*nf, c) > 0.0);
        }
    }

    #[test]
    fn tetrahedron_is_outward() {
        let m = tetrahedron();
        let n = face_normals(&m);
        for (f, nf) in n.normals.iter().enumerate() {
            let c = centroid(&m.faces()[f].map(|i| m.vertices()[i]));
            assert!(dot(*nf, c) > 0.0, "face {f}");
        }
    }

    #[test]
    fn landmark_sidecar_round_trip() {
        let json = r#"{"left_eye":[1,2],"right_eye":[3],"nose":[0],"lips":[4,5]}"#;
        let l = parse_landmarks(json).unwrap();
        assert_eq!(l["lips"], vec![4, 5]);
        assert_eq!(parse_landmarks(&landmarks_to_json(&l)).unwrap(), l);
    }

    #[test]
    fn landmark_out_of_range_rejected() {
        let m = icosahedron();
        let mut l = Landmarks::new();
        l.insert("nose".into(), vec![12]);
        assert!(m.with_landmarks(l).is_err());
    }
}
