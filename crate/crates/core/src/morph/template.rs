//! Built-in procedural head: a latitude/longitude ellipsoid with nose, brow,
//! eye and lip relief, facing +z with the crown at +y.

use std::f64::consts::PI;

use crate::mesh::{dot, normalized, scale, sub, Landmarks, TriMesh, Vec3};

pub const LONGITUDE_SEGMENTS: usize = 24;
pub const LATITUDE_RINGS: usize = 25;

/// Landmark sets shipped with the built-in head.
pub const LANDMARK_NAMES: [&str; 5] = ["forehead", "left_eye", "lips", "nose", "right_eye"];

struct Feature {
    dir: Vec3,
    width: f64,
    height: f64,
}

// Directions on the unit sphere (before the ellipsoid stretch).
fn features() -> [(Feature, &'static str, usize); 6] {
    let f = |x: f64, y: f64, z: f64, width: f64, height: f64| Feature {
        dir: normalized([x, y, z]),
        width,
        height,
    };
    [
        (f(0.0, -0.05, 1.0, 0.22, 0.16), "nose", 5),
        (f(0.38, 0.22, 0.9, 0.2, -0.06), "left_eye", 4),
        (f(-0.38, 0.22, 0.9, 0.2, -0.06), "right_eye", 4),
        (f(0.0, -0.45, 0.9, 0.2, 0.05), "lips", 5),
        (f(0.0, 0.62, 0.78, 0.35, 0.03), "forehead", 6),
        // brow ridge: no landmark of its own
        (f(0.0, 0.36, 0.93, 0.3, 0.04), "", 0),
    ]
}

fn unit_direction(theta: f64, phi: f64) -> Vec3 {
    [theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos()]
}

/// The head template, normalized to centroid 0 and bounding radius 1.
pub fn builtin_head() -> TriMesh {
    let mut dirs = vec![[0.0, 1.0, 0.0]];
    for r in 1..=LATITUDE_RINGS {
        let theta = PI * r as f64 / (LATITUDE_RINGS + 1) as f64;
        for s in 0..LONGITUDE_SEGMENTS {
            let phi = 2.0 * PI * s as f64 / LONGITUDE_SEGMENTS as f64;
            dirs.push(unit_direction(theta, phi));
        }
    }
    dirs.push([0.0, -1.0, 0.0]);

    let feats = features();
    let verts: Vec<Vec3> = dirs
        .iter()
        .map(|&d| {
            let mut r = 1.0;
            for (f, _, _) in &feats {
                let c = dot(d, f.dir).clamp(-1.0, 1.0).acos();
                r += f.height * (-(c / f.width).powi(2)).exp();
            }
            let p = scale(d, r);
            [0.78 * p[0], 1.0 * p[1], 0.9 * p[2]]
        })
        .collect();

    let ring = |r: usize, s: usize| 1 + (r - 1) * LONGITUDE_SEGMENTS + s % LONGITUDE_SEGMENTS;
    let south = dirs.len() - 1;
    let mut faces = Vec::new();
    for s in 0..LONGITUDE_SEGMENTS {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for r in 1..LATITUDE_RINGS {
        for s in 0..LONGITUDE_SEGMENTS {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    for s in 0..LONGITUDE_SEGMENTS {
        faces.push([south, ring(LATITUDE_RINGS, s + 1), ring(LATITUDE_RINGS, s)]);
    }

    let mut landmarks = Landmarks::new();
    for (f, name, count) in &feats {
        if name.is_empty() {
            continue;
        }
        let mut order: Vec<usize> = (0..dirs.len()).collect();
        order.sort_by(|&i, &j| dot(dirs[j], f.dir).total_cmp(&dot(dirs[i], f.dir)));
        let mut pick = order[..*count].to_vec();
        pick.sort_unstable();
        landmarks.insert(name.to_string(), pick);
    }

    let m = TriMesh::new(verts, faces)
        .expect("procedural head is valid")
        .with_landmarks(landmarks)
        .expect("landmarks in range");
    normalize(&m)
}

/// Recentres on the vertex centroid and scales to bounding radius 1.
pub fn normalize(m: &TriMesh) -> TriMesh {
    let c = m.centroid();
    let r = m.bounding_radius();
    let verts = m
        .vertices()
        .iter()
        .map(|&v| scale(sub(v, c), 1.0 / r))
        .collect();
    m.with_vertices(verts).expect("same count")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{centroid, face_normals};

    #[test]
    fn counts_and_normalization() {
        let m = builtin_head();
        assert_eq!(m.num_vertices(), 602);
        assert_eq!(m.num_faces(), 1200);
        assert_eq!(m.num_vertices() as i64 - m.edges().len() as i64 + m.num_faces() as i64, 2);
        assert!((m.bounding_radius() - 1.0).abs() < 1e-12);
        assert!(m.centroid().iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn outward_winding() {
        let m = builtin_head();
        let n = face_normals(&m);
        assert!(n.degenerate.is_empty());
        let c = m.centroid();
        for (f, nf) in n.normals.iter().enumerate() {
            let fc = centroid(&m.faces()[f].map(|i| m.vertices()[i]));
            assert!(dot(*nf, sub(fc, c)) > 0.0, "face {f}");
        }
    }

    #[test]
    fn landmarks_on_the_face() {
        let m = builtin_head();
        for name in LANDMARK_NAMES {
            let c = m.landmark_centroid(name).unwrap();
            assert!(c[2] > 0.3, "{name} {c:?}");
        }
        let l = m.landmark_centroid("left_eye").unwrap();
        let r = m.landmark_centroid("right_eye").unwrap();
        assert!(l[0] > 0.1 && r[0] < -0.1);
        let nose = m.landmark_centroid("nose").unwrap();
        let lips = m.landmark_centroid("lips").unwrap();
        assert!(nose[1] > lips[1]);
        assert!(nose[2] > lips[2]);
    }
}
