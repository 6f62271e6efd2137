use crate::autodiff::{Var, NORM_EPS};

use super::{add, cross, norm, normalized, sub, TriMesh, Vec3};

#[derive(Clone, Debug)]
pub struct FaceNormals {
    pub normals: Vec<Vec3>,
    /// Faces whose cross product fell below the norm guard; their normal is zero.
    pub degenerate: Vec<usize>,
}

/// Unit face normals `normalize((v1 − v0) × (v2 − v0))`.
pub fn face_normals(mesh: &TriMesh) -> FaceNormals {
    let mut normals = Vec::with_capacity(mesh.num_faces());
    let mut degenerate = Vec::new();
    for (fi, f) in mesh.faces().iter().enumerate() {
        let [a, b, c] = f.map(|i| mesh.vertices()[i]);
        let n = cross(sub(b, a), sub(c, a));
        if norm(n) <= NORM_EPS {
            degenerate.push(fi);
        }
        normals.push(normalized(n));
    }
    FaceNormals {
        normals,
        degenerate,
    }
}

/// Differentiable face normals of `vertices` (`[V, 3]`) under `mesh`'s connectivity.
pub fn face_normals_var<'g>(mesh: &TriMesh, vertices: Var<'g>) -> Var<'g> {
    let [c0, c1, c2] = mesh.corners();
    let v0 = vertices.gather_rows(c0);
    let v1 = vertices.gather_rows(c1);
    let v2 = vertices.gather_rows(c2);
    (v1 - v0).cross(v2 - v0).normalize()
}

/// Area-weighted vertex normals; isolated vertices get zero.
pub fn vertex_normals(mesh: &TriMesh) -> Vec<Vec3> {
    let mut acc = vec![[0.0; 3]; mesh.num_vertices()];
    for f in mesh.faces() {
        let [a, b, c] = f.map(|i| mesh.vertices()[i]);
        // unnormalized cross product = 2·area·n
        let n = cross(sub(b, a), sub(c, a));
        for &i in f {
            acc[i] = add(acc[i], n);
        }
    }
    acc.into_iter().map(normalized).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_at, Graph, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri(order: [usize; 3]) -> TriMesh {
        TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![order],
        )
        .unwrap()
    }

    #[test]
    fn xy_triangle_normals() {
        assert_eq!(face_normals(&tri([0, 1, 2])).normals[0], [0.0, 0.0, 1.0]);
        assert_eq!(face_normals(&tri([0, 2, 1])).normals[0], [0.0, 0.0, -1.0]);
    }

    #[test]
    fn degenerate_face_flagged_zero() {
        let m = TriMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let n = face_normals(&m);
        assert_eq!(n.normals[0], [0.0; 3]);
        assert_eq!(n.degenerate, vec![0]);
    }

    #[test]
    fn graph_normals_match_plain_and_are_unit() {
        let m = crate::mesh::icosphere(1);
        let g = Graph::new();
        let v = g.constant(m.vertex_tensor());
        let nv = face_normals_var(&m, v);
        let plain = face_normals(&m);
        for (row, n) in nv.value().data().chunks_exact(3).zip(&plain.normals) {
            for k in 0..3 {
                assert!((row[k] - n[k]).abs() < 1e-15);
            }
            assert!((norm([row[0], row[1], row[2]]) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normal_z_sum_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = crate::mesh::icosphere(1);
        let verts: Vec<Vec3> = base
            .vertices()
            .iter()
            .map(|v| v.map(|x| x + rng.gen_range(-0.05..0.05)))
            .collect();
        let m = base.with_vertices(verts).unwrap();
        let x: Tensor = m.vertex_tensor();
        let r = grad_check_at(
            |g, x| {
                let n = face_normals_var(&m, x);
                let z = g.constant(Tensor::new(&[3, 1], vec![0.0, 0.0, 1.0]).unwrap());
                n.matmul(z).sum()
            },
            &x,
            1e-5,
            1e-4,
            &[0, 1, 2, 15, 16, 17, 40, 41],
        );
        assert!(r.passed, "{r:?}");
    }
}
