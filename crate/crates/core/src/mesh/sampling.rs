//! Area-weighted surface sampling and sparse vertex stencils.
//!
//! A [`StencilSet`] stores each sample as a weighted combination of mesh
//! vertices, so the same sample can be re-evaluated on any mesh sharing the
//! connectivity (the template and its decoded instances, for example).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TriMesh, Vec3};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Surface points per vertex used by SIMS.
pub const SIMS_RATIO: f64 = 4.0;
/// Surface points per vertex drawn in addition to the vertices by hybrid sampling.
pub const HYBRID_SURFACE_RATIO: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub face: usize,
    pub bary: [f64; 3],
    pub position: Vec3,
}

fn area_cdf(mesh: &TriMesh) -> Result<Vec<f64>> {
    if mesh.num_faces() == 0 {
        return Err(Error::Mesh("surface sampling needs at least one face".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.num_faces());
    let mut acc = 0.0;
    for a in mesh.face_areas() {
        acc += a;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::ZeroArea);
    }
    Ok(cdf)
}

/// `n` samples, faces chosen proportionally to area, barycentrics uniform
/// on the simplex.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    let cdf = area_cdf(mesh)?;
    let total = *cdf.last().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        let face = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let s = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        let bary = [1.0 - s, s * (1.0 - r2), s * r2];
        let [a, b, c] = mesh.faces()[face].map(|i| mesh.vertices()[i]);
        let position = std::array::from_fn(|k| bary[0] * a[k] + bary[1] * b[k] + bary[2] * c[k]);
        out.push(SurfaceSample {
            face,
            bary,
            position,
        });
    }
    Ok(out)
}

/// `⌈ratio·V⌉` area-weighted surface samples.
pub fn sims_sample(mesh: &TriMesh, ratio: f64, seed: u64) -> Result<Vec<SurfaceSample>> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::Invalid(format!("sampling ratio must be positive, got {ratio}")));
    }
    // tolerate rounding noise such as 1.1 * 600 = 660.0000000000001
    let n = (ratio * mesh.num_vertices() as f64 * (1.0 - 1e-12)).ceil() as usize;
    sample_surface(mesh, n, seed)
}

pub fn vertex_only_points(mesh: &TriMesh) -> Vec<Vec3> {
    mesh.vertices().to_vec()
}

/// All vertices followed by `⌈1.1·V⌉` surface samples.
pub fn hybrid_sample(mesh: &TriMesh, seed: u64) -> Result<Vec<Vec3>> {
    let mut pts = vertex_only_points(mesh);
    pts.extend(
        sims_sample(mesh, HYBRID_SURFACE_RATIO, seed)?
            .into_iter()
            .map(|s| s.position),
    );
    Ok(pts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    Sims,
    Hybrid,
    Vertex,
}

impl SamplingStrategy {
    pub const ALL: [SamplingStrategy; 3] = [Self::Sims, Self::Hybrid, Self::Vertex];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sims => "sims",
            Self::Hybrid => "hybrid",
            Self::Vertex => "vertex",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sims" => Ok(Self::Sims),
            "hybrid" => Ok(Self::Hybrid),
            "vertex" | "vertex-only" => Ok(Self::Vertex),
            _ => Err(Error::Config(format!(
                "unknown sampling strategy `{s}` (expected sims, hybrid or vertex)"
            ))),
        }
    }

    /// Sample stencils on `mesh`; surface draws are area-weighted on `mesh` itself.
    pub fn stencil(self, mesh: &TriMesh, seed: u64) -> Result<StencilSet> {
        match self {
            Self::Sims => Ok(StencilSet::from_samples(mesh, &sims_sample(mesh, SIMS_RATIO, seed)?)),
            Self::Vertex => Ok(StencilSet::identity(mesh.num_vertices())),
            Self::Hybrid => {
                let surf = sims_sample(mesh, HYBRID_SURFACE_RATIO, seed)?;
                Ok(StencilSet::identity(mesh.num_vertices())
                    .concat(&StencilSet::from_samples(mesh, &surf)))
            }
        }
    }
}

impl std::fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Rows of sparse vertex weights (CSR layout). Row `i` evaluates to
/// `Σ_k weights[k] · v[indices[k]]` for `k` in `offsets[i]..offsets[i+1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilSet {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
    /// Number of source vertices the stencil was built against.
    source_len: usize,
}

impl StencilSet {
    pub fn identity(n: usize) -> Self {
        Self {
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            weights: vec![1.0; n],
            source_len: n,
        }
    }

    pub fn from_samples(mesh: &TriMesh, samples: &[SurfaceSample]) -> Self {
        let mut b = StencilBuilder::new(mesh.num_vertices());
        for s in samples {
            let f = mesh.faces()[s.face];
            b.push_row((0..3).map(|k| (f[k], s.bary[k])));
        }
        b.finish()
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    /// Rows of `self` followed by rows of `other` (same source).
    pub fn concat(&self, other: &StencilSet) -> Self {
        assert_eq!(self.source_len, other.source_len, "stencil sources differ");
        let mut out = self.clone();
        let base = *out.offsets.last().unwrap();
        out.offsets.extend(other.offsets[1..].iter().map(|o| o + base));
        out.indices.extend_from_slice(&other.indices);
        out.weights.extend_from_slice(&other.weights);
        out
    }

    /// `self ∘ inner`: evaluates `self` on the output of `inner`.
    pub fn compose(&self, inner: &StencilSet) -> Self {
        assert_eq!(self.source_len, inner.len(), "stencil composition size mismatch");
        let mut b = StencilBuilder::new(inner.source_len);
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for i in 0..self.len() {
            acc.clear();
            for (j, w) in self.row(i) {
                acc.extend(inner.row(j).map(|(k, u)| (k, w * u)));
            }
            acc.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
            for &(k, w) in &acc {
                match merged.last_mut() {
                    Some(last) if last.0 == k => last.1 += w,
                    _ => merged.push((k, w)),
                }
            }
            b.push_row(merged.into_iter());
        }
        b.finish()
    }

    pub fn apply(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        assert_eq!(vertices.len(), self.source_len, "stencil applied to wrong vertex count");
        (0..self.len())
            .map(|i| {
                let mut p = [0.0; 3];
                for (j, w) in self.row(i) {
                    for k in 0..3 {
                        p[k] += w * vertices[j][k];
                    }
                }
                p
            })
            .collect()
    }

    /// Applies to a `[V, 3]` tensor, returning `[N, 3]`.
    pub fn apply_tensor(&self, vertices: &Tensor) -> Tensor {
        let v: Vec<Vec3> = vertices
            .data()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let out = self.apply(&v);
        Tensor::from_parts(vec![out.len(), 3], out.into_iter().flatten().collect())
    }
}

pub(crate) struct StencilBuilder {
    set: StencilSet,
}

impl StencilBuilder {
    pub(crate) fn new(source_len: usize) -> Self {
        Self {
            set: StencilSet {
                offsets: vec![0],
                indices: vec![],
                weights: vec![],
                source_len,
            },
        }
    }

    pub(crate) fn push_row(&mut self, entries: impl Iterator<Item = (usize, f64)>) {
        for (i, w) in entries {
            debug_assert!(i < self.set.source_len);
            self.set.indices.push(i);
            self.set.weights.push(w);
        }
        self.set.offsets.push(self.set.indices.len());
    }

    pub(crate) fn finish(self) -> StencilSet {
        self.set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_faces() -> TriMesh {
        // areas 3 and 1
        TriMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [3.0, 0.0, 0.0],
                [0.0, 2.0, 0.0],
                [10.0, 0.0, 0.0],
                [11.0, 0.0, 0.0],
                [10.0, 2.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap()
    }

    #[test]
    fn area_weighted_face_frequency() {
        let m = two_faces();
        assert!((m.face_area(0) - 3.0).abs() < 1e-12 && (m.face_area(1) - 1.0).abs() < 1e-12);
        let s = sample_surface(&m, 100_000, 3).unwrap();
        let f0 = s.iter().filter(|s| s.face == 0).count() as f64 / 1e5;
        assert!((0.745..=0.755).contains(&f0), "{f0}");
    }

    #[test]
    fn sims_count_and_determinism() {
        let m = crate::mesh::icosphere(2);
        let n = m.num_vertices();
        let a = sims_sample(&m, 4.0, 9).unwrap();
        assert_eq!(a.len(), 4 * n);
        assert_eq!(a, sims_sample(&m, 4.0, 9).unwrap());
        assert_ne!(a, sims_sample(&m, 4.0, 10).unwrap());
    }

    #[test]
    fn barycentric_identity_exact() {
        let m = crate::mesh::icosphere(1);
        for s in sims_sample(&m, 4.0, 1).unwrap() {
            assert!(s.bary.iter().all(|&w| w >= 0.0));
            assert!((s.bary.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            let f = m.faces()[s.face].map(|i| m.vertices()[i]);
            for k in 0..3 {
                let r = s.bary[0] * f[0][k] + s.bary[1] * f[1][k] + s.bary[2] * f[2][k];
                assert!((r - s.position[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_area_rejected() {
        let m = TriMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(sims_sample(&m, 4.0, 0), Err(Error::ZeroArea)));
    }

    #[test]
    fn vertex_only_and_hybrid_counts() {
        let m = crate::mesh::icosphere(1);
        assert_eq!(vertex_only_points(&m), m.vertices().to_vec());
        let h = hybrid_sample(&m, 2).unwrap();
        assert_eq!(h.len(), 42 + 47);
        assert_eq!(h, hybrid_sample(&m, 2).unwrap());
        let big = TriMesh::new(
            (0..600).map(|i| [i as f64, (i % 2) as f64, 0.0]).collect(),
            (0..598).map(|i| [i, i + 1, i + 2]).collect(),
        )
        .unwrap();
        assert_eq!(hybrid_sample(&big, 0).unwrap().len(), 600 + 660);
        assert_eq!(sims_sample(&big, 4.0, 0).unwrap().len(), 2400);
        assert_eq!(&h[..42], m.vertices());
    }

    #[test]
    fn stencils_reproduce_samples_and_compose() {
        let m = crate::mesh::icosphere(1);
        let samples = sims_sample(&m, 4.0, 5).unwrap();
        let st = StencilSet::from_samples(&m, &samples);
        for (p, s) in st.apply(m.vertices()).iter().zip(&samples) {
            for k in 0..3 {
                assert!((p[k] - s.position[k]).abs() < 1e-15);
            }
        }
        let (sub, sub_st) = crate::mesh::loop_subdivide_with_stencil(&m).unwrap();
        let outer = SamplingStrategy::Sims.stencil(&sub, 1).unwrap();
        let direct = outer.apply(sub.vertices());
        let composed = outer.compose(&sub_st).apply(m.vertices());
        for (a, b) in direct.iter().zip(&composed) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in SamplingStrategy::ALL {
            assert_eq!(SamplingStrategy::parse(s.name()).unwrap(), s);
        }
        assert!(SamplingStrategy::parse("random").is_err());
    }
}
