//! Procedural linear blendshape face model.
//!
//! Vertices decode as `T̄ + Σ β_k S_k + Σ ψ_j E_j`. Basis columns are smooth
//! random fields: each mixes a few modes from a shared dictionary of spatial
//! cosines, so every column lives in the same low-dimensional function space.
//! Expression columns are masked to the front of the head.

mod template;

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::checkpoint::{take_shaped, NamedTensors};
use crate::error::{Error, Result};
use crate::mesh::{
    closest_point, loop_subdivide_with_stencil, scale, simplify, sub, StencilSet, TriMesh, Vec3,
};

pub use template::{builtin_head, normalize, LANDMARK_NAMES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphConfig {
    pub shape_rank: usize,
    pub expr_rank: usize,
    /// Coefficients are drawn from `[-coeff_bound, coeff_bound]`.
    pub coeff_bound: f64,
    /// Size of the shared cosine dictionary.
    pub dictionary_size: usize,
    /// Upper bound on dictionary modes mixed into one column.
    pub modes_per_column: usize,
    /// RMS vertex displacement of a unit shape coefficient.
    pub shape_amplitude: f64,
    /// RMS vertex displacement (over front vertices) of a unit expression coefficient.
    pub expr_amplitude: f64,
    /// Cap on the normalized umbrella-Laplacian energy of a column.
    pub laplacian_cap: f64,
    /// Optional user template OBJ; requires `landmarks`.
    pub template: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
}

impl Default for MorphConfig {
    fn default() -> Self {
        Self {
            shape_rank: 16,
            expr_rank: 8,
            coeff_bound: 2.0,
            dictionary_size: 16,
            modes_per_column: 8,
            shape_amplitude: 0.005,
            expr_amplitude: 0.005,
            laplacian_cap: 0.05,
            template: None,
            landmarks: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphParams {
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
}

impl MorphParams {
    pub fn zeros(shape_rank: usize, expr_rank: usize) -> Self {
        Self {
            beta: vec![0.0; shape_rank],
            psi: vec![0.0; expr_rank],
        }
    }
}

/// Width of the smoothstep ramp (in normalized z) that fades expressions in.
const FRONT_RAMP: f64 = 0.45;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyMorphable {
    template: TriMesh,
    /// Column-major: column `k` occupies `[k·3V, (k+1)·3V)`.
    shape_basis: Vec<f64>,
    expr_basis: Vec<f64>,
    shape_rank: usize,
    expr_rank: usize,
    range: (f64, f64),
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Front-face weight in `[0, 1]`; exactly 0 where `z ≤ centroid z`.
pub fn front_mask(template: &TriMesh) -> Vec<f64> {
    let c = template.centroid();
    let r = template.bounding_radius();
    template
        .vertices()
        .iter()
        .map(|v| smoothstep((v[2] - c[2]) / (r * FRONT_RAMP)))
        .collect()
}

/// `‖L c‖² / ‖c‖²` for the uniform umbrella Laplacian `L = I − D⁻¹A`.
pub fn laplacian_energy(mesh: &TriMesh, column: &[f64]) -> f64 {
    let nb = mesh.vertex_neighbors();
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, n) in nb.iter().enumerate() {
        for k in 0..3 {
            let x = column[3 * v + k];
            den += x * x;
            if n.is_empty() {
                continue;
            }
            let avg = n.iter().map(|&u| column[3 * u + k]).sum::<f64>() / n.len() as f64;
            num += (x - avg) * (x - avg);
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

struct Mode {
    freq: Vec3,
    phase: f64,
}

fn unit_random(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v: Vec3 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = crate::mesh::norm(v);
        if n > 0.1 && n <= 1.0 {
            return scale(v, 1.0 / n);
        }
    }
}

fn dictionary(size: usize, rng: &mut ChaCha8Rng) -> Vec<Mode> {
    (0..size)
        .map(|_| {
            let d = unit_random(rng);
            let m = rng.gen_range(0.5..1.5);
            Mode {
                freq: scale(d, PI * m),
                phase: rng.gen_range(0.0..2.0 * PI),
            }
        })
        .collect()
}

/// One smooth column over normalized positions `p`, RMS-scaled to `amplitude`
/// over vertices where `weight > 0`.
fn random_column(
    p: &[Vec3],
    weight: &[f64],
    dict: &[Mode],
    max_modes: usize,
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let count = rng.gen_range(1..=max_modes.min(dict.len()).max(1));
    let mut idx: Vec<usize> = (0..dict.len()).collect();
    for i in 0..count {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    let amps: Vec<Vec3> = (0..count)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect();
    let mut col = vec![0.0; 3 * p.len()];
    for (v, pv) in p.iter().enumerate() {
        for (a, &m) in amps.iter().zip(&idx[..count]) {
            let mode = &dict[m];
            let f = (crate::mesh::dot(mode.freq, *pv) + mode.phase).cos() * weight[v];
            for k in 0..3 {
                col[3 * v + k] += a[k] * f;
            }
        }
    }
    let support = weight.iter().filter(|&&w| w > 0.0).count().max(1);
    let rms = (col.iter().map(|x| x * x).sum::<f64>() / support as f64).sqrt();
    if rms > 0.0 {
        let s = amplitude / rms;
        col.iter_mut().for_each(|x| *x *= s);
    }
    col
}

impl ToyMorphable {
    /// Builds the model deterministically from `config` and `seed`.
    pub fn build(config: &MorphConfig, seed: u64) -> Result<Self> {
        let template = match (&config.template, &config.landmarks) {
            (None, _) => builtin_head(),
            (Some(_), None) => {
                return Err(Error::Config(
                    "a user template needs a landmark sidecar (`landmarks`)".into(),
                ))
            }
            (Some(obj), Some(lm)) => TriMesh::read_obj_with_landmarks(obj, Some(lm))?,
        };
        Self::from_template(template, config, seed)
    }

    pub fn from_template(template: TriMesh, config: &MorphConfig, seed: u64) -> Result<Self> {
        if template.num_faces() == 0 {
            return Err(Error::Mesh("morphable template needs faces".into()));
        }
        if !(config.coeff_bound > 0.0) {
            return Err(Error::Config("coeff_bound must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dict = dictionary(config.dictionary_size.max(1), &mut rng);
        let c = template.centroid();
        let r = template.bounding_radius();
        let p: Vec<Vec3> = template
            .vertices()
            .iter()
            .map(|&v| scale(sub(v, c), 1.0 / r))
            .collect();
        let ones = vec![1.0; p.len()];
        let mask = front_mask(&template);

        let mut make = |rank: usize, weight: &[f64], amp: f64, what: &str| -> Result<Vec<f64>> {
            let mut basis = Vec::with_capacity(rank * 3 * p.len());
            for k in 0..rank {
                let mut tries = 0;
                loop {
                    let col = random_column(&p, weight, &dict, config.modes_per_column, amp * r, &mut rng);
                    if laplacian_energy(&template, &col) <= config.laplacian_cap {
                        basis.extend(col);
                        break;
                    }
                    tries += 1;
                    if tries >= 64 {
                        return Err(Error::Config(format!(
                            "could not draw a {what} column {k} under laplacian_cap {}",
                            config.laplacian_cap
                        )));
                    }
                }
            }
            Ok(basis)
        };
        let shape_basis = make(config.shape_rank, &ones, config.shape_amplitude, "shape")?;
        let expr_basis = make(config.expr_rank, &mask, config.expr_amplitude, "expression")?;
        Ok(Self {
            template,
            shape_basis,
            expr_basis,
            shape_rank: config.shape_rank,
            expr_rank: config.expr_rank,
            range: (-config.coeff_bound, config.coeff_bound),
        })
    }

    pub fn template(&self) -> &TriMesh {
        &self.template
    }

    pub fn shape_rank(&self) -> usize {
        self.shape_rank
    }

    pub fn expr_rank(&self) -> usize {
        self.expr_rank
    }

    pub fn sampling_range(&self) -> (f64, f64) {
        self.range
    }

    fn column<'a>(basis: &'a [f64], nv: usize, k: usize) -> &'a [f64] {
        &basis[k * 3 * nv..(k + 1) * 3 * nv]
    }

    pub fn shape_column(&self, k: usize) -> &[f64] {
        Self::column(&self.shape_basis, self.template.num_vertices(), k)
    }

    pub fn expr_column(&self, k: usize) -> &[f64] {
        Self::column(&self.expr_basis, self.template.num_vertices(), k)
    }

    /// Shape basis as a `[V, 3, K_s]` tensor.
    pub fn shape_basis_tensor(&self) -> Tensor {
        basis_tensor(&self.shape_basis, self.template.num_vertices(), self.shape_rank)
    }

    pub fn expr_basis_tensor(&self) -> Tensor {
        basis_tensor(&self.expr_basis, self.template.num_vertices(), self.expr_rank)
    }

    pub fn check_params(&self, p: &MorphParams) -> Result<()> {
        if p.beta.len() != self.shape_rank {
            return Err(Error::Rank {
                what: "beta",
                expected: self.shape_rank,
                got: p.beta.len(),
            });
        }
        if p.psi.len() != self.expr_rank {
            return Err(Error::Rank {
                what: "psi",
                expected: self.expr_rank,
                got: p.psi.len(),
            });
        }
        Ok(())
    }

    /// Decoded vertex positions.
    pub fn decode_vertices(&self, p: &MorphParams) -> Result<Vec<Vec3>> {
        self.check_params(p)?;
        let nv = self.template.num_vertices();
        let mut flat: Vec<f64> = self.template.vertices().iter().flatten().copied().collect();
        // accumulate the offset first so that superposition holds to rounding
        let mut off = vec![0.0; 3 * nv];
        for (k, &b) in p.beta.iter().enumerate() {
            axpy(b, Self::column(&self.shape_basis, nv, k), &mut off);
        }
        for (k, &e) in p.psi.iter().enumerate() {
            axpy(e, Self::column(&self.expr_basis, nv, k), &mut off);
        }
        flat.iter_mut().zip(&off).for_each(|(x, o)| *x += o);
        Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn decode(&self, p: &MorphParams) -> Result<TriMesh> {
        self.template.with_vertices(self.decode_vertices(p)?)
    }

    pub fn sample_params(&self, seed: u64) -> MorphParams {
        self.sample_params_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sample_params_with<R: Rng>(&self, rng: &mut R) -> MorphParams {
        MorphParams {
            beta: self.sample_coeffs(rng, self.shape_rank),
            psi: self.sample_coeffs(rng, self.expr_rank),
        }
    }

    pub fn sample_coeffs<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let (lo, hi) = self.range;
        (0..n).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect()
    }

    pub fn zero_params(&self) -> MorphParams {
        MorphParams::zeros(self.shape_rank, self.expr_rank)
    }

    pub fn to_named(&self) -> NamedTensors {
        let mut t = NamedTensors::new();
        t.insert("template.vertices".into(), self.template.vertex_tensor());
        t.insert(
            "template.faces".into(),
            Tensor::new(
                &[self.template.num_faces(), 3],
                self.template.faces().iter().flatten().map(|&i| i as f64).collect(),
            )
            .expect("faces shape"),
        );
        for (name, idx) in self.template.landmarks() {
            t.insert(
                format!("landmark.{name}"),
                Tensor::vector(idx.iter().map(|&i| i as f64).collect()),
            );
        }
        t.insert("shape_basis".into(), self.shape_basis_tensor());
        t.insert("expr_basis".into(), self.expr_basis_tensor());
        t.insert("range".into(), Tensor::vector(vec![self.range.0, self.range.1]));
        t
    }

    pub fn from_named(t: &NamedTensors) -> Result<Self> {
        let get = |k: &str| {
            t.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{k}`")))
        };
        let as_index = |x: f64| -> Result<usize> {
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(Error::Checkpoint(format!("bad index value {x}")))
            }
        };
        let vt = get("template.vertices")?;
        let nv = vt.shape().first().copied().unwrap_or(0);
        let ft = get("template.faces")?;
        let faces = ft
            .data()
            .chunks_exact(3)
            .map(|c| Ok([as_index(c[0])?, as_index(c[1])?, as_index(c[2])?]))
            .collect::<Result<Vec<_>>>()?;
        let verts = vt.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let mut landmarks = crate::mesh::Landmarks::new();
        for (k, v) in t {
            if let Some(name) = k.strip_prefix("landmark.") {
                landmarks.insert(
                    name.to_string(),
                    v.data().iter().map(|&x| as_index(x)).collect::<Result<_>>()?,
                );
            }
        }
        let template = TriMesh::new(verts, faces)?.with_landmarks(landmarks)?;
        let sb = get("shape_basis")?;
        let eb = get("expr_basis")?;
        let ks = sb.shape().get(2).copied().unwrap_or(0);
        let ke = eb.shape().get(2).copied().unwrap_or(0);
        let sb = take_shaped(t, "shape_basis", &[nv, 3, ks])?;
        let eb = take_shaped(t, "expr_basis", &[nv, 3, ke])?;
        let range = take_shaped(t, "range", &[2])?;
        Ok(Self {
            template,
            shape_basis: basis_columns(&sb, nv, ks),
            expr_basis: basis_columns(&eb, nv, ke),
            shape_rank: ks,
            expr_rank: ke,
            range: (range.data()[0], range.data()[1]),
        })
    }

    /// Template re-meshed into the named topology variant.
    pub fn variant(&self, kind: TopologyVariant) -> Result<TemplateVariant> {
        TemplateVariant::build(&self.template, kind)
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    if a == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn basis_tensor(cols: &[f64], nv: usize, rank: usize) -> Tensor {
    let mut data = vec![0.0; nv * 3 * rank];
    for k in 0..rank {
        for i in 0..3 * nv {
            data[i * rank + k] = cols[k * 3 * nv + i];
        }
    }
    Tensor::new(&[nv, 3, rank], data).expect("basis shape")
}

fn basis_columns(t: &Tensor, nv: usize, rank: usize) -> Vec<f64> {
    let mut cols = vec![0.0; nv * 3 * rank];
    for k in 0..rank {
        for i in 0..3 * nv {
            cols[k * 3 * nv + i] = t.data()[i * rank + k];
        }
    }
    cols
}

/// Remeshings of the template used for topology experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyVariant {
    Original,
    Simplified,
    Loop1,
    Loop2,
}

impl TopologyVariant {
    pub const ALL: [TopologyVariant; 4] = [Self::Original, Self::Simplified, Self::Loop1, Self::Loop2];
    pub const SIMPLIFY_FRACTION: f64 = 0.25;

    pub fn name(self) -> &'static str {
        match self {
            Self::Original => "original",
            Self::Simplified => "simplified",
            Self::Loop1 => "loop1",
            Self::Loop2 => "loop2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s || (s == "loop-1" && *v == Self::Loop1) || (s == "loop-2" && *v == Self::Loop2))
            .ok_or_else(|| Error::Config(format!("unknown topology `{s}`")))
    }
}

/// A re-meshed template plus the stencil that expresses its vertices over
/// template vertices, so any decoded instance can be carried across.
#[derive(Clone, Debug)]
pub struct TemplateVariant {
    pub kind: TopologyVariant,
    pub mesh: TriMesh,
    pub stencil: StencilSet,
}

impl TemplateVariant {
    pub fn build(template: &TriMesh, kind: TopologyVariant) -> Result<Self> {
        let (mesh, stencil) = match kind {
            TopologyVariant::Original => (template.clone(), StencilSet::identity(template.num_vertices())),
            TopologyVariant::Loop1 => loop_subdivide_with_stencil(template)?,
            TopologyVariant::Loop2 => {
                let (m1, s1) = loop_subdivide_with_stencil(template)?;
                let (m2, s2) = loop_subdivide_with_stencil(&m1)?;
                (m2, s2.compose(&s1))
            }
            TopologyVariant::Simplified => {
                let s = simplify(template, TopologyVariant::SIMPLIFY_FRACTION)?;
                // project simplified vertices back onto the template surface
                let samples: Vec<_> = s
                    .mesh
                    .vertices()
                    .iter()
                    .map(|&p| {
                        let cp = closest_point(template, p).expect("template has faces");
                        crate::mesh::SurfaceSample {
                            face: cp.face,
                            bary: cp.bary,
                            position: cp.position,
                        }
                    })
                    .collect();
                let stencil = StencilSet::from_samples(template, &samples);
                let mesh = s.mesh.with_vertices(stencil.apply(template.vertices()))?;
                (mesh, stencil)
            }
        };
        Ok(Self { kind, mesh, stencil })
    }

    /// This variant's geometry for a decoded instance of the template.
    pub fn carry(&self, decoded: &TriMesh) -> Result<TriMesh> {
        self.mesh.with_vertices(self.stencil.apply(decoded.vertices()))
    }
}
