//! Fixtures shared by the integration tests and the acceptance harness.

#![allow(dead_code)]

use facestyle::autodiff::{grad_check_at, GradCheckReport, Graph, Tensor, Var};
use facestyle::deform::{DeformConfig, DeformModel, LatentCode};
use facestyle::embed::FeatureEmbedder;
use facestyle::losses::{embed_views, l_across, l_clip, l_in, l_style, l_vert};
use facestyle::mesh::{face_normals_var, icosphere, Landmarks, TriMesh, Vec3};
use facestyle::morph::MorphParams;
use facestyle::render::{render_var, RenderRig, RenderSettings, RigConfig};
use facestyle::train::SemanticSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-3;

/// A 42-vertex sphere facing +z with the four facial landmark sets.
pub fn small_face() -> TriMesh {
    let m = icosphere(1).scaled(0.5);
    let near = |dir: Vec3| {
        let mut idx: Vec<usize> = (0..m.num_vertices()).collect();
        let score = |i: usize| {
            let v = m.vertices()[i];
            -(v[0] * dir[0] + v[1] * dir[1] + v[2] * dir[2])
        };
        idx.sort_by(|&a, &b| score(a).total_cmp(&score(b)));
        idx.truncate(3);
        idx
    };
    let mut lm = Landmarks::new();
    lm.insert("left_eye".into(), near([-0.4, 0.3, 0.87]));
    lm.insert("right_eye".into(), near([0.4, 0.3, 0.87]));
    lm.insert("nose".into(), near([0.0, 0.0, 1.0]));
    lm.insert("lips".into(), near([0.0, -0.5, 0.87]));
    m.with_landmarks(lm).unwrap()
}

pub fn space_for(anchor: &TriMesh, resolution: usize) -> SemanticSpace {
    let rig = RenderRig::build(anchor, &RigConfig::default()).unwrap();
    let settings = RenderSettings {
        resolution,
        ..RenderSettings::default()
    };
    SemanticSpace::new(rig, settings, FeatureEmbedder::new(7, resolution).unwrap()).unwrap()
}

pub fn tensor_rows(rows: &[Vec3]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

pub fn jitter(m: &TriMesh, amount: f64, seed: u64) -> TriMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = m
        .vertices()
        .iter()
        .map(|p| p.map(|x| x + rng.gen_range(-amount..amount)))
        .collect();
    m.with_vertices(v).unwrap()
}

/// A field whose displacement head is switched on, so that it is not the identity.
pub fn active_field(seed: u64) -> DeformModel {
    let cfg = DeformConfig {
        shape_latent: 8,
        expr_latent: 4,
        map_hidden: 16,
        siren_width: 16,
        siren_hidden_layers: 2,
        hyper_hidden: 16,
        ..DeformConfig::default()
    };
    let mut m = DeformModel::new(&cfg, 4, 2, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let ids = m.hyper_ids();
    for &id in &ids[ids.len() - 2..] {
        for x in m.params_mut().get_mut(id).data_mut() {
            *x = rng.gen_range(-0.02..0.02);
        }
    }
    m
}

/// Every fixture a gradient probe needs: a small face, a non-trivial field,
/// a code and frozen embeddings of the other meshes of each loss.
pub struct Probe {
    pub face: TriMesh,
    pub space: SemanticSpace,
    pub model: DeformModel,
    pub code: LatentCode,
    pub m_t: TriMesh,
    pub e_t: Vec<Tensor>,
    pub e_s: Vec<Tensor>,
    pub e_s_samp: Vec<Tensor>,
}

impl Probe {
    pub fn new() -> Self {
        let face = small_face();
        let space = space_for(&face, 64);
        let model = active_field(11);
        let code = model
            .map(&MorphParams {
                beta: vec![0.6, -0.3, 1.1, 0.2],
                psi: vec![-0.7, 0.4],
            })
            .unwrap();
        let m_t = jitter(&face, 0.02, 1);
        let e_t = space.embed_mesh(&m_t);
        let e_s = space.embed_mesh(&jitter(&face, 0.02, 2));
        let e_s_samp = space.embed_mesh(&jitter(&face, 0.02, 3));
        Self {
            face,
            space,
            model,
            code,
            m_t,
            e_t,
            e_s,
            e_s_samp,
        }
    }

    /// The field's output on the face for shape latent `z_s`.
    pub fn deformed<'g>(&self, g: &'g Graph, z_s: Var<'g>) -> Var<'g> {
        let b = self.model.bind_frozen(g);
        let (_, ze) = b.code_vars(&self.code);
        b.field(z_s, ze).apply(g.constant(self.face.vertex_tensor()))
    }

    pub fn z_s(&self) -> Tensor {
        Tensor::new(&[1, self.code.z_s.len()], self.code.z_s.clone()).unwrap()
    }

    fn views<'g>(&self, v: Var<'g>) -> Vec<Var<'g>> {
        let s = &self.space;
        embed_views(&self.face, v, &s.rig, &s.settings, &s.embedder)
    }

    fn consts<'g>(g: &'g Graph, ts: &[Tensor]) -> Vec<Var<'g>> {
        ts.iter().map(|t| g.constant(t.clone())).collect()
    }

    /// Central-difference checks of every differentiable stage and every
    /// loss composed end to end with the field.
    pub fn gradient_suite(&self) -> Vec<(&'static str, GradCheckReport)> {
        let mut out = Vec::new();
        let w_pts = Tensor::new(&[42, 3], (0..126).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let verts = self.face.vertex_tensor();
        let some = [0, 5, 17, 40, 77, 100, 125];

        out.push((
            "deform_points",
            grad_check_at(
                |g, x| {
                    let b = self.model.bind_frozen(g);
                    let (zs, ze) = b.code_vars(&self.code);
                    (b.field(zs, ze).apply(x) * g.constant(w_pts.clone())).sum()
                },
                &verts,
                FD_STEP,
                FD_TOL,
                &some,
            ),
        ));

        let w_n = Tensor::new(&[80, 3], (0..240).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        out.push((
            "face_normals",
            grad_check_at(
                |g, x| (face_normals_var(&self.face, x) * g.constant(w_n.clone())).sum(),
                &verts,
                FD_STEP,
                FD_TOL,
                &some,
            ),
        ));

        let cam = self.space.rig.levels[1][1].clone();
        let r = self.space.settings.resolution;
        let w_img = Tensor::new(&[3, r, r], (0..3 * r * r).map(|i| (i as f64 * 0.013).sin()).collect()).unwrap();
        out.push((
            "rasterize_soft",
            grad_check_at(
                |g, x| (render_var(&self.face, x, &cam, &self.space.settings) * g.constant(w_img.clone())).mean(),
                &verts,
                FD_STEP,
                FD_TOL,
                &(0..verts.numel()).collect::<Vec<_>>(),
            ),
        ));

        let img = {
            let g = Graph::new();
            render_var(&self.face, g.constant(verts.clone()), &cam, &self.space.settings).detach()
        };
        let w_e = Tensor::vector((0..128).map(|i| (i as f64 * 0.7).cos()).collect());
        let px: Vec<usize> = (0..8).map(|k| k * 1531 % img.numel()).collect();
        out.push((
            "embed",
            grad_check_at(
                |g, x| (self.space.embedder.embed_var(x) * g.constant(w_e.clone())).sum(),
                &img,
                FD_STEP,
                FD_TOL,
                &px,
            ),
        ));

        let z = self.z_s();
        let zi = [0, 3, 7];
        let m_t = self.m_t.vertex_tensor();
        out.push((
            "l_vert",
            grad_check_at(
                |g, x| l_vert(g.constant(m_t.clone()), self.deformed(g, x)).unwrap(),
                &z,
                FD_STEP,
                FD_TOL,
                &zi,
            ),
        ));
        out.push((
            "l_clip",
            grad_check_at(
                |g, x| l_clip(&Self::consts(g, &self.e_t), &self.views(self.deformed(g, x))),
                &z,
                FD_STEP,
                FD_TOL,
                &zi,
            ),
        ));
        out.push((
            "l_in",
            grad_check_at(
                |g, x| {
                    let c = |t: &[Tensor]| Self::consts(g, t);
                    l_in(&c(&self.e_s_samp), &c(&self.e_s), &self.views(self.deformed(g, x)), &c(&self.e_t))
                },
                &z,
                FD_STEP,
                FD_TOL,
                &zi,
            ),
        ));
        out.push((
            "l_across",
            grad_check_at(
                |g, x| {
                    let c = |t: &[Tensor]| Self::consts(g, t);
                    l_across(&c(&self.e_t), &c(&self.e_s), &self.views(self.deformed(g, x)), &c(&self.e_s_samp))
                },
                &z,
                FD_STEP,
                FD_TOL,
                &zi,
            ),
        ));
        out.push((
            "l_style",
            grad_check_at(
                |g, x| l_style(&self.face, g.constant(m_t.clone()), self.deformed(g, x)).unwrap(),
                &z,
                FD_STEP,
                FD_TOL,
                &zi,
            ),
        ));
        out
    }
}

/// A configuration small enough that a whole pipeline runs in about a second.
pub fn tiny_config() -> facestyle::config::RunConfig {
    use facestyle::nn::Schedule;
    let mut c = facestyle::config::RunConfig::default();
    c.deform = DeformConfig {
        shape_latent: 8,
        expr_latent: 4,
        map_hidden: 16,
        siren_width: 16,
        siren_hidden_layers: 1,
        hyper_hidden: 16,
        ..DeformConfig::default()
    };
    c.train_ds.schedule = Schedule::linear(3e-4, 1e-4, 10);
    c.train_ds.pool_size = 20;
    c.train_dt.schedule = Schedule::linear(3e-5, 1e-5, 2);
    c.mage.n_points = 128;
    c.mage.calibration = 8;
    c.mage.batch = 2;
    c.mage.pretrain = Schedule::linear(1e-3, 1e-4, 5);
    c.mage.train = Schedule::linear(3e-4, 1e-4, 5);
    c.render.resolution = 32;
    c.rig.azimuths = vec![0.0];
    c
}

/// Ten triangles of unequal area in the plane.
pub fn ten_face_probe() -> TriMesh {
    let mut v = Vec::new();
    let mut f = Vec::new();
    for k in 0..10 {
        let x = 3.0 * k as f64;
        let s = 0.3 + 0.25 * k as f64;
        let i = v.len();
        v.extend([[x, 0.0, 0.0], [x + s, 0.0, 0.0], [x, s * (1.0 + 0.1 * k as f64), 0.0]]);
        f.push([i, i + 1, i + 2]);
    }
    TriMesh::new(v, f).unwrap()
}

/// Pearson's statistic and p-value of the face counts of `draws` surface
/// samples against the area proportions.
pub fn face_frequency_chi_square(mesh: &TriMesh, draws: usize, seed: u64) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let samples = facestyle::mesh::sims_sample(mesh, draws as f64 / mesh.num_vertices() as f64, seed).unwrap();
    assert_eq!(samples.len(), draws);
    let mut counts = vec![0.0; mesh.num_faces()];
    for s in &samples {
        counts[s.face] += 1.0;
    }
    let areas = mesh.face_areas();
    let total: f64 = areas.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(&areas)
        .map(|(c, a)| {
            let e = draws as f64 * a / total;
            (c - e) * (c - e) / e
        })
        .sum();
    let dof = (mesh.num_faces() - 1) as f64;
    (stat, 1.0 - ChiSquared::new(dof).unwrap().cdf(stat))
}
