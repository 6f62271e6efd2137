//! Training objectives as differentiable scalars.
//!
//! Per-view terms are plain sums over the rig, in rig order.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::deform::{Bound, LatentCode};
use crate::embed::FeatureEmbedder;
use crate::error::{Error, Result};
use crate::mesh::{face_normals_var, StencilSet, TriMesh};
use crate::morph::{MorphParams, ToyMorphable};
use crate::render::{render_var, RenderRig, RenderSettings};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_vert: f64,
    pub lambda_clip: f64,
    pub lambda_in: f64,
    pub lambda_across: f64,
    pub lambda_style: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_vert: 80.0,
            lambda_clip: 2e-3,
            lambda_in: 6e-3,
            lambda_across: 6e-3,
            lambda_style: 4e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_vert, self.lambda_clip, self.lambda_in, self.lambda_across, self.lambda_style];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and ≥ 0, got {w:?}")));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            lambda_vert: self.lambda_vert * s,
            lambda_clip: self.lambda_clip * s,
            lambda_in: self.lambda_in * s,
            lambda_across: self.lambda_across * s,
            lambda_style: self.lambda_style * s,
        }
    }
}

/// Five loss components of one adaptation step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents<T> {
    pub vert: T,
    pub clip: T,
    pub inner: T,
    pub across: T,
    pub style: T,
}

/// `λ_vert·L_vert + λ_clip·L_clip + λ_in·L_in + λ_across·L_across + λ_style·L_style`.
pub fn l_total<'g>(c: &LossComponents<Var<'g>>, w: &LossWeights) -> Var<'g> {
    c.vert.scale(w.lambda_vert)
        + c.clip.scale(w.lambda_clip)
        + c.inner.scale(w.lambda_in)
        + c.across.scale(w.lambda_across)
        + c.style.scale(w.lambda_style)
}

pub fn l_total_values(c: &LossComponents<f64>, w: &LossWeights) -> f64 {
    w.lambda_vert * c.vert
        + w.lambda_clip * c.clip
        + w.lambda_in * c.inner
        + w.lambda_across * c.across
        + w.lambda_style * c.style
}

/// Mean over rows of the squared Euclidean distance between `[N, 3]` point sets.
pub fn mean_sq_dist<'g>(a: Var<'g>, b: Var<'g>) -> Var<'g> {
    let n = a.shape()[0].max(1);
    (a - b).square().sum().scale(1.0 / n as f64)
}

/// Self-supervised reconstruction loss of the source field: the stencil is
/// evaluated on the template (query points) and on the decoded mesh (targets).
pub fn loss_ds<'g>(
    model: &Bound<'g, '_>,
    morphable: &ToyMorphable,
    params: &MorphParams,
    stencil: &StencilSet,
) -> Result<Var<'g>> {
    let g = model.vars[0].graph();
    let decoded = morphable.decode(params)?;
    let query = g.constant(stencil.apply_tensor(&morphable.template().vertex_tensor()));
    let target = g.constant(stencil.apply_tensor(&decoded.vertex_tensor()));
    let (zs, ze) = model.map_params(params);
    let pred = model.field(zs, ze).apply(query);
    Ok(mean_sq_dist(pred, target))
}

fn check_same_vertices(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: vertex arrays {a:?} and {b:?} differ")));
    }
    Ok(())
}

/// Mean squared vertex error between corresponding `[V, 3]` vertex sets.
pub fn l_vert<'g>(m_t: Var<'g>, m_t_star: Var<'g>) -> Result<Var<'g>> {
    check_same_vertices(&m_t.shape(), &m_t_star.shape(), "l_vert")?;
    Ok(mean_sq_dist(m_t, m_t_star))
}

/// Embeddings of one mesh (`[V, 3]` vertices over `faces`) from every rig view.
pub fn embed_views<'g>(
    faces: &TriMesh,
    vertices: Var<'g>,
    rig: &RenderRig,
    settings: &RenderSettings,
    embedder: &FeatureEmbedder,
) -> Vec<Var<'g>> {
    rig.cameras()
        .map(|cam| embedder.embed_var(render_var(faces, vertices, cam, settings)))
        .collect()
}

fn sum_sq<'g>(terms: impl Iterator<Item = Var<'g>>) -> Var<'g> {
    let mut acc: Option<Var<'g>> = None;
    for t in terms {
        let s = t.square().sum();
        acc = Some(match acc {
            None => s,
            Some(a) => a + s,
        });
    }
    acc.expect("rig has views")
}

/// `Σ_v ‖E(M_T) − E(M_T*)‖²` given per-view embeddings.
pub fn l_clip<'g>(e_t: &[Var<'g>], e_t_star: &[Var<'g>]) -> Var<'g> {
    sum_sq(e_t.iter().zip(e_t_star).map(|(&a, &b)| a - b))
}

/// `Σ_v ‖(E(M_S^samp) − E(M_S)) − (E(M_T^samp) − E(M_T))‖²`.
pub fn l_in<'g>(e_s_samp: &[Var<'g>], e_s: &[Var<'g>], e_t_samp: &[Var<'g>], e_t: &[Var<'g>]) -> Var<'g> {
    sum_sq((0..e_s.len()).map(|v| (e_s_samp[v] - e_s[v]) - (e_t_samp[v] - e_t[v])))
}

/// `Σ_v ‖(E(M_T) − E(M_S)) − (E(M_T^samp) − E(M_S^samp))‖²`.
pub fn l_across<'g>(e_t: &[Var<'g>], e_s: &[Var<'g>], e_t_samp: &[Var<'g>], e_s_samp: &[Var<'g>]) -> Var<'g> {
    sum_sq((0..e_s.len()).map(|v| (e_t[v] - e_s[v]) - (e_t_samp[v] - e_s_samp[v])))
}

/// `Σ_f (1 − cos(n_f, n'_f))` between two vertex sets over the same faces.
pub fn l_style<'g>(faces: &TriMesh, m_t: Var<'g>, pseudo: Var<'g>) -> Result<Var<'g>> {
    check_same_vertices(&m_t.shape(), &pseudo.shape(), "l_style")?;
    let n1 = face_normals_var(faces, m_t);
    let n2 = face_normals_var(faces, pseudo);
    // 1 − a·b = ½‖a − b‖² for unit normals; this form is exactly 0 at a = b
    Ok((n1 - n2).square().sum().scale(0.5))
}

/// Plain-value variant of [`l_style`] for two meshes.
pub fn l_style_meshes(m_t: &TriMesh, pseudo: &TriMesh) -> Result<f64> {
    if m_t.faces() != pseudo.faces() {
        return Err(Error::Mesh("l_style: connectivity differs".into()));
    }
    let g = Graph::new();
    let a = g.constant(m_t.vertex_tensor());
    let b = g.constant(pseudo.vertex_tensor());
    Ok(l_style(m_t, a, b)?.item())
}

/// `‖[z_s; z_e] − [ẑ_s; ẑ_e]‖²`.
pub fn l_enc<'g>(z_true: Var<'g>, z_pred: Var<'g>) -> Result<Var<'g>> {
    if z_true.shape() != z_pred.shape() {
        return Err(Error::Shape(format!(
            "l_enc: code shapes {:?} and {:?} differ",
            z_true.shape(),
            z_pred.shape()
        )));
    }
    Ok((z_true - z_pred).square().sum())
}

pub fn l_enc_codes(z_true: &LatentCode, z_pred: &LatentCode) -> Result<f64> {
    if z_true.dims() != z_pred.dims() {
        return Err(Error::Shape(format!(
            "l_enc: code dims {:?} and {:?} differ",
            z_true.dims(),
            z_pred.dims()
        )));
    }
    let g = Graph::new();
    let a = g.constant(Tensor::vector(z_true.concat()));
    let b = g.constant(Tensor::vector(z_pred.concat()));
    Ok(l_enc(a, b)?.item())
}
