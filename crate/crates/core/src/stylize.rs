//! Inference: stylizing arbitrary-topology targets, blending styles and
//! scoring results.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::deform::DeformModel;
use crate::embed::cos;
use crate::error::{Error, Result};
use crate::mage::MageModel;
use crate::mesh::TriMesh;
use crate::train::SemanticSpace;

/// Projects `target` into latent space and deforms `desired_template` with
/// the stylized field. The output has `desired_template`'s connectivity.
pub fn stylize(
    target: &TriMesh,
    mage: &MageModel,
    model_dt: &DeformModel,
    desired_template: &TriMesh,
) -> Result<TriMesh> {
    let code = mage.encode(target)?;
    model_dt.deform_mesh(&code, desired_template)
}

/// Two checkpoints and a blend weight; `alpha = 1` gives `checkpoint_a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendSpec {
    pub alpha: f64,
    pub checkpoint_a: std::path::PathBuf,
    pub checkpoint_b: std::path::PathBuf,
}

/// `α·A + (1−α)·B` for every named tensor. Endpoints copy exactly.
pub fn interpolate(a: &Checkpoint, b: &Checkpoint, alpha: f64) -> Result<Checkpoint> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if a.fingerprint != b.fingerprint {
        return Err(Error::Shape(format!(
            "checkpoints have different architectures ({} vs {})",
            a.fingerprint, b.fingerprint
        )));
    }
    if !a.tensors.keys().eq(b.tensors.keys()) {
        return Err(Error::Shape("checkpoints have different tensor names".into()));
    }
    let mut out = Checkpoint::new(a.fingerprint.clone(), if alpha == 0.0 { b.seed } else { a.seed });
    for ((name, x), y) in a.tensors.iter().zip(b.tensors.values()) {
        let t = crate::autodiff::Tensor::lerp(x, y, alpha)
            .map_err(|_| Error::Shape(format!("tensor `{name}`: shapes {:?} and {:?}", x.shape(), y.shape())))?;
        out.insert(name.clone(), t);
    }
    Ok(out)
}

pub fn interpolate_files(spec: &BlendSpec) -> Result<Checkpoint> {
    let a = Checkpoint::load(&spec.checkpoint_a, None, false)?;
    let b = Checkpoint::load(&spec.checkpoint_b, None, false)?;
    interpolate(&a, &b, spec.alpha)
}

/// Mean per-view cosine similarity of rendered embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Against the style exemplar.
    pub sp: f64,
    /// Against the deformation target.
    pub ip: f64,
    pub avg: f64,
}

/// Scores a stylized mesh; every mesh is rendered through the same rig.
pub fn eval_metrics(
    stylized: &TriMesh,
    style_exemplar: &TriMesh,
    deformation_target: &TriMesh,
    space: &SemanticSpace,
) -> Result<EvalMetrics> {
    for m in [stylized, style_exemplar, deformation_target] {
        if m.num_faces() == 0 {
            return Err(Error::Mesh("metrics need meshes with faces".into()));
        }
    }
    let e = space.embed_mesh(stylized);
    let mean_cos = |other: &TriMesh| {
        let o = space.embed_mesh(other);
        e.iter().zip(&o).map(|(a, b)| cos(a.data(), b.data())).sum::<f64>() / e.len().max(1) as f64
    };
    let sp = mean_cos(style_exemplar);
    let ip = mean_cos(deformation_target);
    Ok(EvalMetrics {
        sp,
        ip,
        avg: 0.5 * (sp + ip),
    })
}
