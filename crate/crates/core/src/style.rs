//! Procedural style exemplars.
//!
//! A [`StyleOp`] edits vertex positions inside a region of the identity
//! exemplar; connectivity is never touched, so the pair stays in vertexwise
//! correspondence.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{add, centroid, dot, norm, normalized, scale, sub, vertex_normals, TriMesh, Vec3};
use crate::morph::{MorphParams, ToyMorphable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleKind {
    RegionScale,
    NormalBump,
    Flatten,
    Smooth,
}

/// A landmark-set name or an explicit list of vertex indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Region {
    Landmark(String),
    Vertices(Vec<usize>),
}

fn default_radius() -> f64 {
    0.3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleOp {
    pub kind: StyleKind,
    pub region: Region,
    /// Scale factor, bump height (bounding radii), flatten fraction or
    /// smoothing weight, depending on `kind`.
    pub magnitude: f64,
    /// Landmark regions take every vertex within this distance (bounding
    /// radii) of the landmark centroid.
    #[serde(default = "default_radius")]
    pub radius: f64,
}

impl StyleOp {
    pub fn new(kind: StyleKind, region: &str, magnitude: f64, radius: f64) -> Self {
        Self {
            kind,
            region: Region::Landmark(region.to_string()),
            magnitude,
            radius,
        }
    }
}

/// Region vertices with their falloff weight `(1 + cos(π d / r)) / 2`.
struct Resolved {
    center: Vec3,
    members: Vec<(usize, f64)>,
}

fn resolve(template: &TriMesh, op: &StyleOp) -> Result<Resolved> {
    if !op.magnitude.is_finite() {
        return Err(Error::Invalid(format!("style magnitude {}", op.magnitude)));
    }
    let r = template.bounding_radius();
    match &op.region {
        Region::Landmark(name) => {
            if !template.landmarks().contains_key(name) {
                return Err(Error::UnknownRegion(name.clone()));
            }
            if !(op.radius > 0.0) {
                return Err(Error::Invalid(format!("style radius {}", op.radius)));
            }
            let center = template.landmark_centroid(name)?;
            let rad = op.radius * r;
            let members = template
                .vertices()
                .iter()
                .enumerate()
                .filter_map(|(i, &v)| {
                    let d = norm(sub(v, center));
                    (d < rad).then(|| (i, 0.5 * (1.0 + (PI * d / rad).cos())))
                })
                .collect();
            Ok(Resolved { center, members })
        }
        Region::Vertices(idx) => {
            let n = template.num_vertices();
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(Error::UnknownRegion(format!("vertex {bad} of {n}")));
            }
            if idx.is_empty() {
                return Err(Error::UnknownRegion("empty vertex list".into()));
            }
            let pts: Vec<Vec3> = idx.iter().map(|&i| template.vertices()[i]).collect();
            Ok(Resolved {
                center: centroid(&pts),
                members: idx.iter().map(|&i| (i, 1.0)).collect(),
            })
        }
    }
}

fn apply_op(mesh: &TriMesh, op: &StyleOp, reg: &Resolved) -> Result<TriMesh> {
    let mut v = mesh.vertices().to_vec();
    let idx: Vec<usize> = reg.members.iter().map(|m| m.0).collect();
    let cur: Vec<Vec3> = idx.iter().map(|&i| v[i]).collect();
    let c = if cur.is_empty() { reg.center } else { centroid(&cur) };
    match op.kind {
        StyleKind::RegionScale => {
            if !(op.magnitude > 0.0) {
                return Err(Error::Invalid("region_scale needs a positive factor".into()));
            }
            for &i in &idx {
                v[i] = add(c, scale(sub(v[i], c), op.magnitude));
            }
        }
        StyleKind::NormalBump => {
            let n = vertex_normals(mesh);
            let h = op.magnitude * mesh.bounding_radius();
            for &(i, w) in &reg.members {
                v[i] = add(v[i], scale(n[i], h * w));
            }
        }
        StyleKind::Flatten => {
            let n = vertex_normals(mesh);
            let axis = normalized(idx.iter().fold([0.0; 3], |a, &i| add(a, n[i])));
            for &(i, w) in &reg.members {
                let h = dot(sub(v[i], c), axis);
                v[i] = sub(v[i], scale(axis, op.magnitude * w * h));
            }
        }
        StyleKind::Smooth => {
            let nb = mesh.vertex_neighbors();
            for _ in 0..SMOOTH_STEPS {
                let prev = v.clone();
                for &(i, w) in &reg.members {
                    if nb[i].is_empty() {
                        continue;
                    }
                    let avg = scale(
                        nb[i].iter().fold([0.0; 3], |a, &j| add(a, prev[j])),
                        1.0 / nb[i].len() as f64,
                    );
                    v[i] = add(prev[i], scale(sub(avg, prev[i]), op.magnitude * w));
                }
            }
        }
    }
    mesh.with_vertices(v)
}

const SMOOTH_STEPS: usize = 10;

/// Applies `ops` in order; regions are resolved on `template`.
pub fn apply_ops(template: &TriMesh, mesh: &TriMesh, ops: &[StyleOp]) -> Result<TriMesh> {
    let mut out = mesh.clone();
    for op in ops {
        let reg = resolve(template, op)?;
        out = apply_op(&out, op, &reg)?;
    }
    Ok(out)
}

/// Identity exemplar `M_S = decode(Φ_ref)` and style exemplar `M_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarPair {
    pub m_s: TriMesh,
    pub m_t: TriMesh,
    pub phi_ref: MorphParams,
}

pub fn gen_exemplar(morphable: &ToyMorphable, phi_ref: &MorphParams, ops: &[StyleOp]) -> Result<ExemplarPair> {
    let m_s = morphable.decode(phi_ref)?;
    let m_t = apply_ops(morphable.template(), &m_s, ops)?;
    Ok(ExemplarPair {
        m_s,
        m_t,
        phi_ref: phi_ref.clone(),
    })
}

pub const PRESETS: [&str; 4] = ["unicorn", "no_nose", "big_features", "smooth"];

/// Named procedural styles.
pub fn preset(name: &str) -> Result<Vec<StyleOp>> {
    use StyleKind::*;
    Ok(match name {
        "unicorn" => vec![StyleOp::new(NormalBump, "forehead", 0.45, 0.4)],
        "no_nose" => vec![StyleOp::new(Flatten, "nose", 1.0, 0.45)],
        "big_features" => vec![
            StyleOp::new(RegionScale, "left_eye", 1.4, 0.22),
            StyleOp::new(RegionScale, "right_eye", 1.4, 0.22),
            StyleOp::new(NormalBump, "nose", 0.3, 0.4),
            StyleOp::new(NormalBump, "lips", 0.1, 0.3),
        ],
        "smooth" => vec![StyleOp::new(Smooth, "nose", 0.8, 0.5)],
        _ => {
            return Err(Error::Config(format!(
                "unknown style preset `{name}` (expected one of {PRESETS:?})"
            )))
        }
    })
}
