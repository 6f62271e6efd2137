//! Stage runners and on-disk layout shared by the CLI, the Python module and
//! the end-to-end tests.
//!
//! A run directory holds fixed file names; each stage reads what earlier
//! stages wrote. Stage seeds are derived from one run seed, so a run is
//! fixed by `(config, seed)`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::checkpoint::{fingerprint, Checkpoint};
use crate::config::RunConfig;
use crate::deform::DeformModel;
use crate::embed::FeatureEmbedder;
use crate::error::{Error, Result};
use crate::mage::{pretrain_pointset_encoders, train_mage, MageArch, MageLog, MageModel};
use crate::mesh::{landmarks_to_json, TriMesh};
use crate::morph::{MorphParams, ToyMorphable};
use crate::render::RenderRig;
use crate::style::{gen_exemplar, ExemplarPair};
use crate::train::{train_ds, train_dt, DsLog, DtLog, SemanticSpace};

pub const MODEL_FILE: &str = "model.json";
pub const DS_FILE: &str = "ds.json";
pub const DT_FILE: &str = "dt.json";
pub const MAGE_FILE: &str = "mage.json";
pub const EXEMPLAR_SOURCE_FILE: &str = "exemplar_source.obj";
pub const EXEMPLAR_STYLE_FILE: &str = "exemplar_style.obj";
pub const LANDMARKS_FILE: &str = "landmarks.json";
pub const PHI_REF_FILE: &str = "phi_ref.json";
pub const TEMPLATE_FILE: &str = "template.obj";

/// Independent seed for one named stage of a run.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn gen_model(cfg: &RunConfig, seed: u64) -> Result<ToyMorphable> {
    ToyMorphable::build(&cfg.morph, stage_seed(seed, "morph"))
}

pub fn save_morphable(m: &ToyMorphable, path: &Path, seed: u64) -> Result<()> {
    let mut c = Checkpoint::new(morph_fingerprint(m), seed);
    c.extend_prefixed("", m.to_named());
    c.save(path)
}

fn morph_fingerprint(m: &ToyMorphable) -> String {
    fingerprint(&(
        "morph",
        m.template().num_vertices(),
        m.template().num_faces(),
        m.shape_rank(),
        m.expr_rank(),
    ))
}

pub fn load_morphable(path: &Path) -> Result<ToyMorphable> {
    let c = Checkpoint::load(path, None, false)?;
    let m = ToyMorphable::from_named(&c.tensors)?;
    if morph_fingerprint(&m) != c.fingerprint {
        return Err(Error::Fingerprint {
            expected: morph_fingerprint(&m),
            found: c.fingerprint,
        });
    }
    Ok(m)
}

pub fn new_deform(cfg: &RunConfig, morph: &ToyMorphable, seed: u64) -> Result<DeformModel> {
    DeformModel::new(&cfg.deform, morph.shape_rank(), morph.expr_rank(), stage_seed(seed, "ds.init"))
}

pub fn run_train_ds(cfg: &RunConfig, morph: &ToyMorphable, seed: u64) -> Result<(DeformModel, DsLog)> {
    let mut model = new_deform(cfg, morph, seed)?;
    let log = train_ds(&mut model, morph, &cfg.train_ds, stage_seed(seed, "ds.train"))?;
    Ok((model, log))
}

pub fn save_deform(model: &DeformModel, path: &Path, seed: u64) -> Result<()> {
    let mut c = Checkpoint::new(model.fingerprint(), seed);
    c.extend_prefixed("", model.to_named());
    c.save(path)
}

/// Loads a field checkpoint into the architecture described by `cfg`.
pub fn load_deform(cfg: &RunConfig, morph: &ToyMorphable, path: &Path, force: bool) -> Result<DeformModel> {
    let mut model = DeformModel::new(&cfg.deform, morph.shape_rank(), morph.expr_rank(), 0)?;
    let c = Checkpoint::load(path, Some(&model.fingerprint()), force)?;
    model.load_named(&c.tensors)?;
    Ok(model)
}

/// `Φ_ref` from the config, or drawn from the run seed with `ψ` scaled down.
pub fn phi_ref(cfg: &RunConfig, morph: &ToyMorphable, seed: u64) -> Result<MorphParams> {
    if let Some(p) = &cfg.exemplar.phi_ref {
        morph.check_params(p)?;
        return Ok(p.clone());
    }
    let mut p = morph.sample_params(stage_seed(seed, "exemplar"));
    p.psi.iter_mut().for_each(|x| *x *= cfg.exemplar.expression_scale);
    Ok(p)
}

pub fn make_exemplar(cfg: &RunConfig, morph: &ToyMorphable, seed: u64) -> Result<ExemplarPair> {
    gen_exemplar(morph, &phi_ref(cfg, morph, seed)?, &cfg.exemplar.resolved_ops()?)
}

pub fn save_exemplar(ex: &ExemplarPair, dir: &Path) -> Result<()> {
    ex.m_s.write_obj(&dir.join(EXEMPLAR_SOURCE_FILE))?;
    ex.m_t.write_obj(&dir.join(EXEMPLAR_STYLE_FILE))?;
    let lm = dir.join(LANDMARKS_FILE);
    std::fs::write(&lm, landmarks_to_json(ex.m_s.landmarks())).map_err(|e| Error::io(&lm, e))?;
    let p = dir.join(PHI_REF_FILE);
    std::fs::write(&p, serde_json::to_string_pretty(&ex.phi_ref)?).map_err(|e| Error::io(&p, e))
}

pub fn load_exemplar(dir: &Path) -> Result<ExemplarPair> {
    let lm = dir.join(LANDMARKS_FILE);
    let m_s = TriMesh::read_obj_with_landmarks(&dir.join(EXEMPLAR_SOURCE_FILE), Some(&lm))?;
    let m_t = TriMesh::read_obj_with_landmarks(&dir.join(EXEMPLAR_STYLE_FILE), Some(&lm))?;
    let p = dir.join(PHI_REF_FILE);
    let s = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(ExemplarPair {
        m_s,
        m_t,
        phi_ref: serde_json::from_str(&s)?,
    })
}

/// Rig anchored on `anchor`'s landmarks, with the configured renderer and embedder.
pub fn semantic_space(cfg: &RunConfig, anchor: &TriMesh) -> Result<SemanticSpace> {
    let rig = RenderRig::build(anchor, &cfg.rig)?;
    let embedder = FeatureEmbedder::new(cfg.embedder_seed, cfg.render.resolution)?;
    SemanticSpace::new(rig, cfg.render, embedder)
}

pub fn run_train_dt(
    cfg: &RunConfig,
    model_ds: &DeformModel,
    exemplar: &ExemplarPair,
    morph: &ToyMorphable,
    seed: u64,
) -> Result<(DeformModel, DtLog)> {
    let space = semantic_space(cfg, &exemplar.m_s)?;
    train_dt(model_ds, exemplar, morph, &space, &cfg.train_dt, stage_seed(seed, "dt.train"))
}

fn mage_arch(cfg: &RunConfig, morph: &ToyMorphable) -> MageArch {
    MageArch {
        shape_rank: morph.shape_rank(),
        expr_rank: morph.expr_rank(),
        shape_latent: cfg.deform.shape_latent,
        expr_latent: cfg.deform.expr_latent,
        n_points: cfg.mage.n_points,
        omega: cfg.mage.omega,
    }
}

/// Pretrains the point-set encoders, then fits the mapping heads.
pub fn run_train_mage(
    cfg: &RunConfig,
    model_ds: &DeformModel,
    morph: &ToyMorphable,
    seed: u64,
) -> Result<(MageModel, MageLog, MageLog)> {
    let (id_enc, exp_enc, pre) = pretrain_pointset_encoders(morph, &cfg.mage, stage_seed(seed, "mage.pretrain"))?;
    let arch = mage_arch(cfg, morph);
    let mut mage = MageModel::new(
        id_enc,
        exp_enc,
        arch.shape_latent,
        arch.expr_latent,
        arch.n_points,
        stage_seed(seed, "mage.init"),
    );
    let log = train_mage(&mut mage, model_ds, morph, &cfg.mage, stage_seed(seed, "mage.train"))?;
    Ok((mage, pre, log))
}

pub fn save_mage(mage: &MageModel, path: &Path, seed: u64) -> Result<()> {
    let mut c = Checkpoint::new(mage.fingerprint(), seed);
    c.extend_prefixed("", mage.to_named());
    c.save(path)
}

pub fn load_mage(cfg: &RunConfig, morph: &ToyMorphable, path: &Path, force: bool) -> Result<MageModel> {
    let mut mage = MageModel::empty(&mage_arch(cfg, morph));
    let c = Checkpoint::load(path, Some(&mage.fingerprint()), force)?;
    mage.load_named(&c.tensors)?;
    Ok(mage)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_seeds_differ_and_repeat() {
        assert_eq!(stage_seed(1, "a"), stage_seed(1, "a"));
        assert_ne!(stage_seed(1, "a"), stage_seed(1, "b"));
        assert_ne!(stage_seed(1, "a"), stage_seed(2, "a"));
    }
}
