//! Optimization loops for the source field, the target field and the encoder.
//!
//! Every loop is single-threaded and draws all randomness from one ChaCha8
//! stream seeded by the caller, so a `(seed, config)` pair fixes the result
//! bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::deform::DeformModel;
use crate::embed::FeatureEmbedder;
use crate::error::{Error, Result};
use crate::losses::{
    embed_views, l_across, l_clip, l_in, l_style, l_total, l_vert, loss_ds, LossComponents, LossWeights,
};
use crate::mesh::{SamplingStrategy, TriMesh};
use crate::morph::{MorphParams, ToyMorphable};
use crate::nn::{Adam, Schedule};
use crate::render::{RenderRig, RenderSettings};
use crate::style::ExemplarPair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsTrainConfig {
    pub schedule: Schedule,
    /// Number of pre-drawn `Φ` samples; each iteration picks one at random.
    pub pool_size: usize,
    pub sampling: SamplingStrategy,
}

impl Default for DsTrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::linear(3e-4, 1e-5, 3000),
            pool_size: 2000,
            sampling: SamplingStrategy::Sims,
        }
    }
}

impl DsTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.pool_size == 0 {
            return Err(Error::Config("pool_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-iteration loss record of a source-field run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DsLog {
    pub losses: Vec<f64>,
}

impl DsLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

pub fn sample_pool(morphable: &ToyMorphable, n: usize, rng: &mut ChaCha8Rng) -> Vec<MorphParams> {
    (0..n).map(|_| morphable.sample_params_with(rng)).collect()
}

/// Trains mapping networks and hypernetwork jointly on the reconstruction
/// loss. On a non-finite loss the model keeps its last finite parameters and
/// [`Error::Diverged`] is returned.
pub fn train_ds(model: &mut DeformModel, morphable: &ToyMorphable, cfg: &DsTrainConfig, seed: u64) -> Result<DsLog> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = sample_pool(morphable, cfg.pool_size, &mut rng);
    let ids = model.all_ids();
    let mut adam = Adam::new(model.params(), ids.clone());
    let mut log = DsLog::default();
    for it in 0..cfg.schedule.total_iterations {
        let params = &pool[rng.gen_range(0..pool.len())];
        let stencil_seed: u64 = rng.gen();
        let decoded = morphable.decode(params)?;
        let stencil = cfg.sampling.stencil(&decoded, stencil_seed)?;
        let grads = {
            let g = Graph::new();
            let bound = model.bind(&g, &ids);
            let loss = loss_ds(&bound, morphable, params, &stencil)?;
            let l = loss.item();
            if !l.is_finite() {
                return Err(Error::Diverged {
                    iteration: it,
                    what: format!("reconstruction loss {l}"),
                });
            }
            log.losses.push(l);
            let mut grads = g.backward(loss)?;
            bound.vars.iter().map(|&v| grads.take(v)).collect::<Vec<_>>()
        };
        if grads.iter().any(|t| !t.all_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                what: "non-finite gradient".into(),
            });
        }
        adam.step(model.params_mut(), &grads, cfg.schedule.rate(it));
    }
    Ok(log)
}

/// Mean reconstruction loss over `params`, each evaluated with its own
/// stencil drawn from `seed`.
pub fn eval_ds(
    model: &DeformModel,
    morphable: &ToyMorphable,
    params: &[MorphParams],
    sampling: SamplingStrategy,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for p in params {
        let decoded = morphable.decode(p)?;
        let stencil = sampling.stencil(&decoded, rng.gen())?;
        let g = Graph::new();
        let bound = model.bind_frozen(&g);
        total += loss_ds(&bound, morphable, p, &stencil)?.item();
    }
    Ok(total / params.len().max(1) as f64)
}

/// Which mesh the normal-alignment loss compares against the style exemplar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleMode {
    /// `D_T([z_s^samp; z_e^ref])`: identity varies, expression pinned to the exemplar's.
    Pseudo,
    /// `D_T([z_s^samp; z_e^samp])`: the sampled mesh itself.
    Direct,
}

impl StyleMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pseudo" => Ok(Self::Pseudo),
            "direct" => Ok(Self::Direct),
            _ => Err(Error::Config(format!("unknown style mode `{s}` (expected pseudo or direct)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtTrainConfig {
    pub schedule: Schedule,
    pub weights: LossWeights,
    pub style_mode: StyleMode,
}

impl Default for DtTrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::linear(3e-5, 1e-5, 2000),
            weights: LossWeights::default(),
            style_mode: StyleMode::Pseudo,
        }
    }
}

/// Renderer, rig and embedder shared by every semantic loss and metric.
#[derive(Clone, Debug)]
pub struct SemanticSpace {
    pub rig: RenderRig,
    pub settings: RenderSettings,
    pub embedder: FeatureEmbedder,
}

impl SemanticSpace {
    pub fn new(rig: RenderRig, settings: RenderSettings, embedder: FeatureEmbedder) -> Result<Self> {
        settings.validate()?;
        if embedder.resolution() != settings.resolution {
            return Err(Error::Config(format!(
                "embedder resolution {} differs from render resolution {}",
                embedder.resolution(),
                settings.resolution
            )));
        }
        Ok(Self {
            rig,
            settings,
            embedder,
        })
    }

    /// Per-view embeddings of a fixed mesh.
    pub fn embed_mesh(&self, mesh: &TriMesh) -> Vec<Tensor> {
        let g = Graph::new();
        let v = g.constant(mesh.vertex_tensor());
        embed_views(mesh, v, &self.rig, &self.settings, &self.embedder)
            .into_iter()
            .map(|e| e.detach())
            .collect()
    }
}

/// Per-iteration loss components of a target-field run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DtLog {
    pub rows: Vec<LossComponents<f64>>,
    pub totals: Vec<f64>,
}

impl DtLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss_vert,loss_clip,loss_in,loss_across,loss_style,total\n");
        for (i, (c, t)) in self.rows.iter().zip(&self.totals).enumerate() {
            s.push_str(&format!(
                "{i},{},{},{},{},{},{t}\n",
                c.vert, c.clip, c.inner, c.across, c.style
            ));
        }
        s
    }
}

/// Fine-tunes a copy of `model_ds` into the style of `exemplar`. Only the
/// hypernetwork is updated; mapping networks and `model_ds` stay frozen.
/// Terms whose weight is zero are skipped and logged as 0.
pub fn train_dt(
    model_ds: &DeformModel,
    exemplar: &ExemplarPair,
    morphable: &ToyMorphable,
    space: &SemanticSpace,
    cfg: &DtTrainConfig,
    seed: u64,
) -> Result<(DeformModel, DtLog)> {
    cfg.schedule.validate()?;
    cfg.weights.validate()?;
    let template = morphable.template();
    if exemplar.m_t.faces() != template.faces() || exemplar.m_s.faces() != template.faces() {
        return Err(Error::Mesh("exemplar connectivity differs from the template".into()));
    }
    let w = &cfg.weights;
    let semantic = w.lambda_clip > 0.0 || w.lambda_in > 0.0 || w.lambda_across > 0.0;
    let (e_t, e_s) = if semantic {
        (space.embed_mesh(&exemplar.m_t), space.embed_mesh(&exemplar.m_s))
    } else {
        (vec![], vec![])
    };
    let code_ref = model_ds.map(&exemplar.phi_ref)?;
    let mut model = model_ds.clone_for_target();
    let ids = model.hyper_ids();
    let mut adam = Adam::new(model.params(), ids.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = DtLog::default();
    let tmpl_t = template.vertex_tensor();
    let m_t_t = exemplar.m_t.vertex_tensor();

    for it in 0..cfg.schedule.total_iterations {
        let phi = morphable.sample_params_with(&mut rng);
        let code = model_ds.map(&phi)?;
        let e_s_samp = if w.lambda_in > 0.0 || w.lambda_across > 0.0 {
            space.embed_mesh(&model_ds.deform_mesh(&code, template)?)
        } else {
            vec![]
        };
        let (comps, total, grads) = {
            let g = Graph::new();
            let bound = model.bind(&g, &ids);
            let tmpl = g.constant(tmpl_t.clone());
            let (zs, ze) = bound.code_vars(&code);
            let (zs_r, ze_r) = bound.code_vars(&code_ref);
            let m_t = g.constant(m_t_t.clone());
            let m_t_samp = bound.field(zs, ze).apply(tmpl);
            let m_t_star = bound.field(zs_r, ze_r).apply(tmpl);
            let consts = |ts: &[Tensor]| ts.iter().map(|t| g.constant(t.clone())).collect::<Vec<_>>();
            let zero = g.scalar(0.0);
            let vert = l_vert(m_t, m_t_star)?;
            let views = |v| embed_views(template, v, &space.rig, &space.settings, &space.embedder);
            let clip = if w.lambda_clip > 0.0 {
                l_clip(&consts(&e_t), &views(m_t_star))
            } else {
                zero
            };
            let (inner, across) = if w.lambda_in > 0.0 || w.lambda_across > 0.0 {
                let (et, es, ess) = (consts(&e_t), consts(&e_s), consts(&e_s_samp));
                let ets = views(m_t_samp);
                (l_in(&ess, &es, &ets, &et), l_across(&et, &es, &ets, &ess))
            } else {
                (zero, zero)
            };
            let style = if w.lambda_style > 0.0 {
                let other = match cfg.style_mode {
                    StyleMode::Pseudo => bound.field(zs, ze_r).apply(tmpl),
                    StyleMode::Direct => m_t_samp,
                };
                l_style(template, m_t, other)?
            } else {
                zero
            };
            let c = LossComponents {
                vert,
                clip,
                inner,
                across,
                style,
            };
            let total = l_total(&c, w);
            let values = LossComponents {
                vert: vert.item(),
                clip: clip.item(),
                inner: inner.item(),
                across: across.item(),
                style: style.item(),
            };
            let t = total.item();
            if !t.is_finite() {
                return Err(Error::Diverged {
                    iteration: it,
                    what: format!("total loss {t} ({values:?})"),
                });
            }
            let mut grads = g.backward(total)?;
            let grads: Vec<Tensor> = ids.iter().map(|id| grads.take(bound.vars[id.0])).collect();
            (values, t, grads)
        };
        if grads.iter().any(|t| !t.all_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                what: "non-finite gradient".into(),
            });
        }
        log.rows.push(comps);
        log.totals.push(total);
        adam.step(model.params_mut(), &grads, cfg.schedule.rate(it));
    }
    Ok((model, log))
}

/// `mean‖D_T(z_s, z_e1) − D_T(z_s, z_e2)‖ / mean‖D_S(z_s, z_e1) − D_S(z_s, z_e2)‖`
/// over `pairs` draws of one identity and two expressions, on template vertices.
pub fn expression_sensitivity(
    model_dt: &DeformModel,
    model_ds: &DeformModel,
    morphable: &ToyMorphable,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = morphable.template();
    let spread = |m: &DeformModel, a: &MorphParams, b: &MorphParams| -> Result<f64> {
        let va = m.deform_points(&m.map(a)?, template.vertices())?;
        let vb = m.deform_points(&m.map(b)?, template.vertices())?;
        Ok(va.iter().zip(&vb).map(|(x, y)| crate::mesh::norm(crate::mesh::sub(*x, *y))).sum::<f64>()
            / va.len() as f64)
    };
    let (mut num, mut den) = (0.0, 0.0);
    for _ in 0..pairs {
        let a = morphable.sample_params_with(&mut rng);
        let b = MorphParams {
            beta: a.beta.clone(),
            psi: morphable.sample_coeffs(&mut rng, morphable.expr_rank()),
        };
        num += spread(model_dt, &a, &b)?;
        den += spread(model_ds, &a, &b)?;
    }
    if den == 0.0 {
        return Err(Error::Invalid("source model has no expression response".into()));
    }
    Ok(num / den)
}
