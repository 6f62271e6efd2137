//! Sampling-strategy ablation for the source field.
//!
//! Each strategy trains its own field from the same seeds; every field is
//! then scored on held-out identities evaluated on four remeshings of the
//! template.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::deform::{DeformConfig, DeformModel};
use crate::error::{Error, Result};
use crate::losses::mean_sq_dist;
use crate::mesh::SamplingStrategy;
use crate::morph::{MorphParams, TemplateVariant, TopologyVariant, ToyMorphable};
use crate::nn::Schedule;
use crate::train::{sample_pool, train_ds, DsTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub methods: Vec<SamplingStrategy>,
    pub schedule: Schedule,
    pub pool_size: usize,
    /// Held-out identities per evaluation surface.
    pub eval_samples: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            methods: SamplingStrategy::ALL.to_vec(),
            schedule: Schedule::linear(3e-4, 1e-5, 1000),
            pool_size: 2000,
            eval_samples: 20,
        }
    }
}

/// Mean squared error between the field applied to `variant`'s vertices and
/// the same remeshing of each decoded identity.
pub fn reconstruction_error(
    model: &DeformModel,
    morphable: &ToyMorphable,
    params: &[MorphParams],
    variant: &TemplateVariant,
) -> Result<f64> {
    let query = variant.mesh.vertex_tensor();
    let mut total = 0.0;
    for p in params {
        let target = variant.carry(&morphable.decode(p)?)?.vertex_tensor();
        let g = Graph::new();
        let bound = model.bind_frozen(&g);
        let (zs, ze) = bound.map_params(p);
        let pred = bound.field(zs, ze).apply(g.constant(query.clone()));
        total += mean_sq_dist(pred, g.constant(target)).item();
    }
    Ok(total / params.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub method: SamplingStrategy,
    /// Seed-averaged error per surface, in [`TopologyVariant::ALL`] order.
    pub errors: [f64; 4],
    /// Per-seed errors, same layout.
    pub per_seed: Vec<[f64; 4]>,
}

impl AblationRow {
    pub fn average(&self) -> f64 {
        self.errors.iter().sum::<f64>() / 4.0
    }

    pub fn error(&self, v: TopologyVariant) -> f64 {
        self.errors[TopologyVariant::ALL.iter().position(|&k| k == v).expect("known variant")]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, m: SamplingStrategy) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == m)
    }

    /// `method,original,simplified,loop1,loop2,average`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,original,simplified,loop1,loop2,average\n");
        for r in &self.rows {
            let e = r.errors;
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method,
                e[0],
                e[1],
                e[2],
                e[3],
                r.average()
            ));
        }
        s
    }
}

/// Trains one field per (method, seed) and scores it on every remeshing.
/// Held-out identities come from `eval_seed` and are shared by all runs.
pub fn ablate_sims(
    morphable: &ToyMorphable,
    deform: &DeformConfig,
    cfg: &AblationConfig,
    eval_seed: u64,
) -> Result<AblationTable> {
    if cfg.seeds.is_empty() || cfg.methods.is_empty() || cfg.eval_samples == 0 {
        return Err(Error::Config("ablation needs seeds, methods and eval samples".into()));
    }
    let variants = TopologyVariant::ALL
        .iter()
        .map(|&k| morphable.variant(k))
        .collect::<Result<Vec<_>>>()?;
    let held_out = sample_pool(morphable, cfg.eval_samples, &mut ChaCha8Rng::seed_from_u64(eval_seed));
    let mut rows = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let train = DsTrainConfig {
            schedule: cfg.schedule,
            pool_size: cfg.pool_size,
            sampling: method,
        };
        let mut per_seed = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            // same initialization and data stream for every method
            let mut model = DeformModel::new(deform, morphable.shape_rank(), morphable.expr_rank(), seed)?;
            train_ds(&mut model, morphable, &train, seed)?;
            let mut e = [0.0; 4];
            for (slot, v) in e.iter_mut().zip(&variants) {
                *slot = reconstruction_error(&model, morphable, &held_out, v)?;
            }
            per_seed.push(e);
        }
        let n = per_seed.len() as f64;
        let errors = std::array::from_fn(|k| per_seed.iter().map(|e| e[k]).sum::<f64>() / n);
        rows.push(AblationRow {
            method,
            errors,
            per_seed,
        });
    }
    Ok(AblationTable { rows })
}
