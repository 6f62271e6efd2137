//! Latent-conditioned deformation field.
//!
//! Mapping networks turn `(β, ψ)` into `z = [z_s; z_e]`. A hypernetwork maps
//! `z` to every weight of a small SIREN, and the SIREN evaluates a
//! displacement at each query point: `D(p) = p + Δ(p; hyper(z))`. The field is
//! pointwise, so it does not care which mesh the points came from.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, Graph, Tensor, Var};
use crate::checkpoint::{fingerprint, NamedTensors};
use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::morph::MorphParams;
use crate::nn::{uniform, Linear, Mlp, ParamId, ParamSet, LEAKY_SLOPE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformConfig {
    pub shape_latent: usize,
    pub expr_latent: usize,
    pub map_hidden: usize,
    pub siren_width: usize,
    pub siren_hidden_layers: usize,
    pub omega0: f64,
    pub hyper_hidden: usize,
    /// Hypernet output weights start at this fraction of the SIREN init bound
    /// (divided by √hyper_hidden).
    pub hyper_init_scale: f64,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            shape_latent: 64,
            expr_latent: 32,
            map_hidden: 64,
            siren_width: 64,
            siren_hidden_layers: 3,
            omega0: 30.0,
            hyper_hidden: 128,
            hyper_init_scale: 0.1,
        }
    }
}

/// Everything that fixes tensor shapes; hashed into checkpoint fingerprints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformArch {
    pub shape_rank: usize,
    pub expr_rank: usize,
    pub config: DeformConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub z_s: Vec<f64>,
    pub z_e: Vec<f64>,
}

impl LatentCode {
    pub fn concat(&self) -> Vec<f64> {
        self.z_s.iter().chain(&self.z_e).copied().collect()
    }

    pub fn from_flat(flat: &[f64], d_s: usize) -> Self {
        Self {
            z_s: flat[..d_s].to_vec(),
            z_e: flat[d_s..].to_vec(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.z_s.len(), self.z_e.len())
    }

    pub fn distance(&self, other: &LatentCode) -> f64 {
        self.concat()
            .iter()
            .zip(other.concat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Hypernetwork branch producing one SIREN layer.
#[derive(Clone, Debug, PartialEq)]
struct HyperGroup {
    hidden: Linear,
    out: Linear,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeformModel {
    arch: DeformArch,
    params: ParamSet,
    map_shape: Mlp,
    map_exp: Mlp,
    hyper: Vec<HyperGroup>,
}

/// SIREN weights produced for one code.
pub struct Field<'g> {
    layers: Vec<(Var<'g>, Var<'g>)>,
    omega0: f64,
}

impl<'g> Field<'g> {
    /// Displacement `Δ(points)` for `[N, 3]` points.
    pub fn displacement(&self, points: Var<'g>) -> Var<'g> {
        let last = self.layers.len() - 1;
        let mut x = points;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let y = x.matmul(w) + b;
            x = if i == 0 {
                y.scale(self.omega0).sin()
            } else if i < last {
                y.sin()
            } else {
                y
            };
        }
        x
    }

    /// Deformed points `p + Δ(p)`.
    pub fn apply(&self, points: Var<'g>) -> Var<'g> {
        points + self.displacement(points)
    }
}

/// A model whose parameters are placed on a graph.
pub struct Bound<'g, 'm> {
    model: &'m DeformModel,
    graph: &'g Graph,
    pub vars: Vec<Var<'g>>,
}

impl<'g, 'm> Bound<'g, 'm> {
    /// `(z_s, z_e)` as `[1, d_s]`, `[1, d_e]` from `[1, K_s]`, `[1, K_e]`.
    pub fn map(&self, beta: Var<'g>, psi: Var<'g>) -> (Var<'g>, Var<'g>) {
        (
            self.model.map_shape.forward(&self.vars, beta),
            self.model.map_exp.forward(&self.vars, psi),
        )
    }

    pub fn map_params(&self, p: &MorphParams) -> (Var<'g>, Var<'g>) {
        let g = self.graph;
        let beta = g.constant(Tensor::new(&[1, p.beta.len()], p.beta.clone()).expect("row"));
        let psi = g.constant(Tensor::new(&[1, p.psi.len()], p.psi.clone()).expect("row"));
        self.map(beta, psi)
    }

    pub fn code_vars(&self, code: &LatentCode) -> (Var<'g>, Var<'g>) {
        let g = self.graph;
        (
            g.constant(Tensor::new(&[1, code.z_s.len()], code.z_s.clone()).expect("row")),
            g.constant(Tensor::new(&[1, code.z_e.len()], code.z_e.clone()).expect("row")),
        )
    }

    pub fn field(&self, z_s: Var<'g>, z_e: Var<'g>) -> Field<'g> {
        let z = concat(&[z_s, z_e], 1);
        let layers = self
            .model
            .hyper
            .iter()
            .map(|h| {
                let hid = h.hidden.forward(&self.vars, z).leaky_relu(LEAKY_SLOPE);
                let p = h.out.forward(&self.vars, hid);
                let nw = h.fan_in * h.fan_out;
                let w = p.narrow(1, 0, nw).reshape(&[h.fan_in, h.fan_out]);
                let b = p.narrow(1, nw, h.fan_out).reshape(&[h.fan_out]);
                (w, b)
            })
            .collect();
        Field {
            layers,
            omega0: self.model.arch.config.omega0,
        }
    }
}

impl DeformModel {
    pub fn new(config: &DeformConfig, shape_rank: usize, expr_rank: usize, seed: u64) -> Result<Self> {
        if config.siren_hidden_layers == 0 || config.siren_width == 0 {
            return Err(Error::Config("SIREN needs at least one hidden layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = config;
        let map_shape = Mlp::new(&mut params, "map_shape", &[shape_rank, c.map_hidden, c.map_hidden, c.shape_latent], &mut rng);
        let map_exp = Mlp::new(&mut params, "map_exp", &[expr_rank, c.map_hidden, c.expr_latent], &mut rng);

        let mut dims = vec![3];
        dims.extend(std::iter::repeat(c.siren_width).take(c.siren_hidden_layers));
        dims.push(3);
        let n_layers = dims.len() - 1;
        let z_dim = c.shape_latent + c.expr_latent;
        let mut hyper = Vec::with_capacity(n_layers);
        for (i, d) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (d[0], d[1]);
            let head = i == n_layers - 1;
            let name = format!("hyper.{i}");
            let hidden = Linear::new(
                &mut params,
                &format!("{name}.hidden"),
                z_dim,
                c.hyper_hidden,
                1.0 / (z_dim as f64).sqrt(),
                &mut rng,
            );
            let n_out = fan_in * fan_out + fan_out;
            let out = if head {
                // zero displacement head: the field starts as the identity
                Linear::from_tensors(
                    &mut params,
                    &format!("{name}.out"),
                    Tensor::zeros(&[c.hyper_hidden, n_out]),
                    Tensor::zeros(&[n_out]),
                )
            } else {
                let siren_bound = if i == 0 {
                    1.0 / fan_in as f64
                } else {
                    (6.0 / fan_in as f64).sqrt()
                };
                let w = uniform(
                    &[c.hyper_hidden, n_out],
                    c.hyper_init_scale * siren_bound / (c.hyper_hidden as f64).sqrt(),
                    &mut rng,
                );
                // bias = an ordinary SIREN initialization of this layer
                let mut b = uniform(&[fan_in * fan_out], siren_bound, &mut rng).into_data();
                b.extend(uniform(&[fan_out], 1.0 / (fan_in as f64).sqrt(), &mut rng).into_data());
                Linear::from_tensors(&mut params, &format!("{name}.out"), w, Tensor::vector(b))
            };
            hyper.push(HyperGroup {
                hidden,
                out,
                fan_in,
                fan_out,
            });
        }
        Ok(Self {
            arch: DeformArch {
                shape_rank,
                expr_rank,
                config: config.clone(),
            },
            params,
            map_shape,
            map_exp,
            hyper,
        })
    }

    pub fn arch(&self) -> &DeformArch {
        &self.arch
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.arch)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Total SIREN parameter count the hypernet must emit.
    pub fn siren_param_count(&self) -> usize {
        self.hyper.iter().map(|h| h.fan_in * h.fan_out + h.fan_out).sum()
    }

    pub fn hyper_output_len(&self) -> usize {
        self.hyper.iter().map(|h| h.out.fan_out).sum()
    }

    pub fn mapping_ids(&self) -> Vec<ParamId> {
        self.map_shape.param_ids().chain(self.map_exp.param_ids()).collect()
    }

    pub fn hyper_ids(&self) -> Vec<ParamId> {
        self.hyper
            .iter()
            .flat_map(|h| [h.hidden.weight, h.hidden.bias, h.out.weight, h.out.bias])
            .collect()
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        self.params.ids().collect()
    }

    /// Places parameters on `g`; ids in `trainable` are gradient-tracked.
    pub fn bind<'g, 'm>(&'m self, g: &'g Graph, trainable: &[ParamId]) -> Bound<'g, 'm> {
        Bound {
            model: self,
            graph: g,
            vars: self.params.bind(g, |id| trainable.contains(&id)),
        }
    }

    pub fn bind_frozen<'g, 'm>(&'m self, g: &'g Graph) -> Bound<'g, 'm> {
        self.bind(g, &[])
    }

    pub fn map(&self, p: &MorphParams) -> Result<LatentCode> {
        if p.beta.len() != self.arch.shape_rank {
            return Err(Error::Rank {
                what: "beta",
                expected: self.arch.shape_rank,
                got: p.beta.len(),
            });
        }
        if p.psi.len() != self.arch.expr_rank {
            return Err(Error::Rank {
                what: "psi",
                expected: self.arch.expr_rank,
                got: p.psi.len(),
            });
        }
        let g = Graph::new();
        let b = self.bind_frozen(&g);
        let (zs, ze) = b.map_params(p);
        let code = LatentCode {
            z_s: zs.value().data().to_vec(),
            z_e: ze.value().data().to_vec(),
        };
        Ok(code)
    }

    pub fn check_code(&self, code: &LatentCode) -> Result<()> {
        let c = &self.arch.config;
        if code.dims() != (c.shape_latent, c.expr_latent) {
            return Err(Error::Shape(format!(
                "latent code dims {:?}, model expects ({}, {})",
                code.dims(),
                c.shape_latent,
                c.expr_latent
            )));
        }
        Ok(())
    }

    pub fn deform_points(&self, code: &LatentCode, points: &[Vec3]) -> Result<Vec<Vec3>> {
        self.check_code(code)?;
        if points.is_empty() {
            return Ok(vec![]);
        }
        let g = Graph::new();
        let b = self.bind_frozen(&g);
        let (zs, ze) = b.code_vars(code);
        let pts = g.constant(Tensor::new(&[points.len(), 3], points.iter().flatten().copied().collect())?);
        let out = b.field(zs, ze).apply(pts);
        let v = out.value();
        Ok(v.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Deforms the template's vertices; faces and landmarks are kept as is.
    pub fn deform_mesh(&self, code: &LatentCode, template: &TriMesh) -> Result<TriMesh> {
        template.with_vertices(self.deform_points(code, template.vertices())?)
    }

    /// Independent deep copy used to start target-style fine-tuning.
    pub fn clone_for_target(&self) -> DeformModel {
        self.clone()
    }

    pub fn to_named(&self) -> NamedTensors {
        self.params.to_named()
    }

    pub fn load_named(&mut self, named: &NamedTensors) -> Result<()> {
        self.params.load_named(named)
    }

    /// Blend of two models of identical architecture.
    pub fn lerp(a: &DeformModel, b: &DeformModel, alpha: f64) -> Result<DeformModel> {
        if a.arch != b.arch {
            return Err(Error::Shape("cannot blend models with different architectures".into()));
        }
        let mut out = a.clone();
        out.params = ParamSet::lerp(&a.params, &b.params, alpha)?;
        Ok(out)
    }
}
