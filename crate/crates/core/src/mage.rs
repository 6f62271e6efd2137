//! Mesh-agnostic encoder: any topology (or a bare point cloud) in, latent
//! code out.
//!
//! Two frozen point-set encoders read position and normal samples and pool
//! them symmetrically; small trainable MLPs then map their features into the
//! deformation field's latent space.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, Graph, Tensor, Var};
use crate::checkpoint::{fingerprint, NamedTensors};
use crate::deform::{DeformModel, LatentCode};
use crate::error::{Error, Result};
use crate::losses::l_enc;
use crate::mesh::{add, centroid, dot, normalized, scale, sub, vertex_normals, TriMesh, Vec3};
use crate::morph::{TemplateVariant, TopologyVariant, ToyMorphable};
use crate::nn::{uniform, Adam, Linear, Mlp, ParamId, ParamSet, Schedule, LEAKY_SLOPE};

/// Neighbours used for point-cloud normal estimation.
pub const KNN: usize = 8;
pub const FEATURE_DIM: usize = 128;
const POINT_HIDDEN: usize = 64;
/// Seed of the surface samples drawn by [`MageModel::encode`].
pub const ENCODE_SEED: u64 = 0;

/// Topologies drawn uniformly when augmenting training meshes.
pub const AUGMENT_VARIANTS: [TopologyVariant; 3] =
    [TopologyVariant::Original, TopologyVariant::Loop1, TopologyVariant::Simplified];

/// `[N, 6]` rows of position and unit normal.
///
/// Meshes with faces get `n_points` area-weighted samples with interpolated
/// vertex normals. Faces are chosen by systematic sampling along the area
/// CDF (one random offset), which keeps per-face counts within one of their
/// expectation. Point clouds use every given point with k-nearest-neighbour
/// PCA normals oriented away from the centroid.
pub fn mesh_to_pointset(m: &TriMesh, n_points: usize, seed: u64) -> Result<Tensor> {
    if n_points == 0 {
        return Err(Error::Invalid("n_points must be positive".into()));
    }
    let rows: Vec<[f64; 6]> = if m.num_faces() == 0 {
        cloud_rows(m.vertices())?
    } else {
        surface_rows(m, n_points, seed)?
    };
    Ok(Tensor::new(&[rows.len(), 6], rows.into_iter().flatten().collect())?)
}

fn surface_rows(m: &TriMesh, n: usize, seed: u64) -> Result<Vec<[f64; 6]>> {
    let areas = m.face_areas();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroArea);
    }
    let vn = vertex_normals(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: f64 = rng.gen();
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let (mut face, mut acc) = (0, areas[0]);
    for i in 0..n {
        let u = (i as f64 + offset) * step;
        while u >= acc && face + 1 < areas.len() {
            face += 1;
            acc += areas[face];
        }
        let s = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        let bary = [1.0 - s, s * (1.0 - r2), s * r2];
        let f = m.faces()[face];
        let mut p = [0.0; 3];
        let mut nrm = [0.0; 3];
        for k in 0..3 {
            p = add(p, scale(m.vertices()[f[k]], bary[k]));
            nrm = add(nrm, scale(vn[f[k]], bary[k]));
        }
        let nrm = normalized(nrm);
        out.push([p[0], p[1], p[2], nrm[0], nrm[1], nrm[2]]);
    }
    Ok(out)
}

fn cloud_rows(points: &[Vec3]) -> Result<Vec<[f64; 6]>> {
    if points.len() < KNN + 1 {
        return Err(Error::Invalid(format!(
            "point cloud needs at least {} points for normal estimation, got {}",
            KNN + 1,
            points.len()
        )));
    }
    let c = centroid(points);
    let mut out = Vec::with_capacity(points.len());
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    for &p in points {
        dist.clear();
        dist.extend(points.iter().enumerate().map(|(j, &q)| {
            let d = sub(p, q);
            (dot(d, d), j)
        }));
        dist.select_nth_unstable_by(KNN, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        // the point itself plus its KNN nearest neighbours
        let nb: Vec<Vec3> = dist[..=KNN].iter().map(|&(_, j)| points[j]).collect();
        let mu = centroid(&nb);
        let mut cov = Matrix3::zeros();
        for q in &nb {
            let d = nalgebra::Vector3::from(sub(*q, mu));
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let k = eig.eigenvalues.imin();
        let e = eig.eigenvectors.column(k);
        let mut n = normalized([e[0], e[1], e[2]]);
        if dot(n, sub(p, c)) < 0.0 {
            n = scale(n, -1.0);
        }
        out.push([p[0], p[1], p[2], n[0], n[1], n[2]]);
    }
    Ok(out)
}

/// Sorts point rows lexicographically so encoding does not depend on input order.
fn canonical_order(points: &Tensor) -> Tensor {
    let mut rows: Vec<&[f64]> = points.data().chunks_exact(6).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Tensor::new(points.shape(), rows.concat()).expect("same shape")
}

/// Per-point features, max and mean pooling, head MLP.
///
/// The per-point layers (a sinusoidal lift followed by a dense layer) are
/// fixed random features; the pooled vector is standardized per channel with
/// statistics measured once on a calibration set. Only the head and the
/// read-out are fitted while pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSetEncoder {
    params: ParamSet,
    omega: f64,
    lift: Linear,
    point: Linear,
    pool_mean: ParamId,
    pool_scale: ParamId,
    head: Mlp,
    /// Read-out used only while pretraining.
    readout: Linear,
}

impl PointSetEncoder {
    /// `omega` is the frequency of the sinusoidal lift.
    pub fn new(target_dim: usize, omega: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let lift = Linear::new(&mut params, "lift", 6, POINT_HIDDEN, 1.0, &mut rng);
        let b = uniform(&[POINT_HIDDEN], PI, &mut rng);
        *params.get_mut(lift.bias) = b;
        let bound = (6.0 / POINT_HIDDEN as f64).sqrt();
        let point = Linear::new(&mut params, "point", POINT_HIDDEN, FEATURE_DIM, bound, &mut rng);
        let pool_mean = params.add("pool.mean", Tensor::zeros(&[1, 2 * FEATURE_DIM]));
        let pool_scale = params.add("pool.scale", Tensor::ones(&[1, 2 * FEATURE_DIM]));
        let head = Mlp::new(&mut params, "head", &[2 * FEATURE_DIM, FEATURE_DIM, FEATURE_DIM], &mut rng);
        let bound = 1.0 / (FEATURE_DIM as f64).sqrt();
        let readout = Linear::new(&mut params, "readout", FEATURE_DIM, target_dim, bound, &mut rng);
        Self {
            params,
            omega,
            lift,
            point,
            pool_mean,
            pool_scale,
            head,
            readout,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn target_dim(&self) -> usize {
        self.readout.fan_out
    }

    /// Parameters fitted by pretraining.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.head.param_ids().chain([self.readout.weight, self.readout.bias]).collect()
    }

    /// Unstandardized `[1, 256]` max and mean pool.
    fn raw_pool(&self, points: &Tensor) -> Tensor {
        let g = Graph::new();
        let p = g.constant(canonical_order(points));
        let c = |id: ParamId| g.constant(self.params.get(id).clone());
        let lifted = (p.matmul(c(self.lift.weight)) + c(self.lift.bias)).scale(self.omega).sin();
        let h = (lifted.matmul(c(self.point.weight)) + c(self.point.bias)).leaky_relu(LEAKY_SLOPE);
        concat(
            &[
                h.max_axis(0).reshape(&[1, FEATURE_DIM]),
                h.mean_axis(0).reshape(&[1, FEATURE_DIM]),
            ],
            1,
        )
        .detach()
    }

    /// Standardized pool of a point set; rows are put in canonical order first.
    pub fn pooled(&self, points: &Tensor) -> Result<Tensor> {
        check_points(points)?;
        let raw = self.raw_pool(points);
        let (m, s) = (self.params.get(self.pool_mean).data(), self.params.get(self.pool_scale).data());
        let d = raw.data().iter().zip(m).zip(s).map(|((x, m), s)| (x - m) / s).collect();
        Tensor::new(&[1, 2 * FEATURE_DIM], d)
    }

    /// Sets the standardization statistics from `sets`.
    pub fn calibrate(&mut self, sets: &[Tensor]) -> Result<()> {
        if sets.is_empty() {
            return Err(Error::Invalid("calibration needs at least one point set".into()));
        }
        let raws = sets
            .iter()
            .map(|p| {
                check_points(p)?;
                Ok(self.raw_pool(p))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = raws.len() as f64;
        let k = 2 * FEATURE_DIM;
        let mean: Vec<f64> = (0..k).map(|j| raws.iter().map(|r| r.data()[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..k)
            .map(|j| {
                let v = raws.iter().map(|r| (r.data()[j] - mean[j]).powi(2)).sum::<f64>() / n;
                v.sqrt().max(1e-12)
            })
            .collect();
        *self.params.get_mut(self.pool_mean) = Tensor::new(&[1, k], mean)?;
        *self.params.get_mut(self.pool_scale) = Tensor::new(&[1, k], scale)?;
        Ok(())
    }

    fn head_var<'g>(&self, vars: &[Var<'g>], pooled: Var<'g>) -> Var<'g> {
        self.head.forward(vars, pooled)
    }

    fn readout_var<'g>(&self, vars: &[Var<'g>], feat: Var<'g>) -> Var<'g> {
        self.readout.forward(vars, feat.leaky_relu(LEAKY_SLOPE))
    }

    /// `[128]` feature vector of a point set.
    pub fn features(&self, points: &Tensor) -> Result<Vec<f64>> {
        let pooled = self.pooled(points)?;
        let g = Graph::new();
        let vars = self.params.bind(&g, |_| false);
        Ok(self.head_var(&vars, g.constant(pooled)).detach().into_data())
    }

    /// Read-out prediction (`β` or `ψ`) of a point set.
    pub fn predict(&self, points: &Tensor) -> Result<Vec<f64>> {
        let pooled = self.pooled(points)?;
        let g = Graph::new();
        let vars = self.params.bind(&g, |_| false);
        let f = self.head_var(&vars, g.constant(pooled));
        Ok(self.readout_var(&vars, f).detach().into_data())
    }
}

fn check_points(points: &Tensor) -> Result<()> {
    let s = points.shape();
    if s.len() != 2 || s[1] != 6 || s[0] == 0 {
        return Err(Error::Shape(format!("point set must be [N, 6] with N > 0, got {s:?}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MageConfig {
    pub n_points: usize,
    /// Frequency of the encoders' sinusoidal first layer.
    pub omega: f64,
    /// Meshes per optimization step.
    pub batch: usize,
    /// Point sets used to measure the encoders' pooling statistics.
    pub calibration: usize,
    pub pretrain: Schedule,
    pub train: Schedule,
}

impl Default for MageConfig {
    fn default() -> Self {
        Self {
            n_points: 1024,
            omega: 1.0,
            batch: 4,
            calibration: 128,
            pretrain: Schedule::linear(1e-3, 1e-4, 3000),
            train: Schedule::linear(3e-4, 5e-5, 2000),
        }
    }
}

impl MageConfig {
    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.train.validate()?;
        if self.n_points == 0 || self.batch == 0 || self.calibration == 0 {
            return Err(Error::Config("n_points and batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MageLog {
    pub losses: Vec<f64>,
}

impl MageLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

fn variants(morphable: &ToyMorphable) -> Result<Vec<TemplateVariant>> {
    AUGMENT_VARIANTS.iter().map(|&k| morphable.variant(k)).collect()
}

/// Trains an identity encoder to regress `β` and an expression encoder to
/// regress `ψ` from point sets of randomly remeshed decodes. Loss is the sum
/// of the two mean squared errors.
pub fn pretrain_pointset_encoders(
    morphable: &ToyMorphable,
    cfg: &MageConfig,
    seed: u64,
) -> Result<(PointSetEncoder, PointSetEncoder, MageLog)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut id_enc = PointSetEncoder::new(morphable.shape_rank(), cfg.omega, rng.gen());
    let mut exp_enc = PointSetEncoder::new(morphable.expr_rank(), cfg.omega, rng.gen());
    let vars_list = variants(morphable)?;
    let draw = |rng: &mut ChaCha8Rng| -> Result<(Tensor, crate::morph::MorphParams)> {
        let phi = morphable.sample_params_with(rng);
        let variant = &vars_list[rng.gen_range(0..vars_list.len())];
        let mesh = variant.carry(&morphable.decode(&phi)?)?;
        Ok((mesh_to_pointset(&mesh, cfg.n_points, rng.gen())?, phi))
    };
    let calib = (0..cfg.calibration)
        .map(|_| draw(&mut rng).map(|d| d.0))
        .collect::<Result<Vec<_>>>()?;
    id_enc.calibrate(&calib)?;
    exp_enc.calibrate(&calib)?;
    let tid = id_enc.trainable_ids();
    let texp = exp_enc.trainable_ids();
    let mut adam_id = Adam::new(&id_enc.params, tid.clone());
    let mut adam_exp = Adam::new(&exp_enc.params, texp.clone());
    let mut log = MageLog::default();
    for it in 0..cfg.pretrain.total_iterations {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let (pts, phi) = draw(&mut rng)?;
            batch.push((id_enc.pooled(&pts)?, exp_enc.pooled(&pts)?, phi));
        }
        let g = Graph::new();
        let vid = id_enc.params.bind(&g, |i| tid.contains(&i));
        let vexp = exp_enc.params.bind(&g, |i| texp.contains(&i));
        let mut total = g.scalar(0.0);
        for (pa, pb, phi) in batch {
            let beta = g.constant(Tensor::new(&[1, phi.beta.len()], phi.beta)?);
            let psi = g.constant(Tensor::new(&[1, phi.psi.len()], phi.psi)?);
            let yb = id_enc.readout_var(&vid, id_enc.head_var(&vid, g.constant(pa)));
            let yp = exp_enc.readout_var(&vexp, exp_enc.head_var(&vexp, g.constant(pb)));
            total = total + (yb - beta).square().mean() + (yp - psi).square().mean();
        }
        let loss = total.scale(1.0 / cfg.batch as f64);
        let l = loss.item();
        if !l.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                what: format!("encoder pretraining loss {l}"),
            });
        }
        log.losses.push(l);
        let mut grads = g.backward(loss)?;
        let gid: Vec<Tensor> = tid.iter().map(|i| grads.take(vid[i.0])).collect();
        let gexp: Vec<Tensor> = texp.iter().map(|i| grads.take(vexp[i.0])).collect();
        let lr = cfg.pretrain.rate(it);
        adam_id.step(&mut id_enc.params, &gid, lr);
        adam_exp.step(&mut exp_enc.params, &gexp, lr);
    }
    Ok((id_enc, exp_enc, log))
}

/// Held-out read-out error of both encoders relative to the prior variance of
/// the coefficients: `(mse_β / var, mse_ψ / var)`, on original-topology decodes.
pub fn regression_error(
    id_enc: &PointSetEncoder,
    exp_enc: &PointSetEncoder,
    morphable: &ToyMorphable,
    n_points: usize,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = morphable.sampling_range();
    let var = (hi - lo) * (hi - lo) / 12.0;
    let (mut eb, mut ep) = (0.0, 0.0);
    for _ in 0..samples {
        let phi = morphable.sample_params_with(&mut rng);
        let pts = mesh_to_pointset(&morphable.decode(&phi)?, n_points, rng.gen())?;
        let mse = |pred: Vec<f64>, truth: &[f64]| {
            pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64
        };
        eb += mse(id_enc.predict(&pts)?, &phi.beta);
        ep += mse(exp_enc.predict(&pts)?, &phi.psi);
    }
    let n = samples.max(1) as f64;
    Ok((eb / n / var, ep / n / var))
}

/// Everything that fixes tensor shapes; hashed into checkpoint fingerprints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MageArch {
    pub shape_rank: usize,
    pub expr_rank: usize,
    pub shape_latent: usize,
    pub expr_latent: usize,
    pub n_points: usize,
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MageModel {
    arch: MageArch,
    id_enc: PointSetEncoder,
    exp_enc: PointSetEncoder,
    params: ParamSet,
    id2id: Mlp,
    exp2exp: Mlp,
    mapper: Mlp,
}

impl MageModel {
    pub fn new(
        id_enc: PointSetEncoder,
        exp_enc: PointSetEncoder,
        shape_latent: usize,
        expr_latent: usize,
        n_points: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let f = FEATURE_DIM;
        let id2id = Mlp::new(&mut params, "id2id", &[f, f, f], &mut rng);
        let exp2exp = Mlp::new(&mut params, "exp2exp", &[f, f, f], &mut rng);
        let mapper = Mlp::new(&mut params, "mapper", &[2 * f, 2 * f, shape_latent + expr_latent], &mut rng);
        Self {
            arch: MageArch {
                shape_rank: id_enc.target_dim(),
                expr_rank: exp_enc.target_dim(),
                shape_latent,
                expr_latent,
                n_points,
                omega: id_enc.omega,
            },
            id_enc,
            exp_enc,
            params,
            id2id,
            exp2exp,
            mapper,
        }
    }

    pub fn arch(&self) -> &MageArch {
        &self.arch
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.arch)
    }

    pub fn encoders(&self) -> (&PointSetEncoder, &PointSetEncoder) {
        (&self.id_enc, &self.exp_enc)
    }

    /// Trainable tensors only.
    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Frozen encoder features `(identity, expression)` of a point set.
    pub fn features(&self, points: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.id_enc.features(points)?, self.exp_enc.features(points)?))
    }

    fn head_var<'g>(&self, vars: &[Var<'g>], f_id: Var<'g>, f_exp: Var<'g>) -> Var<'g> {
        let a = self.id2id.forward(vars, f_id).leaky_relu(LEAKY_SLOPE);
        let b = self.exp2exp.forward(vars, f_exp).leaky_relu(LEAKY_SLOPE);
        self.mapper.forward(vars, concat(&[a, b], 1))
    }

    fn code_from_features(&self, f_id: &[f64], f_exp: &[f64]) -> Result<LatentCode> {
        let g = Graph::new();
        let vars = self.params.bind(&g, |_| false);
        let a = g.constant(Tensor::new(&[1, FEATURE_DIM], f_id.to_vec())?);
        let b = g.constant(Tensor::new(&[1, FEATURE_DIM], f_exp.to_vec())?);
        let z = self.head_var(&vars, a, b).detach().into_data();
        Ok(LatentCode::from_flat(&z, self.arch.shape_latent))
    }

    /// Latent code of a mesh of any topology, or of a point cloud.
    pub fn encode(&self, m: &TriMesh) -> Result<LatentCode> {
        self.encode_with_seed(m, ENCODE_SEED)
    }

    pub fn encode_with_seed(&self, m: &TriMesh, seed: u64) -> Result<LatentCode> {
        if m.num_vertices() == 0 {
            return Err(Error::Mesh("cannot encode an empty mesh".into()));
        }
        let pts = mesh_to_pointset(m, self.arch.n_points, seed)?;
        let (a, b) = self.features(&pts)?;
        self.code_from_features(&a, &b)
    }

    /// Frozen encoders under `enc.`-prefixed names, trainable heads under `mage.`.
    pub fn to_named(&self) -> NamedTensors {
        let mut out = NamedTensors::new();
        for (prefix, ps) in [
            ("id_enc.", &self.id_enc.params),
            ("exp_enc.", &self.exp_enc.params),
            ("mage.", &self.params),
        ] {
            out.extend(ps.iter().map(|(n, t)| (format!("{prefix}{n}"), t.clone())));
        }
        out
    }

    pub fn load_named(&mut self, named: &NamedTensors) -> Result<()> {
        let part = |prefix: &str| -> NamedTensors {
            named
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect()
        };
        let total = named.len();
        let (a, b, c) = (part("id_enc."), part("exp_enc."), part("mage."));
        if a.len() + b.len() + c.len() != total {
            return Err(Error::Checkpoint("unexpected tensors in encoder checkpoint".into()));
        }
        self.id_enc.params.load_named(&a)?;
        self.exp_enc.params.load_named(&b)?;
        self.params.load_named(&c)
    }

    /// Model with the given architecture and placeholder weights, ready for
    /// [`load_named`](Self::load_named).
    pub fn empty(arch: &MageArch) -> Self {
        Self::new(
            PointSetEncoder::new(arch.shape_rank, arch.omega, 0),
            PointSetEncoder::new(arch.expr_rank, arch.omega, 0),
            arch.shape_latent,
            arch.expr_latent,
            arch.n_points,
            0,
        )
    }
}

/// One training input: `D_S`'s output for a random `Φ` on a random topology,
/// plus the true code.
fn training_sample(
    model_ds: &DeformModel,
    morphable: &ToyMorphable,
    variants: &[TemplateVariant],
    n_points: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, LatentCode)> {
    let phi = morphable.sample_params_with(rng);
    let code = model_ds.map(&phi)?;
    let variant = &variants[rng.gen_range(0..variants.len())];
    let mesh = model_ds.deform_mesh(&code, &variant.mesh)?;
    Ok((mesh_to_pointset(&mesh, n_points, rng.gen())?, code))
}

/// Trains `id2id`, `exp2exp` and the mapper on `L_enc` against `D_S`'s
/// mapping networks. Encoders stay frozen.
pub fn train_mage(
    mage: &mut MageModel,
    model_ds: &DeformModel,
    morphable: &ToyMorphable,
    cfg: &MageConfig,
    seed: u64,
) -> Result<MageLog> {
    cfg.validate()?;
    let c = &model_ds.arch().config;
    if (c.shape_latent, c.expr_latent) != (mage.arch.shape_latent, mage.arch.expr_latent) {
        return Err(Error::Shape("encoder latent dims differ from the deformation model's".into()));
    }
    let variants = variants(morphable)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = mage.params.ids().collect();
    let mut adam = Adam::new(&mage.params, ids);
    let mut log = MageLog::default();
    for it in 0..cfg.train.total_iterations {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let (pts, code) = training_sample(model_ds, morphable, &variants, mage.arch.n_points, &mut rng)?;
            let (fa, fb) = mage.features(&pts)?;
            batch.push((fa, fb, code));
        }
        let g = Graph::new();
        let vars = mage.params.bind(&g, |_| true);
        let mut total = g.scalar(0.0);
        for (fa, fb, code) in &batch {
            let a = g.constant(Tensor::new(&[1, FEATURE_DIM], fa.clone())?);
            let b = g.constant(Tensor::new(&[1, FEATURE_DIM], fb.clone())?);
            let z = g.constant(Tensor::new(&[1, code.z_s.len() + code.z_e.len()], code.concat())?);
            total = total + l_enc(z, mage.head_var(&vars, a, b))?;
        }
        let loss = total.scale(1.0 / cfg.batch as f64);
        let l = loss.item();
        if !l.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                what: format!("encoder loss {l}"),
            });
        }
        log.losses.push(l);
        let mut grads = g.backward(loss)?;
        let gr: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
        adam.step(&mut mage.params, &gr, cfg.train.rate(it));
    }
    Ok(log)
}

/// Held-out `L_enc` on original-topology `D_S` outputs, and the same loss
/// for the constant predictor that always answers the mean code of the set.
pub fn eval_mage(
    mage: &MageModel,
    model_ds: &DeformModel,
    morphable: &ToyMorphable,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = morphable.template();
    let mut truth = Vec::with_capacity(samples);
    let mut err = 0.0;
    for _ in 0..samples {
        let code = model_ds.map(&morphable.sample_params_with(&mut rng))?;
        let pred = mage.encode(&model_ds.deform_mesh(&code, template)?)?;
        err += pred.distance(&code).powi(2);
        truth.push(code.concat());
    }
    let n = samples.max(1) as f64;
    let dim = truth.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..dim).map(|k| truth.iter().map(|z| z[k]).sum::<f64>() / n).collect();
    let base: f64 = truth
        .iter()
        .map(|z| z.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok((err / n, base / n))
}

/// Mean latent displacement between the encoding of an original-topology
/// `D_S` output and of the same identity on each of `remesh`, over
/// `identities` draws. Also returns the mean distance between encodings of
/// two different identities, as a scale reference.
pub fn topology_displacement(
    mage: &MageModel,
    model_ds: &DeformModel,
    morphable: &ToyMorphable,
    remesh: &[TopologyVariant],
    identities: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = morphable.template();
    let variants: Vec<_> = remesh.iter().map(|&k| morphable.variant(k)).collect::<Result<_>>()?;
    let (mut disp, mut count) = (0.0, 0usize);
    let mut codes = Vec::with_capacity(identities);
    for _ in 0..identities {
        let code = model_ds.map(&morphable.sample_params_with(&mut rng))?;
        let base = mage.encode(&model_ds.deform_mesh(&code, template)?)?;
        for v in &variants {
            disp += mage.encode(&model_ds.deform_mesh(&code, &v.mesh)?)?.distance(&base);
            count += 1;
        }
        codes.push(base);
    }
    let spread = codes
        .windows(2)
        .map(|w| w[0].distance(&w[1]))
        .sum::<f64>()
        / (codes.len().saturating_sub(1)).max(1) as f64;
    Ok((disp / count.max(1) as f64, spread))
}
