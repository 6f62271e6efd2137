use facestyle::autodiff::Tensor;
use facestyle::deform::{DeformConfig, DeformModel};
use facestyle::mage::{
    eval_mage, mesh_to_pointset, pretrain_pointset_encoders, topology_displacement, train_mage, MageConfig,
    MageModel, PointSetEncoder, KNN,
};
use facestyle::mesh::{icosphere, TriMesh};
use facestyle::morph::{MorphConfig, TopologyVariant, ToyMorphable};
use facestyle::nn::Schedule;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rows(t: &Tensor) -> Vec<[f64; 6]> {
    t.data().chunks_exact(6).map(|r| r.try_into().unwrap()).collect()
}

fn mean_radial_alignment(t: &Tensor) -> f64 {
    let r = rows(t);
    r.iter()
        .map(|p| {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            ((p[0] * p[3] + p[1] * p[4] + p[2] * p[5]) / n).abs()
        })
        .sum::<f64>()
        / r.len() as f64
}

#[test]
fn pointset_normals_are_unit_and_radial_on_a_sphere() {
    let sphere = icosphere(3);
    let pts = mesh_to_pointset(&sphere, 2000, 4).unwrap();
    assert_eq!(pts.shape(), &[2000, 6]);
    for p in rows(&pts) {
        assert!(((p[3] * p[3] + p[4] * p[4] + p[5] * p[5]).sqrt() - 1.0).abs() < 1e-12);
    }
    assert!(mean_radial_alignment(&pts) > 0.99);
    assert_eq!(pts, mesh_to_pointset(&sphere, 2000, 4).unwrap());
    assert_ne!(pts, mesh_to_pointset(&sphere, 2000, 5).unwrap());

    let cloud = TriMesh::point_cloud(sphere.vertices().to_vec()).unwrap();
    let pc = mesh_to_pointset(&cloud, 10, 0).unwrap();
    assert_eq!(pc.shape()[0], sphere.num_vertices());
    assert!(mean_radial_alignment(&pc) > 0.99);
    // oriented outward, not just aligned
    for p in rows(&pc) {
        assert!(p[0] * p[3] + p[1] * p[4] + p[2] * p[5] > 0.0);
    }
}

#[test]
fn small_clouds_and_empty_requests_are_rejected() {
    let few = TriMesh::point_cloud(icosphere(0).vertices()[..KNN].to_vec()).unwrap();
    assert!(mesh_to_pointset(&few, 100, 0).is_err());
    let enough = TriMesh::point_cloud(icosphere(0).vertices()[..KNN + 1].to_vec()).unwrap();
    assert!(mesh_to_pointset(&enough, 100, 0).is_ok());
    assert!(mesh_to_pointset(&icosphere(1), 0, 0).is_err());
}

#[test]
fn encoder_is_bitwise_permutation_invariant() {
    let enc = PointSetEncoder::new(5, 1.0, 3);
    let pts = mesh_to_pointset(&icosphere(2), 300, 1).unwrap();
    let mut r = rows(&pts);
    r.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let shuffled = Tensor::new(&[300, 6], r.concat()).unwrap();
    assert_eq!(enc.features(&pts).unwrap(), enc.features(&shuffled).unwrap());
    assert_eq!(enc.predict(&pts).unwrap(), enc.predict(&shuffled).unwrap());
    assert_eq!(enc.predict(&pts).unwrap().len(), 5);
}

fn tiny() -> (ToyMorphable, DeformModel, MageConfig) {
    let morph = ToyMorphable::build(&MorphConfig { shape_rank: 4, expr_rank: 2, ..Default::default() }, 1).unwrap();
    let ds = DeformModel::new(
        &DeformConfig { shape_latent: 6, expr_latent: 3, map_hidden: 8, siren_width: 8, hyper_hidden: 8, ..Default::default() },
        4,
        2,
        2,
    )
    .unwrap();
    let cfg = MageConfig {
        n_points: 64,
        batch: 2,
        calibration: 4,
        pretrain: Schedule::linear(1e-3, 1e-4, 3),
        train: Schedule::linear(3e-4, 1e-4, 3),
        ..Default::default()
    };
    (morph, ds, cfg)
}

#[test]
fn pretraining_is_seeded_and_training_leaves_encoders_frozen() {
    let (morph, ds, cfg) = tiny();
    let (a, b, log) = pretrain_pointset_encoders(&morph, &cfg, 5).unwrap();
    let (a2, b2, _) = pretrain_pointset_encoders(&morph, &cfg, 5).unwrap();
    assert_eq!((&a, &b), (&a2, &b2));
    assert_eq!(log.losses.len(), 3);
    assert_eq!((a.target_dim(), b.target_dim()), (4, 2));

    let mut mage = MageModel::new(a.clone(), b.clone(), 6, 3, cfg.n_points, 7);
    let untouched = mage.clone();
    let zero = MageConfig { train: Schedule::linear(3e-4, 1e-4, 0), ..cfg.clone() };
    train_mage(&mut mage, &ds, &morph, &zero, 1).unwrap();
    assert_eq!(mage, untouched);

    let log = train_mage(&mut mage, &ds, &morph, &cfg, 1).unwrap();
    assert_eq!(log.losses.len(), 3);
    assert_ne!(mage.params(), untouched.params());
    assert_eq!(mage.encoders(), (&a, &b));

    let code = mage.encode(morph.template()).unwrap();
    assert_eq!(code.dims(), (6, 3));
    assert_eq!(code, mage.encode(morph.template()).unwrap());
    let (err, base) = eval_mage(&mage, &ds, &morph, 3, 2).unwrap();
    assert!(err.is_finite() && base.is_finite());
    let (disp, spread) =
        topology_displacement(&mage, &ds, &morph, &[TopologyVariant::Loop1, TopologyVariant::Simplified], 3, 4).unwrap();
    // an untrained field is the identity, so every identity encodes alike
    assert!(disp.is_finite() && spread == 0.0);
}

#[test]
fn checkpoint_names_round_trip_and_reject_strays() {
    let (morph, _, cfg) = tiny();
    let (a, b, _) = pretrain_pointset_encoders(&morph, &cfg, 5).unwrap();
    let mage = MageModel::new(a, b, 6, 3, cfg.n_points, 7);
    let named = mage.to_named();
    let mut other = MageModel::empty(mage.arch());
    assert_ne!(other, mage);
    other.load_named(&named).unwrap();
    assert_eq!(other, mage);
    assert_eq!(other.encode(morph.template()).unwrap(), mage.encode(morph.template()).unwrap());

    let mut bad = named.clone();
    bad.insert("stray".into(), Tensor::zeros(&[1]));
    assert!(MageModel::empty(mage.arch()).load_named(&bad).is_err());
    let mut bad = named;
    let key = bad.keys().find(|k| k.starts_with("mage.")).unwrap().clone();
    bad.insert(key, Tensor::zeros(&[1, 1]));
    assert!(MageModel::empty(mage.arch()).load_named(&bad).is_err());
}
