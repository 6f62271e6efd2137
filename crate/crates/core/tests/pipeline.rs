mod common;

use std::path::Path;

use common::tiny_config;
use facestyle::checkpoint::Checkpoint;
use facestyle::config::RunConfig;
use facestyle::deform::DeformModel;
use facestyle::morph::{TopologyVariant, ToyMorphable};
use facestyle::pipeline as pl;
use facestyle::stylize::{eval_metrics, interpolate, interpolate_files, stylize, BlendSpec};

/// Runs every stage into `dir` and returns the stylized mesh's OBJ text.
fn run_all(cfg: &RunConfig, seed: u64, dir: &Path) -> String {
    let morph = pl::gen_model(cfg, seed).unwrap();
    pl::save_morphable(&morph, &dir.join(pl::MODEL_FILE), seed).unwrap();
    let morph = pl::load_morphable(&dir.join(pl::MODEL_FILE)).unwrap();
    let (ds, _) = pl::run_train_ds(cfg, &morph, seed).unwrap();
    pl::save_deform(&ds, &dir.join(pl::DS_FILE), seed).unwrap();
    let ex = pl::make_exemplar(cfg, &morph, seed).unwrap();
    pl::save_exemplar(&ex, dir).unwrap();
    let ex = pl::load_exemplar(dir).unwrap();
    let (dt, _) = pl::run_train_dt(cfg, &ds, &ex, &morph, seed).unwrap();
    pl::save_deform(&dt, &dir.join(pl::DT_FILE), seed).unwrap();
    let (mage, _, _) = pl::run_train_mage(cfg, &ds, &morph, seed).unwrap();
    pl::save_mage(&mage, &dir.join(pl::MAGE_FILE), seed).unwrap();

    let dt = pl::load_deform(cfg, &morph, &dir.join(pl::DT_FILE), false).unwrap();
    let mage = pl::load_mage(cfg, &morph, &dir.join(pl::MAGE_FILE), false).unwrap();
    let out = stylize(&ex.m_s, &mage, &dt, morph.template()).unwrap();
    let path = dir.join("stylized.obj");
    out.write_obj(&path).unwrap();
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn seeded_pipeline_is_bitwise_reproducible() {
    let cfg = tiny_config();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let oa = run_all(&cfg, 4, a.path());
    let ob = run_all(&cfg, 4, b.path());
    assert_eq!(oa, ob);
    for f in [pl::MODEL_FILE, pl::DS_FILE, pl::DT_FILE, pl::MAGE_FILE, pl::EXEMPLAR_STYLE_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_ne!(oa, run_all(&cfg, 5, c.path()));
}

struct Trained {
    morph: ToyMorphable,
    dt_a: DeformModel,
    dt_b: DeformModel,
    mage: facestyle::mage::MageModel,
    cfg: RunConfig,
}

fn trained() -> Trained {
    let mut cfg = tiny_config();
    let morph = pl::gen_model(&cfg, 1).unwrap();
    let (ds, _) = pl::run_train_ds(&cfg, &morph, 1).unwrap();
    let (mage, _, _) = pl::run_train_mage(&cfg, &ds, &morph, 1).unwrap();
    let mut dts = Vec::new();
    for p in ["unicorn", "no_nose"] {
        cfg.exemplar.preset = p.into();
        cfg.train_dt.schedule.total_iterations = 4;
        let ex = pl::make_exemplar(&cfg, &morph, 1).unwrap();
        dts.push(pl::run_train_dt(&cfg, &ds, &ex, &morph, 1).unwrap().0);
    }
    let dt_b = dts.pop().unwrap();
    let dt_a = dts.pop().unwrap();
    Trained { morph, dt_a, dt_b, mage, cfg }
}

#[test]
fn stylize_returns_the_requested_connectivity() {
    let t = trained();
    let target = t.morph.decode(&t.morph.sample_params(3)).unwrap();
    let loop1 = t.morph.variant(TopologyVariant::Loop1).unwrap().mesh;
    for kind in TopologyVariant::ALL {
        let tmpl = t.morph.variant(kind).unwrap().mesh;
        let out = stylize(&target, &t.mage, &t.dt_a, &tmpl).unwrap();
        assert_eq!(out.faces(), tmpl.faces(), "{kind:?}");
        // targets of another topology are accepted too
        let remeshed_target = t.morph.variant(TopologyVariant::Loop1).unwrap().carry(&target).unwrap();
        assert_eq!(stylize(&remeshed_target, &t.mage, &t.dt_a, &tmpl).unwrap().faces(), tmpl.faces());
    }
    assert!(loop1.num_faces() > t.morph.template().num_faces());
}

fn checkpoint(m: &DeformModel, seed: u64) -> Checkpoint {
    let mut c = Checkpoint::new(m.fingerprint(), seed);
    c.extend_prefixed("", m.to_named());
    c
}

#[test]
fn interpolation_endpoints_round_trip_and_envelope() {
    let t = trained();
    let (a, b) = (checkpoint(&t.dt_a, 1), checkpoint(&t.dt_b, 2));
    assert_eq!(interpolate(&a, &b, 1.0).unwrap(), a);
    assert_eq!(interpolate(&a, &b, 0.0).unwrap(), b);
    assert!(interpolate(&a, &b, 1.5).is_err());
    assert!(interpolate(&a, &b, -0.1).is_err());

    let dir = tempfile::tempdir().unwrap();
    let (pa, pb, pm) = (dir.path().join("a.json"), dir.path().join("b.json"), dir.path().join("m.json"));
    a.save(&pa).unwrap();
    b.save(&pb).unwrap();
    let mid = interpolate_files(&BlendSpec { alpha: 0.5, checkpoint_a: pa.clone(), checkpoint_b: pb }).unwrap();
    mid.save(&pm).unwrap();
    assert_eq!(Checkpoint::load(&pm, None, false).unwrap(), mid);
    assert_eq!(std::fs::read_to_string(&pm).unwrap(), mid.to_json().unwrap());

    // the blended field stays inside the endpoints' box, inflated by 25%
    let mut blended = DeformModel::new(&t.cfg.deform, t.morph.shape_rank(), t.morph.expr_rank(), 0).unwrap();
    blended.load_named(&mid.tensors).unwrap();
    let code = t.dt_a.map(&t.morph.sample_params(8)).unwrap();
    let tmpl = t.morph.template();
    let (va, vb, vm) = (
        t.dt_a.deform_mesh(&code, tmpl).unwrap(),
        t.dt_b.deform_mesh(&code, tmpl).unwrap(),
        blended.deform_mesh(&code, tmpl).unwrap(),
    );
    for k in 0..3 {
        let all = va.vertices().iter().chain(vb.vertices()).map(|p| p[k]);
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
        let pad = 0.125 * (hi - lo);
        assert!(vm.vertices().iter().all(|p| p[k] >= lo - pad && p[k] <= hi + pad));
    }

    // different architectures are refused
    let mut other_cfg = t.cfg.deform.clone();
    other_cfg.siren_width += 1;
    let other = DeformModel::new(&other_cfg, t.morph.shape_rank(), t.morph.expr_rank(), 0).unwrap();
    assert!(interpolate(&a, &checkpoint(&other, 3), 0.5).is_err());
    let mut renamed = b.clone();
    let (k, v) = renamed.tensors.pop_first().unwrap();
    renamed.tensors.insert(format!("{k}x"), v);
    assert!(interpolate(&a, &renamed, 0.5).is_err());
}

#[test]
fn checkpoints_refuse_other_architectures_unless_forced() {
    let cfg = tiny_config();
    let morph = pl::gen_model(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ds.json");
    let ds = pl::new_deform(&cfg, &morph, 1).unwrap();
    pl::save_deform(&ds, &p, 1).unwrap();
    assert_eq!(pl::load_deform(&cfg, &morph, &p, false).unwrap().to_named(), ds.to_named());

    let mut wider = cfg.clone();
    wider.deform.omega0 = 20.0;
    // same shapes, different fingerprint: refused, then accepted with force
    assert!(pl::load_deform(&wider, &morph, &p, false).is_err());
    assert!(pl::load_deform(&wider, &morph, &p, true).is_ok());
    wider.deform.siren_width = 32;
    assert!(pl::load_deform(&wider, &morph, &p, true).is_err());
    assert!(pl::load_deform(&cfg, &morph, &dir.path().join("missing.json"), false).is_err());
}

#[test]
fn metrics_are_one_at_their_fixed_points() {
    let cfg = tiny_config();
    let morph = pl::gen_model(&cfg, 1).unwrap();
    let space = pl::semantic_space(&cfg, morph.template()).unwrap();
    let a = morph.decode(&morph.sample_params(1)).unwrap();
    let b = morph.decode(&morph.sample_params(2)).unwrap();
    let m = eval_metrics(&a, &a, &b, &space).unwrap();
    assert!((m.sp - 1.0).abs() < 1e-12);
    assert!(m.ip < 1.0);
    assert!((m.avg - 0.5 * (m.sp + m.ip)).abs() < 1e-15);
    let m = eval_metrics(&a, &b, &a, &space).unwrap();
    assert!((m.ip - 1.0).abs() < 1e-12);
}

#[test]
fn config_files_load_and_reject() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    let cfg = tiny_config();
    std::fs::write(&p, cfg.to_json_pretty()).unwrap();
    assert_eq!(RunConfig::load(&p).unwrap(), cfg);
    std::fs::write(&p, r#"{"mage": {"n_points": 0}}"#).unwrap();
    assert!(RunConfig::load(&p).is_err());
    assert!(RunConfig::load(&dir.path().join("nope.json")).is_err());
}
