//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs at the default (desk-scale) configuration, so a full pass takes
//! tens of minutes. The process exits 0 whatever the verdicts are; the
//! printed lines are the report.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{face_frequency_chi_square, ten_face_probe, tiny_config, Probe};
use facestyle::ablation::ablate_sims;
use facestyle::autodiff::Graph;
use facestyle::checkpoint::Checkpoint;
use facestyle::config::RunConfig;
use facestyle::deform::DeformModel;
use facestyle::losses::l_vert;
use facestyle::mage::{eval_mage, regression_error, topology_displacement, MageModel};
use facestyle::mesh::{SamplingStrategy, TriMesh};
use facestyle::morph::{TopologyVariant, ToyMorphable};
use facestyle::nn::Schedule;
use facestyle::pipeline::{self as pl, stage_seed};
use facestyle::stylize::{interpolate, stylize};
use facestyle::train::{eval_ds, expression_sensitivity, sample_pool, StyleMode};

const SEED: u64 = 0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn run(name: &str, budget: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let t = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let dt = t.elapsed();
    let in_time = budget.map_or(true, |b| dt <= b);
    let pass = v.pass && in_time;
    let over = if in_time { "" } else { " (over budget)" };
    println!(
        "{} {name}: {} [{:.1}s{over}]",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        dt.as_secs_f64()
    );
    pass
}

fn mins(m: u64) -> Option<Duration> {
    Some(Duration::from_secs(60 * m))
}

fn mean_vertex_distance(a: &TriMesh, b: &TriMesh) -> f64 {
    let d = a.vertices().iter().zip(b.vertices());
    d.map(|(p, q)| facestyle::mesh::norm(facestyle::mesh::sub(*p, *q))).sum::<f64>() / a.num_vertices() as f64
}

struct Shared {
    cfg: RunConfig,
    morph: ToyMorphable,
    ds: Option<DeformModel>,
    dt: Option<DeformModel>,
    mage: Option<MageModel>,
}

fn c1() -> Verdict {
    let probe = Probe::new();
    let reports = probe.gradient_suite();
    let failed: Vec<_> = reports.iter().filter(|(_, r)| !r.passed).map(|(n, _)| *n).collect();
    let worst = reports.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    verdict(
        failed.is_empty(),
        format!("{} checks, worst rel err {worst:.2e}, failing {failed:?}", reports.len()),
    )
}

fn c2(s: &mut Shared) -> Verdict {
    let (ds, log) = pl::run_train_ds(&s.cfg, &s.morph, SEED).expect("train_ds");
    let held_out = sample_pool(&s.morph, 50, &mut ChaCha8Rng::seed_from_u64(stage_seed(SEED, "acceptance.heldout")));
    let loss = eval_ds(&ds, &s.morph, &held_out, s.cfg.train_ds.sampling, 1).expect("eval_ds");
    let last = log.losses.last().copied().unwrap_or(f64::NAN);
    s.ds = Some(ds);
    verdict(loss < 1e-4, format!("held-out loss {loss:.3e} (< 1e-4), final training loss {last:.3e}"))
}

fn c3(s: &Shared) -> Verdict {
    let table = ablate_sims(&s.morph, &s.cfg.deform, &s.cfg.ablation, stage_seed(SEED, "ablation.eval")).expect("ablation");
    print!("{}", table.to_csv());
    let row = |m| table.row(m).expect("row");
    let (sims, hybrid, vertex) = (row(SamplingStrategy::Sims), row(SamplingStrategy::Hybrid), row(SamplingStrategy::Vertex));
    let simp = |r: &facestyle::ablation::AblationRow| r.error(TopologyVariant::Simplified);
    let ratio = simp(vertex) / simp(sims);
    let pass = sims.average() <= hybrid.average() && sims.average() <= vertex.average() && ratio >= 1.5;
    verdict(
        pass,
        format!(
            "average sims {:.3e} hybrid {:.3e} vertex {:.3e}; simplified vertex/sims {ratio:.2} (>= 1.5)",
            sims.average(),
            hybrid.average(),
            vertex.average()
        ),
    )
}

fn c4(s: &mut Shared) -> Verdict {
    let ds = s.ds.as_ref().expect("D_S from the reconstruction run");
    let mut cfg = s.cfg.clone();
    cfg.train_dt.schedule = Schedule::linear(3e-5, 1e-5, 300);
    let ex = pl::make_exemplar(&cfg, &s.morph, SEED).expect("exemplar");
    let code_ref = ds.map(&ex.phi_ref).expect("map");
    let lv = |m: &TriMesh| {
        let g = Graph::new();
        l_vert(g.constant(ex.m_t.vertex_tensor()), g.constant(m.vertex_tensor())).expect("l_vert").item()
    };
    let before = lv(&ds.deform_mesh(&code_ref, s.morph.template()).expect("deform"));
    let mut rho = [0.0; 2];
    let mut fitted = 0.0;
    for (k, mode) in [StyleMode::Pseudo, StyleMode::Direct].into_iter().enumerate() {
        cfg.train_dt.style_mode = mode;
        let (dt, _) = pl::run_train_dt(&cfg, ds, &ex, &s.morph, SEED).expect("train_dt");
        rho[k] = expression_sensitivity(&dt, ds, &s.morph, 20, stage_seed(SEED, "acceptance.rho")).expect("rho");
        if mode == StyleMode::Pseudo {
            fitted = lv(&dt.deform_mesh(&code_ref, s.morph.template()).expect("deform"));
            s.dt = Some(dt);
        }
    }
    let pass = fitted < 1e-3 && rho[0] >= 0.5 && rho[1] < rho[0];
    verdict(
        pass,
        format!(
            "l_vert {before:.3e} -> {fitted:.3e} (< 1e-3); rho pseudo {:.3} (>= 0.5), direct {:.3} (< pseudo)",
            rho[0], rho[1]
        ),
    )
}

fn c5(s: &mut Shared) -> Verdict {
    let ds = s.ds.as_ref().expect("D_S from the reconstruction run");
    let dt = s.dt.as_ref().expect("D_T from the adaptation run");
    let (mage, _, _) = pl::run_train_mage(&s.cfg, ds, &s.morph, SEED).expect("train_mage");
    let (id_enc, exp_enc) = mage.encoders();
    let (rb, _) = regression_error(id_enc, exp_enc, &s.morph, s.cfg.mage.n_points, 30, stage_seed(SEED, "acceptance.reg"))
        .expect("regression");
    let (l_enc, baseline) = eval_mage(&mage, ds, &s.morph, 30, stage_seed(SEED, "acceptance.enc")).expect("eval");
    let remesh = [TopologyVariant::Loop1, TopologyVariant::Simplified];
    let (disp, spread) =
        topology_displacement(&mage, ds, &s.morph, &remesh, 50, stage_seed(SEED, "acceptance.topo")).expect("topo");
    let (dev, out_spread) = stylize_deviation(&mage, dt, &s.morph, &remesh, 10);
    let tau_enc = 0.5 * baseline;
    let tau_topo = 0.5 * spread;
    let delta_topo = 0.5 * out_spread;
    let pass = l_enc <= tau_enc && disp <= tau_topo && dev <= delta_topo;
    s.mage = Some(mage);
    verdict(
        pass,
        format!(
            "pretrain beta rel mse {rb:.3}; L_enc {l_enc:.3} (<= {tau_enc:.3}); \
             displacement {disp:.3} (<= {tau_topo:.3}); stylize deviation {dev:.2e} (<= {delta_topo:.2e})"
        ),
    )
}

/// Mean per-vertex distance between stylizing a target and a remeshed copy
/// of it, and between stylizing two different targets.
fn stylize_deviation(
    mage: &MageModel,
    dt: &DeformModel,
    morph: &ToyMorphable,
    remesh: &[TopologyVariant],
    identities: usize,
) -> (f64, f64) {
    let template = morph.template();
    let variants: Vec<_> = remesh.iter().map(|&k| morph.variant(k).expect("variant")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(SEED, "acceptance.stylize"));
    let (mut dev, mut n) = (0.0, 0);
    let mut outs = Vec::new();
    for _ in 0..identities {
        let target = morph.decode(&morph.sample_params_with(&mut rng)).expect("decode");
        let base = stylize(&target, mage, dt, template).expect("stylize");
        for v in &variants {
            let moved = stylize(&v.carry(&target).expect("carry"), mage, dt, template).expect("stylize");
            dev += mean_vertex_distance(&base, &moved);
            n += 1;
        }
        outs.push(base);
    }
    let spread = outs.windows(2).map(|w| mean_vertex_distance(&w[0], &w[1])).sum::<f64>() / (outs.len() - 1) as f64;
    (dev / n as f64, spread)
}

fn c6(s: &Shared) -> Verdict {
    let mage = s.mage.as_ref().expect("encoder from the MAGE run");
    let dt = s.dt.as_ref().expect("D_T from the adaptation run");
    let target = s.morph.decode(&s.morph.sample_params(3)).expect("decode");
    let mut bad = Vec::new();
    for kind in TopologyVariant::ALL {
        let tmpl = s.morph.variant(kind).expect("variant").mesh;
        if stylize(&target, mage, dt, &tmpl).expect("stylize").faces() != tmpl.faces() {
            bad.push(kind);
        }
    }
    verdict(bad.is_empty(), format!("{} variants, mismatched {bad:?}", TopologyVariant::ALL.len()))
}

fn c7(s: &Shared) -> Verdict {
    let cfg = tiny_config();
    let ckpt = |seed| {
        let m = pl::new_deform(&cfg, &s.morph, seed).expect("model");
        let mut c = Checkpoint::new(m.fingerprint(), seed);
        c.extend_prefixed("", m.to_named());
        c
    };
    let (a, b) = (ckpt(1), ckpt(2));
    let ends = interpolate(&a, &b, 1.0).expect("alpha 1") == a && interpolate(&a, &b, 0.0).expect("alpha 0") == b;
    let dir = tempfile::tempdir().expect("tempdir");
    let p = dir.path().join("blend.json");
    let mid = interpolate(&a, &b, 0.5).expect("alpha 0.5");
    mid.save(&p).expect("save");
    let back = Checkpoint::load(&p, None, false).expect("load");
    let round = back == mid && std::fs::read_to_string(&p).expect("read") == back.to_json().expect("json");
    verdict(ends && round, format!("endpoints bitwise {ends}, save/load bitwise {round}"))
}

/// Every stage into `dir`; returns the files to compare.
fn pipeline_files(cfg: &RunConfig, dir: &Path) -> Vec<(String, Vec<u8>)> {
    let morph = pl::gen_model(cfg, SEED).expect("model");
    pl::save_morphable(&morph, &dir.join(pl::MODEL_FILE), SEED).expect("save");
    let (ds, _) = pl::run_train_ds(cfg, &morph, SEED).expect("ds");
    pl::save_deform(&ds, &dir.join(pl::DS_FILE), SEED).expect("save");
    let ex = pl::make_exemplar(cfg, &morph, SEED).expect("exemplar");
    pl::save_exemplar(&ex, dir).expect("save");
    let (dt, _) = pl::run_train_dt(cfg, &ds, &ex, &morph, SEED).expect("dt");
    pl::save_deform(&dt, &dir.join(pl::DT_FILE), SEED).expect("save");
    let (mage, _, _) = pl::run_train_mage(cfg, &ds, &morph, SEED).expect("mage");
    pl::save_mage(&mage, &dir.join(pl::MAGE_FILE), SEED).expect("save");
    stylize(&ex.m_s, &mage, &dt, morph.template())
        .expect("stylize")
        .write_obj(&dir.join("stylized.obj"))
        .expect("write");
    [pl::MODEL_FILE, pl::DS_FILE, pl::DT_FILE, pl::MAGE_FILE, "stylized.obj"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(dir.join(f)).expect("read")))
        .collect()
}

fn c8() -> Verdict {
    let cfg = tiny_config();
    let (a, b) = (tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir"));
    let (fa, fb) = (pipeline_files(&cfg, a.path()), pipeline_files(&cfg, b.path()));
    let differ: Vec<_> = fa.iter().zip(&fb).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.clone()).collect();
    verdict(differ.is_empty(), format!("{} files compared, differing {differ:?}", fa.len()))
}

fn c9() -> Verdict {
    let (stat, p) = face_frequency_chi_square(&ten_face_probe(), 100_000, stage_seed(SEED, "acceptance.chi2"));
    verdict(p > 0.01, format!("chi-square {stat:.2}, p {p:.3} (> 0.01)"))
}

fn main() {
    let cfg = RunConfig::default();
    let morph = pl::gen_model(&cfg, SEED).expect("morphable model");
    let mut s = Shared { cfg, morph, ds: None, dt: None, mage: None };
    let results = [
        run("C1 gradient integrity", Some(Duration::from_secs(120)), c1),
        run("C2 source reconstruction", mins(10), || c2(&mut s)),
        run("C3 sampling ablation", mins(30), || c3(&s)),
        run("C4 one-shot adaptation", mins(20), || c4(&mut s)),
        run("C5 mesh-agnostic encoder", mins(15), || c5(&mut s)),
        run("C6 desired topology", mins(1), || c6(&s)),
        run("C7 interpolation endpoints", Some(Duration::from_secs(10)), || c7(&s)),
        run("C8 determinism", None, c8),
        run("C9 sampling oracle", Some(Duration::from_secs(10)), c9),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
}
