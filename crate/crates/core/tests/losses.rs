mod common;

use common::{jitter, small_face, space_for, Probe};
use facestyle::autodiff::{Graph, Tensor};
use facestyle::deform::LatentCode;
use facestyle::losses::{
    embed_views, l_across, l_clip, l_enc, l_enc_codes, l_in, l_style, l_style_meshes, l_total, l_total_values,
    l_vert, loss_ds, mean_sq_dist, LossComponents, LossWeights,
};
use facestyle::mesh::{face_normals, SamplingStrategy, TriMesh};
use facestyle::morph::{MorphConfig, ToyMorphable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lv(a: &TriMesh, b: &TriMesh) -> f64 {
    let g = Graph::new();
    l_vert(g.constant(a.vertex_tensor()), g.constant(b.vertex_tensor())).unwrap().item()
}

#[test]
fn gradients_of_every_stage_match_central_differences() {
    let probe = Probe::new();
    for (name, r) in probe.gradient_suite() {
        assert!(r.passed, "{name}: max rel error {:.3e} at {}", r.max_rel_error, r.worst_index);
    }
}

#[test]
fn l_vert_fixed_point_offset_and_brute_force() {
    let m = small_face();
    assert_eq!(lv(&m, &m), 0.0);
    let eps = 0.0123;
    let shifted = m.translated([eps, 0.0, 0.0]);
    assert!((lv(&m, &shifted) - eps * eps).abs() < 1e-15);

    let other = jitter(&m, 0.1, 9);
    let brute: f64 = m
        .vertices()
        .iter()
        .zip(other.vertices())
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / m.num_vertices() as f64;
    assert!((lv(&m, &other) - brute).abs() < 1e-14);

    let g = Graph::new();
    let small = g.constant(Tensor::zeros(&[3, 3]));
    assert!(l_vert(small, g.constant(m.vertex_tensor())).is_err());
}

#[test]
fn l_style_fixed_point_flipped_face_and_per_face_oracle() {
    // two triangles sharing no vertices, so one can be flipped alone
    let m = TriMesh::new(
        vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
            [2.0, 1.0, 0.3],
        ],
        vec![[0, 1, 2], [3, 4, 5]],
    )
    .unwrap();
    assert_eq!(l_style_meshes(&m, &m).unwrap(), 0.0);
    // swapping two corners of the first triangle turns its normal from +z to −z
    let mut v = m.vertices().to_vec();
    v.swap(1, 2);
    let flipped = m.with_vertices(v).unwrap();
    assert!((l_style_meshes(&m, &flipped).unwrap() - 2.0).abs() < 1e-12);

    let face = small_face();
    let other = jitter(&face, 0.05, 4);
    let (na, nb) = (face_normals(&face), face_normals(&other));
    let brute: f64 = (0..face.num_faces())
        .map(|f| {
            let (a, b) = (na.normals[f], nb.normals[f]);
            1.0 - (0..3).map(|k| a[k] * b[k]).sum::<f64>()
        })
        .sum();
    assert!((l_style_meshes(&face, &other).unwrap() - brute).abs() < 1e-12);

    let sub = facestyle::mesh::loop_subdivide(&face).unwrap();
    assert!(l_style_meshes(&face, &sub).is_err());
}

#[test]
fn embedding_losses_match_per_view_oracles() {
    let face = small_face();
    let space = space_for(&face, 32);
    let meshes: Vec<TriMesh> = (0..4).map(|s| jitter(&face, 0.03, s)).collect();
    let emb: Vec<Vec<Tensor>> = meshes.iter().map(|m| space.embed_mesh(m)).collect();
    let (t, s, ts, ss) = (&emb[0], &emb[1], &emb[2], &emb[3]);
    let views = t.len();
    assert_eq!(views, 10);

    let g = Graph::new();
    let c = |e: &[Tensor]| e.iter().map(|x| g.constant(x.clone())).collect::<Vec<_>>();
    let sq = |f: &dyn Fn(usize, usize) -> f64| -> f64 {
        (0..views).map(|v| (0..128).map(|k| f(v, k).powi(2)).sum::<f64>()).sum()
    };
    let d = |e: &[Tensor], v: usize, k: usize| e[v].data()[k];

    let clip = l_clip(&c(t), &c(s)).item();
    assert!((clip - sq(&|v, k| d(t, v, k) - d(s, v, k))).abs() < 1e-12);
    assert!(clip <= 4.0 * views as f64);
    assert_eq!(l_clip(&c(t), &c(t)).item(), 0.0);

    let inner = l_in(&c(ss), &c(s), &c(ts), &c(t)).item();
    let oracle = sq(&|v, k| (d(ss, v, k) - d(s, v, k)) - (d(ts, v, k) - d(t, v, k)));
    assert!((inner - oracle).abs() < 1e-12);
    assert_eq!(l_in(&c(ss), &c(s), &c(ss), &c(s)).item(), 0.0);
    assert_eq!(l_in(&c(s), &c(s), &c(t), &c(t)).item(), 0.0);

    let across = l_across(&c(t), &c(s), &c(ts), &c(ss)).item();
    let oracle = sq(&|v, k| (d(t, v, k) - d(s, v, k)) - (d(ts, v, k) - d(ss, v, k)));
    assert!((across - oracle).abs() < 1e-12);
    let swapped = l_across(&c(ts), &c(ss), &c(t), &c(s)).item();
    assert!((across - swapped).abs() < 1e-12);
    assert_eq!(l_across(&c(t), &c(s), &c(t), &c(s)).item(), 0.0);

    // the graph path agrees with the frozen embeddings
    let live = embed_views(&face, g.constant(meshes[0].vertex_tensor()), &space.rig, &space.settings, &space.embedder);
    assert!(l_clip(&live, &c(t)).item() < 1e-20);
}

#[test]
fn pseudo_pair_never_routes_gradient_to_the_sampled_expression() {
    let probe = Probe::new();
    let g = Graph::new();
    let b = probe.model.bind_frozen(&g);
    let d_e = probe.code.z_e.len();
    let zs_samp = g.param(probe.z_s());
    let ze_samp = g.param(Tensor::new(&[1, d_e], vec![0.3; d_e]).unwrap());
    let (_, ze_ref) = b.code_vars(&probe.code);
    let tmpl = g.constant(probe.face.vertex_tensor());
    let m_t_samp = b.field(zs_samp, ze_samp).apply(tmpl);
    let pseudo = b.field(zs_samp, ze_ref).apply(tmpl);
    let loss = l_style(&probe.face, g.constant(probe.m_t.vertex_tensor()), pseudo).unwrap() + mean_sq_dist(m_t_samp, m_t_samp);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(ze_samp).data().iter().all(|&x| x == 0.0));
    assert!(grads.get(zs_samp).max_abs() > 0.0);
}

#[test]
fn l_total_is_linear_in_weights() {
    let w = LossWeights::default();
    assert_eq!(
        [w.lambda_vert, w.lambda_clip, w.lambda_in, w.lambda_across, w.lambda_style],
        [80.0, 2e-3, 6e-3, 6e-3, 4e-3]
    );
    let zero = LossComponents { vert: 0.0, clip: 0.0, inner: 0.0, across: 0.0, style: 0.0 };
    assert_eq!(l_total_values(&zero, &w), 0.0);
    let c = LossComponents { vert: 1e-3, clip: 2.0, inner: 0.5, across: 0.25, style: 3.0 };
    let t = l_total_values(&c, &w);
    assert!((l_total_values(&c, &w.scaled(2.0)) - 2.0 * t).abs() < 1e-15);
    let expected = 80.0 * 1e-3 + 2e-3 * 2.0 + 6e-3 * 0.5 + 6e-3 * 0.25 + 4e-3 * 3.0;
    assert!((t - expected).abs() < 1e-15);

    let g = Graph::new();
    let cv = LossComponents {
        vert: g.scalar(c.vert),
        clip: g.scalar(c.clip),
        inner: g.scalar(c.inner),
        across: g.scalar(c.across),
        style: g.scalar(c.style),
    };
    assert!((l_total(&cv, &w).item() - t).abs() < 1e-15);
}

#[test]
fn l_enc_oracles() {
    let a = LatentCode { z_s: vec![0.5, -1.0, 2.0], z_e: vec![0.25, 0.0] };
    assert_eq!(l_enc_codes(&a, &a).unwrap(), 0.0);
    let mut b = a.clone();
    b.z_e[1] += 1.0;
    assert_eq!(l_enc_codes(&a, &b).unwrap(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let brute: f64 = x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum();
    let (cx, cy) = (LatentCode::from_flat(&x, 12), LatentCode::from_flat(&y, 12));
    assert!((l_enc_codes(&cx, &cy).unwrap() - brute).abs() < 1e-13);
    assert!(l_enc_codes(&cx, &LatentCode::from_flat(&y, 11)).is_err());

    let g = Graph::new();
    let v = |d: &[f64]| g.constant(Tensor::new(&[1, d.len()], d.to_vec()).unwrap());
    assert!(l_enc(v(&x), v(&y[..19])).is_err());
}

#[test]
fn loss_ds_is_zero_for_identity_field_on_neutral_face() {
    let morph = ToyMorphable::build(&MorphConfig::default(), 1).unwrap();
    let model = facestyle::deform::DeformModel::new(&Default::default(), 16, 8, 0).unwrap();
    let stencil = SamplingStrategy::Sims.stencil(morph.template(), 3).unwrap();
    let g = Graph::new();
    let b = model.bind_frozen(&g);
    assert_eq!(loss_ds(&b, &morph, &morph.zero_params(), &stencil).unwrap().item(), 0.0);
    let p = morph.sample_params(4);
    assert!(loss_ds(&b, &morph, &p, &stencil).unwrap().item() > 0.0);
}
