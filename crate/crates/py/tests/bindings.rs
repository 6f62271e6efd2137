use std::ffi::CString;
use std::sync::Once;

use facestyle_py::facestyle_py;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn python<R>(f: impl for<'py> FnOnce(Python<'py>) -> R) -> R {
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(facestyle_py);
        Python::initialize();
    });
    Python::attach(f)
}

fn run(code: &str) {
    python(|py| {
        let code = CString::new(code).unwrap();
        // fresh globals, so the snippet's objects are dropped on this thread
        let globals = PyDict::new(py);
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn mesh_round_trip_and_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.obj");
    run(&format!(
        r#"
import facestyle_py as fs
m = fs.Mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])
assert abs(m.total_area() - 0.5) < 1e-15
m.write_obj({path:?})
back = fs.Mesh.read_obj({path:?})
assert back.vertices == m.vertices
assert [tuple(f) for f in back.faces] == [(0, 1, 2)]
s = m.sims_sample(1.0, 0)
assert len(s) == 3 and all(f == 0 for f, _ in s)
try:
    m.sims_sample(0.0, 0)
    raise SystemExit("zero ratio accepted")
except ValueError:
    pass
"#,
        path = path.to_str().unwrap()
    ));
}

#[test]
fn morphable_model_decodes_and_remeshes() {
    run(r#"
import facestyle_py as fs
model = fs.MorphableModel(seed=1)
beta, psi = model.sample_params(2)
assert (len(beta), len(psi)) == (model.shape_rank, model.expr_rank)
face = model.decode(beta, psi)
assert face.faces == model.template().faces
loop1 = model.remesh(face, "loop1")
assert loop1.num_faces == 4 * face.num_faces
try:
    model.decode(beta[:-1], psi)
    raise SystemExit("short beta accepted")
except ValueError:
    pass
try:
    model.variant("loop3")
    raise SystemExit("unknown variant accepted")
except ValueError:
    pass
"#);
}

#[test]
fn render_and_metrics_through_python() {
    run(r#"
import facestyle_py as fs
cfg = '{"render": {"resolution": 32}, "rig": {"azimuths": [0.0]}}'
model = fs.MorphableModel(seed=1)
t = model.template()
views = fs.render(t, t, cfg)
assert [(l, v) for l, v, _ in views] == [(1, 1), (1, 2), (1, 3), (1, 4), (2, 1), (3, 1)]
m = fs.eval_metrics(t, t, t, t, cfg)
assert abs(m["sp"] - 1.0) < 1e-12 and abs(m["ip"] - 1.0) < 1e-12
try:
    fs.render(t, t, '{"render": {"resolution": 20}}')
    raise SystemExit("bad config accepted")
except ValueError:
    pass
"#);
}
