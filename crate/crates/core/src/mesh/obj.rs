//! Wavefront OBJ subset: `v x y z`, triangular `f i j k` (1-indexed), `#`
//! comments and blank lines. Other statements (`vn`, `vt`, `o`, `g`, `s`,
//! material lines) are skipped.

use std::fmt::Write as _;

use super::TriMesh;
use crate::error::{Error, Result};

pub fn read(bytes: &[u8]) -> Result<TriMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Obj {
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let err = |msg: String| Error::Obj { line: line_no, msg };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<&str> = it.collect();
                // optional w / colour components are ignored
                if coords.len() < 3 {
                    return Err(err(format!("vertex needs 3 coordinates, got {}", coords.len())));
                }
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = coords[k]
                        .parse::<f64>()
                        .map_err(|_| err(format!("malformed number `{}`", coords[k])))?;
                    if !p[k].is_finite() {
                        return Err(err(format!("non-finite coordinate `{}`", coords[k])));
                    }
                }
                vertices.push(p);
            }
            Some("f") => {
                let refs: Vec<&str> = it.collect();
                if refs.len() != 3 {
                    return Err(err(format!("only triangles are supported, got {} corners", refs.len())));
                }
                let mut f = [0usize; 3];
                for k in 0..3 {
                    let head = refs[k].split('/').next().unwrap_or("");
                    let i: usize = head
                        .parse()
                        .map_err(|_| err(format!("malformed index `{}`", refs[k])))?;
                    if i == 0 || i > vertices.len() {
                        return Err(err(format!(
                            "index {i} out of range (have {} vertices)",
                            vertices.len()
                        )));
                    }
                    f[k] = i - 1;
                }
                if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                    return Err(err(format!("degenerate face {refs:?}")));
                }
                faces.push(f);
            }
            Some(_) => {}
            None => {}
        }
    }
    TriMesh::new(vertices, faces)
}

/// Serializes with shortest round-trip decimal formatting.
pub fn write(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.num_vertices() * 48 + mesh.num_faces() * 24);
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}
