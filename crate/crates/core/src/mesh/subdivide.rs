//! Loop and midpoint 1-to-4 subdivision.
//!
//! Original vertices keep their indices `0..V`; edge vertices follow at
//! `V + e` in first-seen edge order. Both schemes are expressed as stencils
//! over the input vertices.

use std::collections::HashMap;

use super::sampling::{StencilBuilder, StencilSet};
use super::TriMesh;
use crate::error::{Error, Result};

struct EdgeTopology {
    edges: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
    /// Opposite corner of each incident face, per edge.
    opposite: Vec<Vec<usize>>,
}

fn edge_topology(m: &TriMesh) -> EdgeTopology {
    let mut edges = Vec::new();
    let mut index = HashMap::new();
    let mut opposite: Vec<Vec<usize>> = Vec::new();
    for f in m.faces() {
        for k in 0..3 {
            let (a, b, c) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            let key = (a.min(b), a.max(b));
            let e = *index.entry(key).or_insert_with(|| {
                edges.push(key);
                opposite.push(Vec::new());
                edges.len() - 1
            });
            opposite[e].push(c);
        }
    }
    EdgeTopology {
        edges,
        index,
        opposite,
    }
}

fn split_faces(m: &TriMesh, topo: &EdgeTopology) -> Vec<[usize; 3]> {
    let nv = m.num_vertices();
    let mid = |a: usize, b: usize| nv + topo.index[&(a.min(b), a.max(b))];
    let mut faces = Vec::with_capacity(4 * m.num_faces());
    for &[a, b, c] in m.faces() {
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        faces.push([a, ab, ca]);
        faces.push([ab, b, bc]);
        faces.push([ca, bc, c]);
        faces.push([ab, bc, ca]);
    }
    faces
}

fn assemble(m: &TriMesh, topo: &EdgeTopology, stencil: StencilSet) -> (TriMesh, StencilSet) {
    let verts = stencil.apply(m.vertices());
    let mesh = TriMesh::new(verts, split_faces(m, topo))
        .expect("subdivision preserves validity")
        .with_landmarks(m.landmarks().clone())
        .expect("original indices are kept");
    (mesh, stencil)
}

/// Splits each triangle into four without moving original vertices.
pub(crate) fn midpoint_subdivide(m: &TriMesh) -> (TriMesh, StencilSet) {
    let topo = edge_topology(m);
    let mut b = StencilBuilder::new(m.num_vertices());
    for v in 0..m.num_vertices() {
        b.push_row(std::iter::once((v, 1.0)));
    }
    for &(a, c) in &topo.edges {
        b.push_row([(a, 0.5), (c, 0.5)].into_iter());
    }
    assemble(m, &topo, b.finish())
}

/// One level of Loop subdivision.
pub fn loop_subdivide(m: &TriMesh) -> Result<TriMesh> {
    Ok(loop_subdivide_with_stencil(m)?.0)
}

/// Loop subdivision plus the stencil mapping input vertices to output vertices.
pub fn loop_subdivide_with_stencil(m: &TriMesh) -> Result<(TriMesh, StencilSet)> {
    let topo = edge_topology(m);
    for (e, opp) in topo.opposite.iter().enumerate() {
        if opp.len() > 2 {
            let (a, b) = topo.edges[e];
            return Err(Error::NonManifold(a, b, opp.len()));
        }
    }
    let nv = m.num_vertices();
    let mut neighbors = vec![Vec::new(); nv];
    let mut boundary_nb = vec![Vec::new(); nv];
    for (e, &(a, b)) in topo.edges.iter().enumerate() {
        neighbors[a].push(b);
        neighbors[b].push(a);
        if topo.opposite[e].len() == 1 {
            boundary_nb[a].push(b);
            boundary_nb[b].push(a);
        }
    }

    let mut st = StencilBuilder::new(nv);
    for v in 0..nv {
        let nb = &neighbors[v];
        let bnb = &boundary_nb[v];
        if bnb.len() == 2 {
            st.push_row([(v, 0.75), (bnb[0], 0.125), (bnb[1], 0.125)].into_iter());
        } else if !bnb.is_empty() || nb.is_empty() {
            // corner of a non-manifold fan or isolated vertex: keep in place
            st.push_row(std::iter::once((v, 1.0)));
        } else {
            let n = nb.len();
            let beta = if n == 3 { 3.0 / 16.0 } else { 3.0 / (8.0 * n as f64) };
            st.push_row(std::iter::once((v, 1.0 - n as f64 * beta)).chain(nb.iter().map(|&u| (u, beta))));
        }
    }
    for (e, &(a, b)) in topo.edges.iter().enumerate() {
        match topo.opposite[e].as_slice() {
            &[c, d] => st.push_row([(a, 0.375), (b, 0.375), (c, 0.125), (d, 0.125)].into_iter()),
            _ => st.push_row([(a, 0.5), (b, 0.5)].into_iter()),
        }
    }
    Ok(assemble(m, &topo, st.finish()))
}
