//! Greedy quadric-error edge collapse (Garland and Heckbert).
//!
//! Collapses are rejected when they would break the link condition, create a
//! duplicate or degenerate face, or flip an incident face normal. When no
//! legal collapse remains the best mesh reached so far is returned with
//! `target_reached = false`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use nalgebra::{Matrix3, Vector3};

use super::{add, cross, dot, norm, scale, sub, Landmarks, TriMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Simplified {
    pub mesh: TriMesh,
    pub target_reached: bool,
    /// Output vertex index for every input vertex.
    pub vertex_map: Vec<usize>,
}

/// Symmetric 4×4 quadric, upper triangle row-major.
#[derive(Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: Vec3, d: f64, w: f64) -> Self {
        let p = [n[0], n[1], n[2], d];
        let mut q = [0.0; 10];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                q[k] = w * p[i] * p[j];
                k += 1;
            }
        }
        Quadric(q)
    }

    fn add(&self, o: &Quadric) -> Quadric {
        Quadric(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }

    fn eval(&self, v: Vec3) -> f64 {
        let q = &self.0;
        let [x, y, z] = v;
        q[0] * x * x + 2.0 * q[1] * x * y + 2.0 * q[2] * x * z + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    fn minimizer(&self) -> Option<Vec3> {
        let q = &self.0;
        let a = Matrix3::new(q[0], q[1], q[2], q[1], q[4], q[5], q[2], q[5], q[7]);
        let scale = a.abs().max();
        if scale <= 0.0 || a.determinant().abs() < 1e-10 * scale.powi(3) {
            return None;
        }
        let x = a.try_inverse()? * Vector3::new(-q[3], -q[6], -q[8]);
        Some([x[0], x[1], x[2]])
    }
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    va: u32,
    vb: u32,
    target: Vec3,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, ties broken by indices for determinism
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct State {
    pos: Vec<Vec3>,
    quadric: Vec<Quadric>,
    version: Vec<u32>,
    alive: Vec<bool>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_faces: Vec<Vec<usize>>,
    parent: Vec<usize>,
}

impl State {
    fn live_faces(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.vert_faces[v].iter().copied().filter(|&f| self.face_alive[f])
    }

    fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        let mut s = BTreeSet::new();
        for f in self.live_faces(v) {
            for &u in &self.faces[f] {
                if u != v {
                    s.insert(u);
                }
            }
        }
        s
    }

    fn normal(&self, f: [usize; 3], moved: Option<(usize, Vec3)>) -> Vec3 {
        let p = |i: usize| match moved {
            Some((m, q)) if m == i => q,
            _ => self.pos[i],
        };
        cross(sub(p(f[1]), p(f[0])), sub(p(f[2]), p(f[0])))
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let q = self.quadric[a].add(&self.quadric[b]);
        let mid = scale(add(self.pos[a], self.pos[b]), 0.5);
        let mut opts = vec![self.pos[a], self.pos[b], mid];
        if let Some(x) = q.minimizer() {
            // guard against far-away minimizers of nearly flat regions
            let len = norm(sub(self.pos[a], self.pos[b]));
            if norm(sub(x, mid)) <= 2.0 * len {
                opts.insert(0, x);
            }
        }
        let (target, cost) = opts
            .into_iter()
            .map(|p| (p, q.eval(p)))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        Candidate {
            cost: cost.max(0.0),
            a: a.min(b),
            b: a.max(b),
            va: self.version[a.min(b)],
            vb: self.version[a.max(b)],
            target,
        }
    }

    /// Checks legality of collapsing `b` into `a` at position `p`.
    fn legal(&self, a: usize, b: usize, p: Vec3) -> bool {
        let shared: Vec<usize> = self
            .live_faces(a)
            .filter(|&f| self.faces[f].contains(&b))
            .collect();
        if shared.is_empty() || shared.len() > 2 {
            return false;
        }
        // link condition: common neighbours are exactly the opposite corners
        let common: Vec<usize> = self
            .neighbors(a)
            .intersection(&self.neighbors(b))
            .copied()
            .collect();
        let mut opp: Vec<usize> = shared
            .iter()
            .map(|&f| *self.faces[f].iter().find(|&&u| u != a && u != b).unwrap())
            .collect();
        opp.sort_unstable();
        if common != opp {
            return false;
        }
        let mut keys = BTreeSet::new();
        for (v, other) in [(a, b), (b, a)] {
            for f in self.live_faces(v) {
                let tri = self.faces[f];
                if tri.contains(&other) {
                    continue;
                }
                let new_tri = tri.map(|u| if u == b { a } else { u });
                let mut key = new_tri;
                key.sort_unstable();
                if !keys.insert(key) {
                    return false;
                }
                let n0 = self.normal(tri, None);
                let n1 = self.normal(new_tri, Some((a, p)));
                let l0 = norm(n0);
                let l1 = norm(n1);
                if l1 <= 1e-12 * (1.0 + l0) || dot(n0, n1) < 0.0 {
                    return false;
                }
            }
        }
        // refuse to close a surface down below a tetrahedron
        self.live_faces(a).count() + self.live_faces(b).count() - 2 * shared.len() >= 2
    }

    fn collapse(&mut self, a: usize, b: usize, p: Vec3) {
        self.pos[a] = p;
        self.quadric[a] = self.quadric[a].add(&self.quadric[b]);
        self.alive[b] = false;
        self.parent[b] = a;
        self.version[a] += 1;
        self.version[b] += 1;
        let bf: Vec<usize> = self.live_faces(b).collect();
        for f in bf {
            if self.faces[f].contains(&a) {
                self.face_alive[f] = false;
            } else {
                for u in self.faces[f].iter_mut() {
                    if *u == b {
                        *u = a;
                    }
                }
                self.vert_faces[a].push(f);
            }
        }
        self.vert_faces[b].clear();
        self.vert_faces[a].retain(|&f| self.face_alive[f]);
    }

    fn root(&self, mut v: usize) -> usize {
        while self.parent[v] != v {
            v = self.parent[v];
        }
        v
    }
}

/// Collapses edges until at most `⌈fraction·V⌉` vertices remain.
pub fn simplify(m: &TriMesh, target_vertex_fraction: f64) -> Result<Simplified> {
    if !(target_vertex_fraction > 0.0 && target_vertex_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "simplify fraction must lie in (0, 1), got {target_vertex_fraction}"
        )));
    }
    let nv = m.num_vertices();
    let target = (target_vertex_fraction * nv as f64 * (1.0 - 1e-12)).ceil() as usize;
    let mut st = State {
        pos: m.vertices().to_vec(),
        quadric: vec![Quadric::default(); nv],
        version: vec![0; nv],
        alive: vec![true; nv],
        faces: m.faces().to_vec(),
        face_alive: vec![true; m.num_faces()],
        vert_faces: vec![Vec::new(); nv],
        parent: (0..nv).collect(),
    };
    for (fi, f) in m.faces().iter().enumerate() {
        let n = st.normal(*f, None);
        let area2 = norm(n);
        if area2 > 0.0 {
            let u = scale(n, 1.0 / area2);
            let q = Quadric::plane(u, -dot(u, st.pos[f[0]]), area2 * 0.5);
            for &v in f {
                st.quadric[v] = st.quadric[v].add(&q);
            }
        }
        for &v in f {
            st.vert_faces[v].push(fi);
        }
    }
    // boundary edges get a perpendicular constraint plane so borders stay put
    let mut edge_count = std::collections::HashMap::new();
    for f in m.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *edge_count.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
        }
    }
    for (fi, f) in m.faces().iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if edge_count[&(a.min(b), a.max(b))] != 1 {
                continue;
            }
            let e = sub(st.pos[b], st.pos[a]);
            let perp = cross(e, st.normal(m.faces()[fi], None));
            let l = norm(perp);
            if l > 0.0 {
                let u = scale(perp, 1.0 / l);
                let q = Quadric::plane(u, -dot(u, st.pos[a]), dot(e, e) * 10.0);
                st.quadric[a] = st.quadric[a].add(&q);
                st.quadric[b] = st.quadric[b].add(&q);
            }
        }
    }

    let mut heap = BinaryHeap::new();
    for (a, b) in m.edges() {
        heap.push(st.candidate(a, b));
    }
    let mut alive = nv;
    while alive > target {
        let Some(c) = heap.pop() else { break };
        if !st.alive[c.a] || !st.alive[c.b] || st.version[c.a] != c.va || st.version[c.b] != c.vb {
            continue;
        }
        if !st.legal(c.a, c.b, c.target) {
            continue;
        }
        st.collapse(c.a, c.b, c.target);
        alive -= 1;
        for u in st.neighbors(c.a) {
            heap.push(st.candidate(c.a, u));
        }
    }

    let mut new_index = vec![usize::MAX; nv];
    let mut verts = Vec::with_capacity(alive);
    for v in 0..nv {
        if st.alive[v] {
            new_index[v] = verts.len();
            verts.push(st.pos[v]);
        }
    }
    let vertex_map: Vec<usize> = (0..nv).map(|v| new_index[st.root(v)]).collect();
    let faces: Vec<[usize; 3]> = st
        .faces
        .iter()
        .zip(&st.face_alive)
        .filter(|(_, &ok)| ok)
        .map(|(f, _)| f.map(|u| new_index[u]))
        .collect();
    let mut landmarks = Landmarks::new();
    for (name, idx) in m.landmarks() {
        let mut mapped: Vec<usize> = idx.iter().map(|&i| vertex_map[i]).collect();
        mapped.sort_unstable();
        mapped.dedup();
        landmarks.insert(name.clone(), mapped);
    }
    let mesh = TriMesh::new(verts, faces)?.with_landmarks(landmarks)?;
    Ok(Simplified {
        target_reached: mesh.num_vertices() <= target,
        mesh,
        vertex_map,
    })
}
