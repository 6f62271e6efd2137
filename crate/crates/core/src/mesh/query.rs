//! Point-to-surface queries.

use super::{add, dot, scale, sub, TriMesh, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestPoint {
    pub face: usize,
    pub bary: [f64; 3],
    pub position: Vec3,
    pub distance_sq: f64,
}

/// Closest point on triangle `abc` to `p`, as barycentric weights.
/// Region classification after Ericson, "Real-Time Collision Detection" 5.1.5.
pub fn closest_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> [f64; 3] {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = va + vb + vc;
    if denom.abs() < 1e-300 {
        // degenerate triangle: fall back to the nearest corner
        let da = dot(ap, ap);
        let db = dot(bp, bp);
        let dc = dot(cp, cp);
        return if da <= db && da <= dc {
            [1.0, 0.0, 0.0]
        } else if db <= dc {
            [0.0, 1.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
    }
    let v = vb / denom;
    let w = vc / denom;
    [1.0 - v - w, v, w]
}

fn interpolate(bary: [f64; 3], a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    add(add(scale(a, bary[0]), scale(b, bary[1])), scale(c, bary[2]))
}

pub fn point_triangle_distance_sq(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let q = interpolate(closest_on_triangle(p, a, b, c), a, b, c);
    let d = sub(p, q);
    dot(d, d)
}

/// Brute-force closest point over all faces; `None` when the mesh has no faces.
pub fn closest_point(mesh: &TriMesh, p: Vec3) -> Option<ClosestPoint> {
    let mut best: Option<ClosestPoint> = None;
    for (fi, f) in mesh.faces().iter().enumerate() {
        let [a, b, c] = f.map(|i| mesh.vertices()[i]);
        // cheap reject by bounding sphere of the triangle
        if let Some(bst) = &best {
            let ctr = scale(add(add(a, b), c), 1.0 / 3.0);
            let r2 = [a, b, c]
                .iter()
                .map(|&v| {
                    let d = sub(v, ctr);
                    dot(d, d)
                })
                .fold(0.0, f64::max);
            let dc = sub(p, ctr);
            let dist_c = dot(dc, dc).sqrt() - r2.sqrt();
            if dist_c > 0.0 && dist_c * dist_c > bst.distance_sq {
                continue;
            }
        }
        let bary = closest_on_triangle(p, a, b, c);
        let q = interpolate(bary, a, b, c);
        let d = sub(p, q);
        let d2 = dot(d, d);
        if best.map_or(true, |b| d2 < b.distance_sq) {
            best = Some(ClosestPoint {
                face: fi,
                bary,
                position: q,
                distance_sq: d2,
            });
        }
    }
    best
}
