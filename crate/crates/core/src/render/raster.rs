//! Soft rasterization as a single fused graph primitive.
//!
//! For pixel `p` and face `j` with signed squared distance `d²` (positive
//! inside), coverage is `D_j = sigmoid(±d²/σ)`. Colours blend with weights
//! `softmax_j(log D_j + z_j/γ)` where `z_j` is the face's normalized inverse
//! depth at the pixel, and the result is composited over white with the soft
//! silhouette `α = 1 − Π_j (1 − D_j)`.

use std::ops::{Add, Div, Mul, Sub};
use std::rc::Rc;

use crate::autodiff::{CustomOp, Tensor};

/// Faces further than this many `σ` units outside a pixel are ignored
/// (coverage below `sigmoid(−30) ≈ 1e-13`).
pub const COVERAGE_CUTOFF: f64 = 30.0;

/// Sharpness of the soft barycentric clamp used for depth interpolation.
const BARY_SHARPNESS: f64 = 10.0;

/// Numbers that flow through the per-pixel geometry: plain reals in the
/// forward pass, forward-mode duals over the nine face inputs in the backward.
trait Num: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> {
    fn c(x: f64) -> Self;
    fn v(self) -> f64;
    /// `ln(1 + e^{kx}) / k`, a smooth `max(x, 0)`.
    fn soft_pos(self, k: f64) -> Self;
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Num for f64 {
    fn c(x: f64) -> Self {
        x
    }
    fn v(self) -> f64 {
        self
    }
    fn soft_pos(self, k: f64) -> Self {
        softplus(k * self) / k
    }
}

/// Tangents over `[ax, ay, bx, by, cx, cy, za, zb, zc]`.
#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: [f64; 9],
}

impl Dual {
    fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; 9];
        d[i] = 1.0;
        Self { v, d }
    }
}

impl Num for Dual {
    fn c(x: f64) -> Self {
        Self { v: x, d: [0.0; 9] }
    }
    fn v(self) -> f64 {
        self.v
    }
    fn soft_pos(self, k: f64) -> Self {
        let s = sigmoid(k * self.v);
        Self {
            v: softplus(k * self.v) / k,
            d: self.d.map(|x| s * x),
        }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: std::array::from_fn(|i| self.d[i] + o.d[i]),
        }
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d: std::array::from_fn(|i| self.d[i] - o.d[i]),
        }
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: std::array::from_fn(|i| self.d[i] * o.v + self.v * o.d[i]),
        }
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        Self {
            v: q,
            d: std::array::from_fn(|i| (self.d[i] - q * o.d[i]) * inv),
        }
    }
}

fn cross2<N: Num>(ax: N, ay: N, bx: N, by: N) -> N {
    ax * by - ay * bx
}

fn seg_dist2<N: Num>(px: f64, py: f64, a: [N; 2], b: [N; 2]) -> N {
    let ex = b[0] - a[0];
    let ey = b[1] - a[1];
    let wx = N::c(px) - a[0];
    let wy = N::c(py) - a[1];
    let len2 = ex * ex + ey * ey;
    let u = (wx * ex + wy * ey) / len2;
    let u = if u.v() <= 0.0 {
        N::c(0.0)
    } else if u.v() >= 1.0 {
        N::c(1.0)
    } else {
        u
    };
    let dx = wx - u * ex;
    let dy = wy - u * ey;
    dx * dx + dy * dy
}

/// Signed squared distance scaled by `1/σ`, and interpolated depth.
fn pixel_terms<N: Num>(px: f64, py: f64, v: [[N; 2]; 3], z: [N; 3], inv_sigma: f64) -> (N, N) {
    let [a, b, c] = v;
    let e0 = cross2(b[0] - a[0], b[1] - a[1], N::c(px) - a[0], N::c(py) - a[1]).v();
    let e1 = cross2(c[0] - b[0], c[1] - b[1], N::c(px) - b[0], N::c(py) - b[1]).v();
    let e2 = cross2(a[0] - c[0], a[1] - c[1], N::c(px) - c[0], N::c(py) - c[1]).v();
    let inside = (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0);
    let d_ab = seg_dist2(px, py, a, b);
    let d_bc = seg_dist2(px, py, b, c);
    let d_ca = seg_dist2(px, py, c, a);
    let mut d2 = d_ab;
    if d_bc.v() < d2.v() {
        d2 = d_bc;
    }
    if d_ca.v() < d2.v() {
        d2 = d_ca;
    }
    let t = if inside {
        d2 * N::c(inv_sigma)
    } else {
        d2 * N::c(-inv_sigma)
    };

    // screen-space barycentrics, softly clamped to the triangle for outside
    // pixels; a hard clamp puts a depth kink, scaled by 1/γ, on every
    // extended edge line
    let area = cross2(b[0] - a[0], b[1] - a[1], c[0] - a[0], c[1] - a[1]);
    let pxn = N::c(px);
    let pyn = N::c(py);
    let wa = cross2(b[0] - pxn, b[1] - pyn, c[0] - pxn, c[1] - pyn) / area;
    let wb = cross2(c[0] - pxn, c[1] - pyn, a[0] - pxn, a[1] - pyn) / area;
    let wc = N::c(1.0) - wa - wb;
    let clamp = |w: N| w.soft_pos(BARY_SHARPNESS);
    let (wa, wb, wc) = (clamp(wa), clamp(wb), clamp(wc));
    let s = wa + wb + wc;
    let zn = (wa * z[0] + wb * z[1] + wc * z[2]) / s;
    (t, zn)
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug)]
struct Pair {
    face: u32,
    t: f64,
    weight: f64,
    /// `Π_{k≠j} (1 − D_k)`.
    others_uncovered: f64,
}

/// Forward record kept for the backward pass.
#[derive(Debug, Default)]
struct Cache {
    pixel_start: Vec<usize>,
    pairs: Vec<Pair>,
    alpha: Vec<f64>,
    color: Vec<[f64; 3]>,
}

#[derive(Debug)]
pub struct SoftRaster {
    faces: Rc<[[usize; 3]]>,
    resolution: usize,
    sigma: f64,
    gamma: f64,
    cache: Cache,
}

fn pixel_center(i: usize, res: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / res as f64
}

impl SoftRaster {
    /// Rasterizes `screen` (`[V, 3]` rows of ndc x, ndc y, normalized inverse
    /// depth in `[0, 1]`) with per-face colours `[F, 3]`. Returns the op (for
    /// [`Graph::custom`](crate::autodiff::Graph::custom)) and the `[3, R, R]` image.
    pub fn forward(
        faces: Rc<[[usize; 3]]>,
        screen: &Tensor,
        colors: &Tensor,
        resolution: usize,
        sigma: f64,
        gamma: f64,
    ) -> (Self, Tensor) {
        let res = resolution;
        let npix = res * res;
        let sv = screen.data();
        let cv = colors.data();
        let inv_sigma = 1.0 / sigma;
        let margin = (COVERAGE_CUTOFF * sigma).sqrt();
        let to_col = |x: f64| (x + 1.0) * res as f64 / 2.0 - 0.5;
        let to_row = |y: f64| (1.0 - y) * res as f64 / 2.0 - 0.5;

        // (pixel, face, t, zn) for every pair inside the cutoff
        let mut raw: Vec<(u32, u32, f64, f64)> = Vec::new();
        for (fi, f) in faces.iter().enumerate() {
            let p = f.map(|i| [sv[3 * i], sv[3 * i + 1]]);
            let z = f.map(|i| sv[3 * i + 2]);
            if z.iter().any(|&zz| !(0.0..=1.0).contains(&zz)) {
                continue;
            }
            let area = cross2(p[1][0] - p[0][0], p[1][1] - p[0][1], p[2][0] - p[0][0], p[2][1] - p[0][1]);
            if area.abs() < 1e-18 || !area.is_finite() {
                continue;
            }
            let xmin = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min) - margin;
            let xmax = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max) + margin;
            let ymin = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min) - margin;
            let ymax = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max) + margin;
            if xmax < -1.0 || xmin > 1.0 || ymax < -1.0 || ymin > 1.0 {
                continue;
            }
            let c0 = to_col(xmin).ceil().max(0.0) as usize;
            let c1 = to_col(xmax).floor().min(res as f64 - 1.0);
            let r0 = to_row(ymax).ceil().max(0.0) as usize;
            let r1 = to_row(ymin).floor().min(res as f64 - 1.0);
            if c1 < 0.0 || r1 < 0.0 {
                continue;
            }
            for row in r0..=r1 as usize {
                let py = -pixel_center(row, res);
                for col in c0..=c1 as usize {
                    let px = pixel_center(col, res);
                    let (t, zn) = pixel_terms(px, py, p, z, inv_sigma);
                    if t < -COVERAGE_CUTOFF {
                        continue;
                    }
                    raw.push(((row * res + col) as u32, fi as u32, t, zn));
                }
            }
        }
        // stable counting sort by pixel keeps faces in ascending order
        let mut counts = vec![0usize; npix + 1];
        for r in &raw {
            counts[r.0 as usize + 1] += 1;
        }
        for i in 0..npix {
            counts[i + 1] += counts[i];
        }
        let mut order = vec![0usize; raw.len()];
        let mut fill = counts.clone();
        for (k, r) in raw.iter().enumerate() {
            order[fill[r.0 as usize]] = k;
            fill[r.0 as usize] += 1;
        }

        let mut cache = Cache {
            pixel_start: counts,
            pairs: Vec::with_capacity(raw.len()),
            alpha: vec![0.0; npix],
            color: vec![[0.0; 3]; npix],
        };
        let mut image = vec![1.0; 3 * npix];
        let mut logits = Vec::new();
        let mut l1m = Vec::new();
        for pix in 0..npix {
            let (s, e) = (cache.pixel_start[pix], cache.pixel_start[pix + 1]);
            if s == e {
                continue;
            }
            logits.clear();
            l1m.clear();
            let mut log_uncovered = 0.0;
            for &k in &order[s..e] {
                let (_, _, t, zn) = raw[k];
                logits.push(log_sigmoid(t) + zn / gamma);
                let l = log_sigmoid(-t);
                l1m.push(l);
                log_uncovered += l;
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in logits.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            let mut c = [0.0; 3];
            for (q, &k) in order[s..e].iter().enumerate() {
                let (_, face, t, _) = raw[k];
                let w = logits[q] / z;
                let fc = &cv[3 * face as usize..3 * face as usize + 3];
                for ch in 0..3 {
                    c[ch] += w * fc[ch];
                }
                cache.pairs.push(Pair {
                    face,
                    t,
                    weight: w,
                    others_uncovered: (log_uncovered - l1m[q]).exp(),
                });
            }
            let alpha = -log_uncovered.exp_m1();
            cache.alpha[pix] = alpha;
            cache.color[pix] = c;
            for ch in 0..3 {
                image[ch * npix + pix] = alpha * c[ch] + (1.0 - alpha);
            }
        }
        let out = Tensor::new(&[3, res, res], image).expect("image shape");
        (
            Self {
                faces,
                resolution,
                sigma,
                gamma,
                cache,
            },
            out,
        )
    }
}

impl CustomOp for SoftRaster {
    fn name(&self) -> &str {
        "soft_raster"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let screen = inputs[0];
        let colors = inputs[1];
        let sv = screen.data();
        let cv = colors.data();
        let res = self.resolution;
        let npix = res * res;
        let g = grad.data();
        let inv_sigma = 1.0 / self.sigma;
        let mut g_screen = vec![0.0; sv.len()];
        let mut g_colors = vec![0.0; cv.len()];
        let cache = &self.cache;
        for pix in 0..npix {
            let (s, e) = (cache.pixel_start[pix], cache.pixel_start[pix + 1]);
            if s == e {
                continue;
            }
            let gp = [g[pix], g[npix + pix], g[2 * npix + pix]];
            let alpha = cache.alpha[pix];
            let c = cache.color[pix];
            let g_c = gp.map(|x| x * alpha);
            let g_alpha: f64 = (0..3).map(|ch| gp[ch] * (c[ch] - 1.0)).sum();
            let c_dot: f64 = (0..3).map(|ch| c[ch] * g_c[ch]).sum();
            let py = -pixel_center(pix / res, res);
            let px = pixel_center(pix % res, res);
            for pair in &cache.pairs[s..e] {
                let fi = pair.face as usize;
                let w = pair.weight;
                let fc = &cv[3 * fi..3 * fi + 3];
                for ch in 0..3 {
                    g_colors[3 * fi + ch] += w * g_c[ch];
                }
                let cj_dot: f64 = (0..3).map(|ch| fc[ch] * g_c[ch]).sum();
                let g_s = w * (cj_dot - c_dot);
                let d = 1.0 / (1.0 + (-pair.t).exp());
                let g_t = g_s * (1.0 - d) + g_alpha * pair.others_uncovered * d * (1.0 - d);
                let g_z = g_s / self.gamma;
                if g_t == 0.0 && g_z == 0.0 {
                    continue;
                }
                let f = self.faces[fi];
                let v: [[Dual; 2]; 3] = std::array::from_fn(|k| {
                    [Dual::var(sv[3 * f[k]], 2 * k), Dual::var(sv[3 * f[k] + 1], 2 * k + 1)]
                });
                let z: [Dual; 3] = std::array::from_fn(|k| Dual::var(sv[3 * f[k] + 2], 6 + k));
                let (t, zn) = pixel_terms(px, py, v, z, inv_sigma);
                for k in 0..3 {
                    let base = 3 * f[k];
                    g_screen[base] += g_t * t.d[2 * k] + g_z * zn.d[2 * k];
                    g_screen[base + 1] += g_t * t.d[2 * k + 1] + g_z * zn.d[2 * k + 1];
                    g_screen[base + 2] += g_t * t.d[6 + k] + g_z * zn.d[6 + k];
                }
            }
        }
        vec![
            Some(Tensor::new(screen.shape(), g_screen).expect("shape")),
            Some(Tensor::new(colors.shape(), g_colors).expect("shape")),
        ]
    }
}
