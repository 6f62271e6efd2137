//! Differentiable normal-shaded rendering.
//!
//! Face colour is `(n + 1)/2` for the camera-space unit face normal `n`, so a
//! face looking straight at the camera is `(0.5, 0.5, 1)`. Back faces keep
//! their own normal and therefore shade with `z < 0.5`.

mod camera;
mod raster;

use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::mesh::{face_normals_var, TriMesh};

pub use camera::{Camera, RenderRig, RigConfig};
pub use raster::{SoftRaster, COVERAGE_CUTOFF};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub resolution: usize,
    /// Edge sharpness, in squared ndc units.
    pub sigma: f64,
    /// Depth softmax temperature, in normalized inverse depth.
    pub gamma: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            resolution: 64,
            sigma: 1e-4,
            gamma: 1e-4,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution > 4096 {
            return Err(Error::Config(format!("resolution {} out of range", self.resolution)));
        }
        if !(self.sigma > 0.0 && self.gamma > 0.0) {
            return Err(Error::Config("sigma and gamma must be positive".into()));
        }
        Ok(())
    }
}

/// `[3, R, R]` channel-major image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Tensor,
}

impl Image {
    pub fn new(pixels: Tensor) -> Result<Self> {
        let s = pixels.shape();
        if s.len() != 3 || s[0] != 3 || s[1] != s[2] {
            return Err(Error::Shape(format!("image must be [3, R, R], got {s:?}")));
        }
        Ok(Self { pixels })
    }

    pub fn resolution(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_tensor(self) -> Tensor {
        self.pixels
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        let r = self.resolution();
        self.pixels.data()[channel * r * r + row * r + col]
    }

    /// 8-bit RGB, `round(255·x)` after clamping.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let r = self.resolution();
        let d = self.pixels.data();
        let mut out = Vec::with_capacity(3 * r * r);
        for p in 0..r * r {
            for ch in 0..3 {
                out.push((d[ch * r * r + p].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let r = self.resolution() as u32;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), r, r);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        w.write_image_data(&self.to_rgb8()).map_err(|e| Error::Png(e.to_string()))?;
        w.finish().map_err(|e| Error::Png(e.to_string()))
    }
}

/// Renders `vertices` (`[V, 3]`) under `faces`' connectivity; returns `[3, R, R]`.
pub fn render_var<'g>(faces: &TriMesh, vertices: Var<'g>, cam: &Camera, settings: &RenderSettings) -> Var<'g> {
    let g = vertices.graph();
    let [r, u, b] = cam.basis();
    let rot = g.constant(
        Tensor::new(&[3, 3], (0..3).flat_map(|i| [r[i], u[i], b[i]]).collect()).expect("3x3"),
    );
    let eye = g.constant(Tensor::vector(cam.eye.to_vec()));
    let pc = (vertices - eye).matmul(rot);
    let depth = -pc.narrow(1, 2, 1);
    let f = cam.focal();
    let xy = pc.narrow(1, 0, 2).scale(f) / depth;
    let zn = (-depth).add_scalar(cam.far).scale(1.0 / (cam.far - cam.near));
    let screen = concat(&[xy, zn], 1);
    let colors = face_normals_var(faces, vertices).matmul(rot).add_scalar(1.0).scale(0.5);
    let faces_rc: Rc<[[usize; 3]]> = Rc::from(faces.faces());
    let (op, img) = SoftRaster::forward(
        faces_rc,
        &screen.value(),
        &colors.value(),
        settings.resolution,
        settings.sigma,
        settings.gamma,
    );
    g.custom(Box::new(op), &[screen, colors], img)
}

/// Renders a mesh from one camera.
pub fn render(mesh: &TriMesh, cam: &Camera, settings: &RenderSettings) -> Result<Image> {
    if mesh.num_faces() == 0 {
        return Err(Error::Mesh("cannot render a mesh without faces".into()));
    }
    let g = Graph::new();
    let v = g.constant(mesh.vertex_tensor());
    Image::new(render_var(mesh, v, cam, settings).detach())
}

/// One image per rig camera, tagged `(level, view)` (1-based).
pub fn render_all(mesh: &TriMesh, rig: &RenderRig, settings: &RenderSettings) -> Result<Vec<(usize, usize, Image)>> {
    rig.labels()
        .into_iter()
        .zip(rig.cameras())
        .map(|((l, v), cam)| Ok((l, v, render(mesh, cam, settings)?)))
        .collect()
}

/// `L{level}_V{view}.png`.
pub fn view_file_name(level: usize, view: usize) -> String {
    format!("L{level}_V{view}.png")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morph::builtin_head;

    fn front_cam() -> Camera {
        Camera::new([0.0, 0.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 60.0, 0.01, 100.0).unwrap()
    }

    #[test]
    fn frontal_triangle_shades_half_half_one() {
        let tri = TriMesh::new(
            vec![[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.2, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let img = render(&tri, &front_cam(), &RenderSettings::default()).unwrap();
        let c = img.resolution() / 2;
        for (ch, want) in [0.5, 0.5, 1.0].into_iter().enumerate() {
            assert!((img.get(ch, c, c) - want).abs() < 1e-3);
            assert!((img.get(ch, 0, 0) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn default_rig_has_ten_views() {
        let head = builtin_head();
        let rig = RenderRig::build(&head, &RigConfig::default()).unwrap();
        assert_eq!(rig.levels.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3]);
        assert_eq!(rig.labels()[4], (2, 1));
        assert_eq!(rig.levels[0][2].look_at, head.landmark_centroid("nose").unwrap());
    }

    #[test]
    fn png_round_trip_size() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(Tensor::full(&[3, 8, 8], 0.5)).unwrap();
        let p = dir.path().join(view_file_name(1, 2));
        img.write_png(&p).unwrap();
        let dec = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&p).unwrap()));
        let reader = dec.read_info().unwrap();
        assert_eq!(reader.info().width, 8);
        assert_eq!(p.file_name().unwrap(), "L1_V2.png");
    }
}
