//! Z-buffered software rasterizer producing ground-truth PNCC and offset
//! images.
//!
//! Conventions: pixel `(u, v)` is sampled at its centre `(u + 0.5, v + 0.5)`;
//! edges follow the top-left fill rule; attributes are interpolated with
//! perspective-correct barycentrics; no anti-aliasing.

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::camera::{Camera, PinholeCamera};
use crate::image::{CorrespondenceMaps, FloatImage3};
use crate::model::{Coefficients, ModelError, MorphableModel};

/// Marks a pixel no triangle covers.
pub const NO_TRIANGLE: u32 = u32::MAX;
/// Visibility depth tolerance as a fraction of the model diameter.
pub const DEPTH_TOL_FRACTION: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("render is empty: no triangle covers any pixel (mesh behind the camera or out of frame)")]
    EmptyRender,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Shading {
    /// Perspective-correct barycentric interpolation.
    #[default]
    Interpolated,
    /// One value per triangle, the mean of its vertex attributes.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    pub shading: Shading,
    pub cull_backfaces: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            shading: Shading::Interpolated,
            cull_backfaces: true,
        }
    }
}

/// Per-pixel z-buffer, owning triangle and its barycentric weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Camera-space depth of the nearest surface, `f64::INFINITY` if empty.
    pub depth: Vec<f64>,
    pub triangle: Vec<u32>,
    /// Perspective-correct (3D) barycentric weights at the pixel centre.
    pub weights: Vec<[f64; 3]>,
}

impl Raster {
    pub fn covered(&self, i: usize) -> bool {
        self.triangle[i] != NO_TRIANGLE
    }

    pub fn coverage(&self) -> usize {
        self.triangle.iter().filter(|t| **t != NO_TRIANGLE).count()
    }
}

/// Pixel positions of `vertices`; `None` for pinhole points behind the camera.
pub fn project_vertices(camera: &Camera, vertices: &[Vector3<f64>]) -> Vec<Option<Vector2<f64>>> {
    vertices.iter().map(|x| camera.project(x)).collect()
}

fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Edges owning their boundary pixels, for a triangle wound so that its
/// interior has positive edge functions (y axis down).
fn is_top_left(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    (a.y == b.y && b.x > a.x) || b.y < a.y
}

/// Rasterizes world-space `vertices` into the camera's image.
///
/// Triangles with any vertex at or behind the camera plane are skipped, as
/// are back faces when `cull_backfaces` is set.
pub fn rasterize(
    vertices: &[Vector3<f64>],
    triangles: &[[u32; 3]],
    camera: &PinholeCamera,
    cull_backfaces: bool,
) -> Raster {
    let (w, h) = (camera.width(), camera.height());
    let mut raster = Raster {
        width: w,
        height: h,
        depth: vec![f64::INFINITY; w * h],
        triangle: vec![NO_TRIANGLE; w * h],
        weights: vec![[0.0; 3]; w * h],
    };
    let cam_pts: Vec<Vector3<f64>> = vertices.iter().map(|x| camera.to_camera_frame(x)).collect();

    for (t, tri) in triangles.iter().enumerate() {
        let mut ids = tri.map(|i| i as usize);
        let pc = ids.map(|i| cam_pts[i]);
        if pc.iter().any(|p| p.z <= 0.0) {
            continue;
        }
        if cull_backfaces {
            let normal = (pc[1] - pc[0]).cross(&(pc[2] - pc[0]));
            if normal.dot(&pc[0]) >= 0.0 {
                continue;
            }
        }
        let mut s = pc.map(|p| camera.project_camera_frame(&p));
        let mut area = edge(&s[0], &s[1], &s[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            s.swap(1, 2);
            ids.swap(1, 2);
            area = -area;
        }
        let inv_z = ids.map(|i| 1.0 / cam_pts[i].z);

        let min_x = s.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let max_x = s.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = s.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let max_y = s.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let u0 = (min_x - 0.5).ceil().max(0.0);
        let u1 = (max_x - 0.5).floor().min(w as f64 - 1.0);
        let v0 = (min_y - 0.5).ceil().max(0.0);
        let v1 = (max_y - 0.5).floor().min(h as f64 - 1.0);
        if u0 > u1 || v0 > v1 {
            continue;
        }
        let owns = [
            is_top_left(&s[1], &s[2]),
            is_top_left(&s[2], &s[0]),
            is_top_left(&s[0], &s[1]),
        ];

        for v in v0 as usize..=v1 as usize {
            for u in u0 as usize..=u1 as usize {
                let p = Vector2::new(u as f64 + 0.5, v as f64 + 0.5);
                let e = [edge(&s[1], &s[2], &p), edge(&s[2], &s[0], &p), edge(&s[0], &s[1], &p)];
                let inside = e.iter().zip(&owns).all(|(ei, own)| *ei > 0.0 || (*ei == 0.0 && *own));
                if !inside {
                    continue;
                }
                let screen = e.map(|ei| ei / area);
                let recip = screen[0] * inv_z[0] + screen[1] * inv_z[1] + screen[2] * inv_z[2];
                let depth = 1.0 / recip;
                let i = v * w + u;
                if depth < raster.depth[i] {
                    // Weights in the triangle's original vertex order.
                    let mut weights = [0.0; 3];
                    for k in 0..3 {
                        let slot = tri.iter().position(|&x| x as usize == ids[k]).unwrap();
                        weights[slot] = screen[k] * inv_z[k] * depth;
                    }
                    raster.depth[i] = depth;
                    raster.triangle[i] = t as u32;
                    raster.weights[i] = weights;
                }
            }
        }
    }
    raster
}

/// Fills an image from per-vertex attributes; uncovered pixels stay zero.
pub fn shade(raster: &Raster, triangles: &[[u32; 3]], attributes: &[Vector3<f64>], shading: Shading) -> FloatImage3 {
    let mut img = FloatImage3::zeros(raster.width, raster.height);
    for (i, px) in img.pixels_mut().iter_mut().enumerate() {
        let t = raster.triangle[i];
        if t == NO_TRIANGLE {
            continue;
        }
        let tri = triangles[t as usize];
        let weights = match shading {
            Shading::Interpolated => raster.weights[i],
            Shading::Flat => [1.0 / 3.0; 3],
        };
        let value: Vector3<f64> = (0..3).map(|k| attributes[tri[k] as usize] * weights[k]).sum();
        *px = [value.x as f32, value.y as f32, value.z as f32];
    }
    img
}

/// Rendered maps together with the raster they were shaded from.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub maps: CorrespondenceMaps,
    pub raster: Raster,
    /// Synthesized vertex positions, model units.
    pub vertices: Vec<Vector3<f64>>,
}

/// Renders PNCC and offset images at the camera's image size.
pub fn render(
    model: &MorphableModel,
    coeffs: &Coefficients,
    camera: &PinholeCamera,
) -> Result<CorrespondenceMaps, RasterError> {
    Ok(render_with(model, coeffs, camera, &RenderOptions::default())?.maps)
}

pub fn render_with(
    model: &MorphableModel,
    coeffs: &Coefficients,
    camera: &PinholeCamera,
    options: &RenderOptions,
) -> Result<Rendered, RasterError> {
    let vertices = model.synthesize(coeffs)?;
    let tris = model.topology().triangles();
    let raster = rasterize(&vertices, tris, camera, options.cull_backfaces);
    if raster.coverage() == 0 {
        return Err(RasterError::EmptyRender);
    }
    let codes = model.ncc_codes();
    let offsets: Vec<Vector3<f64>> = vertices.iter().zip(model.mean_vertices()).map(|(x, m)| x - m).collect();
    let pncc = shade(&raster, tris, &codes, options.shading);
    let offset = shade(&raster, tris, &offsets, options.shading);
    let maps = CorrespondenceMaps::new(pncc, offset).expect("same raster size");
    Ok(Rendered { maps, raster, vertices })
}

/// Per-vertex visibility of the synthesized mesh.
pub fn visibility(
    model: &MorphableModel,
    coeffs: &Coefficients,
    camera: &PinholeCamera,
) -> Result<Vec<bool>, RasterError> {
    let vertices = model.synthesize(coeffs)?;
    let tris = model.topology().triangles();
    let raster = rasterize(&vertices, tris, camera, true);
    Ok(mesh_visibility(
        &vertices,
        tris,
        camera,
        &raster,
        DEPTH_TOL_FRACTION * model.diameter(),
    ))
}

/// A vertex is visible when it projects inside the image and the surface
/// owning its pixel is within `depth_tol` of the vertex depth.
///
/// The owning triangle's depth is evaluated along the ray through the
/// vertex's exact projection rather than at the pixel centre, so slanted
/// surfaces do not hide their own vertices. A vertex whose pixel nothing
/// covers (silhouette and sliver corners) is visible when one of its own
/// triangles faces the camera.
pub fn mesh_visibility(
    vertices: &[Vector3<f64>],
    triangles: &[[u32; 3]],
    camera: &PinholeCamera,
    raster: &Raster,
    depth_tol: f64,
) -> Vec<bool> {
    let c = camera.principal_point();
    let (w, h) = (raster.width, raster.height);
    let mut front_facing = vec![false; vertices.len()];
    for tri in triangles {
        let q = tri.map(|k| camera.to_camera_frame(&vertices[k as usize]));
        if (q[1] - q[0]).cross(&(q[2] - q[0])).dot(&q[0]) < 0.0 {
            for k in tri {
                front_facing[*k as usize] = true;
            }
        }
    }
    vertices
        .iter()
        .enumerate()
        .map(|(j, x)| {
            let pc = camera.to_camera_frame(x);
            if pc.z <= 0.0 {
                return false;
            }
            let p = camera.project_camera_frame(&pc);
            if !(p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64) {
                return false;
            }
            let ray = Vector3::new((p.x - c.x) / camera.focal(), (p.y - c.y) / camera.focal(), 1.0);
            let unoccluded_by = |i: usize| -> bool {
                let tri = triangles[raster.triangle[i] as usize];
                if tri.iter().any(|&k| k as usize == j) {
                    return true;
                }
                let q = tri.map(|k| camera.to_camera_frame(&vertices[k as usize]));
                let normal = (q[1] - q[0]).cross(&(q[2] - q[0]));
                let denom = normal.dot(&ray);
                let surface = if denom.abs() > 1e-12 * normal.norm() {
                    normal.dot(&q[0]) / denom
                } else {
                    raster.depth[i]
                };
                pc.z <= surface + depth_tol
            };
            let centre = (p.y as usize) * raster.width + p.x as usize;
            if raster.covered(centre) {
                unoccluded_by(centre)
            } else {
                front_facing[j]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_synthetic_model;
    use nalgebra::Matrix3;

    fn camera(size: usize) -> PinholeCamera {
        PinholeCamera::new(size as f64, Matrix3::identity(), Vector3::zeros(), size, size).unwrap()
    }

    /// Triangle facing the camera (which sits at the origin looking +z).
    fn facing_triangle(z: f64, half: f64) -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(-half, -half, z),
            Vector3::new(-half, half, z),
            Vector3::new(half, -half, z),
        ]
    }

    #[test]
    fn constant_attribute_is_exact() {
        let cam = camera(32);
        let verts = facing_triangle(2.0, 0.8);
        let raster = rasterize(&verts, &[[0, 1, 2]], &cam, true);
        assert!(raster.coverage() > 0);
        let c = Vector3::new(0.3, 0.7, 0.55);
        let img = shade(&raster, &[[0, 1, 2]], &[c; 3], Shading::Interpolated);
        for i in 0..32 * 32 {
            if raster.covered(i) {
                assert_eq!(img.pixels()[i], [0.3f32, 0.7, 0.55]);
            }
        }
    }

    #[test]
    fn nearer_triangle_wins() {
        let cam = camera(32);
        let mut verts = facing_triangle(1.0, 0.4);
        verts.extend(facing_triangle(2.0, 0.8));
        let tris = [[3, 4, 5], [0, 1, 2]];
        let raster = rasterize(&verts, &tris, &cam, true);
        let attrs: Vec<Vector3<f64>> = (0..6).map(|k| Vector3::repeat(if k < 3 { 1.0 } else { 2.0 })).collect();
        let img = shade(&raster, &tris, &attrs, Shading::Interpolated);
        let near_only = rasterize(&verts[..3], &[[0, 1, 2]], &cam, true);
        let mut overlap = 0;
        for i in 0..32 * 32 {
            if near_only.covered(i) {
                overlap += 1;
                assert_eq!(raster.triangle[i], 1);
                assert_eq!(img.pixels()[i], [1.0f32; 3]);
            }
        }
        assert!(overlap > 0);
    }

    #[test]
    fn back_faces_are_culled() {
        let cam = camera(16);
        let verts = facing_triangle(2.0, 0.8);
        assert!(rasterize(&verts, &[[0, 1, 2]], &cam, true).coverage() > 0);
        assert_eq!(rasterize(&verts, &[[0, 2, 1]], &cam, true).coverage(), 0);
        assert!(rasterize(&verts, &[[0, 2, 1]], &cam, false).coverage() > 0);
    }

    #[test]
    fn shared_edge_is_covered_once() {
        // A square split along its diagonal through pixel centres.
        let cam = camera(16);
        let z = 1.0;
        let verts = vec![
            Vector3::new(-0.5, -0.5, z),
            Vector3::new(0.5, -0.5, z),
            Vector3::new(0.5, 0.5, z),
            Vector3::new(-0.5, 0.5, z),
        ];
        let tris = [[0, 3, 2], [0, 2, 1]];
        let both = rasterize(&verts, &tris, &cam, true);
        let a = rasterize(&verts, &tris[..1], &cam, true).coverage();
        let b = rasterize(&verts, &tris[1..], &cam, true).coverage();
        assert_eq!(a + b, both.coverage());
        assert_eq!(both.coverage(), 16 * 16);
    }

    #[test]
    fn coverage_ignores_attributes() {
        let m = generate_synthetic_model(1, 200, 3, 2).unwrap();
        let cam = PinholeCamera::facing(0.2, 0.1, 600.0, 300.0, 64, 64).unwrap();
        let r = render_with(&m, &Coefficients::zeros(3, 2), &cam, &RenderOptions::default()).unwrap();
        let tris = m.topology().triangles();
        let a = shade(
            &r.raster,
            tris,
            &vec![Vector3::repeat(0.5); r.vertices.len()],
            Shading::Interpolated,
        );
        let b = shade(&r.raster, tris, &m.ncc_codes(), Shading::Flat);
        let mask = |img: &FloatImage3| img.pixels().iter().map(|p| p[0] != 0.0).collect::<Vec<_>>();
        assert_eq!(mask(&a), mask(&b));
    }

    #[test]
    fn fully_behind_is_empty() {
        let m = generate_synthetic_model(1, 100, 2, 1).unwrap();
        let cam = PinholeCamera::facing(0.0, 0.0, -500.0, 300.0, 32, 32).unwrap();
        assert!(matches!(
            render(&m, &Coefficients::zeros(2, 1), &cam),
            Err(RasterError::EmptyRender)
        ));
    }

    #[test]
    fn single_triangle_vertices_visible() {
        let cam = camera(32);
        let verts = facing_triangle(1.0, 0.45);
        let raster = rasterize(&verts, &[[0, 1, 2]], &cam, true);
        let vis = mesh_visibility(&verts, &[[0, 1, 2]], &cam, &raster, 1e-6);
        assert_eq!(vis, vec![true; 3]);
    }

    #[test]
    fn out_of_image_vertex_is_invisible() {
        let cam = camera(32);
        let mut verts = facing_triangle(1.0, 0.45);
        verts[2].x = 5.0;
        let raster = rasterize(&verts, &[[0, 1, 2]], &cam, true);
        let vis = mesh_visibility(&verts, &[[0, 1, 2]], &cam, &raster, 1e-6);
        assert!(!vis[2]);
    }
}
