//! Sparse landmarks as fixed mesh vertices: selection from annotated
//! training frames and prediction on new fits.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{init_pinhole_from_affine, Camera, PinholeCamera};
use crate::fitter::FitResult;
use crate::model::{ModelError, MorphableModel};
use crate::raster::{mesh_visibility, rasterize, DEPTH_TOL_FRACTION};

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("no training frames")]
    Empty,
    #[error("{0} fits but {1} observation frames")]
    Misaligned(usize, usize),
    #[error("landmark {name:?}: vertex {vertex} out of range for {vertex_count} vertices")]
    VertexOutOfRange {
        name: String,
        vertex: usize,
        vertex_count: usize,
    },
    #[error("duplicate landmark name {0:?}")]
    DuplicateName(String),
    #[error("unknown landmark {0:?}")]
    UnknownLandmark(String),
    #[error("frame {frame} lacks landmark {name:?}")]
    MissingPoint { frame: usize, name: String },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Named landmark vertices, optionally designating the two outer eye
/// corners used to normalize 2D errors.
///
/// Text form: one `name vertex_id` line per landmark, an optional
/// `@interocular left right` line, `#` comments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandmarkMap {
    names: Vec<String>,
    vertex_ids: Vec<usize>,
    interocular: Option<(usize, usize)>,
}

impl LandmarkMap {
    pub fn new(names: Vec<String>, vertex_ids: Vec<usize>) -> Result<Self, LandmarkError> {
        if names.len() != vertex_ids.len() {
            return Err(LandmarkError::Misaligned(names.len(), vertex_ids.len()));
        }
        let mut seen = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if seen.insert(n.as_str(), i).is_some() {
                return Err(LandmarkError::DuplicateName(n.clone()));
            }
        }
        Ok(Self {
            names,
            vertex_ids,
            interocular: None,
        })
    }

    /// Designates the landmarks whose distance normalizes 2D errors.
    pub fn with_interocular(mut self, left: &str, right: &str) -> Result<Self, LandmarkError> {
        self.interocular = Some((self.require(left)?, self.require(right)?));
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vertex_ids(&self) -> &[usize] {
        &self.vertex_ids
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require(&self, name: &str) -> Result<usize, LandmarkError> {
        self.index_of(name)
            .ok_or_else(|| LandmarkError::UnknownLandmark(name.to_string()))
    }

    /// Indices of the interocular pair.
    pub fn interocular(&self) -> Option<(usize, usize)> {
        self.interocular
    }

    pub fn check_vertices(&self, vertex_count: usize) -> Result<(), LandmarkError> {
        for (name, &vertex) in self.names.iter().zip(&self.vertex_ids) {
            if vertex >= vertex_count {
                return Err(LandmarkError::VertexOutOfRange {
                    name: name.clone(),
                    vertex,
                    vertex_count,
                });
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, LandmarkError> {
        let mut names = Vec::new();
        let mut ids = Vec::new();
        let mut interocular = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| LandmarkError::Format {
                line: i + 1,
                msg: msg.to_string(),
            };
            match fields.as_slice() {
                [] => {}
                [first, ..] if first.starts_with('#') => {}
                ["@interocular", left, right] => interocular = Some((left.to_string(), right.to_string())),
                [name, id] if !name.starts_with('@') => {
                    names.push(name.to_string());
                    ids.push(id.parse().map_err(|_| bad("vertex id is not a non-negative integer"))?);
                }
                _ => return Err(bad("expected `name vertex_id` or `@interocular left right`")),
            }
        }
        let map = Self::new(names, ids)?;
        match interocular {
            Some((l, r)) => map.with_interocular(&l, &r),
            None => Ok(map),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (n, id) in self.names.iter().zip(&self.vertex_ids) {
            writeln!(w, "{n} {id}")?;
        }
        if let Some((l, r)) = self.interocular {
            writeln!(w, "@interocular {} {}", self.names[l], self.names[r])?;
        }
        Ok(())
    }
}

/// Ground-truth landmarks of one frame, in the order of the owning set's
/// names.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkObservation {
    pub frame: usize,
    pub points: Vec<Vector2<f64>>,
    pub visible: Vec<bool>,
}

/// Observations of a sequence, one per annotated frame, ordered by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub names: Vec<String>,
    pub frames: Vec<LandmarkObservation>,
}

impl ObservationSet {
    /// Parses `frame landmark_name u v visible` lines. Landmark order is the
    /// order of first appearance; every frame must list every landmark.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, LandmarkError> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut rows: BTreeMap<usize, Vec<(usize, Vector2<f64>, bool)>> = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| LandmarkError::Format {
                line: i + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = t.split_whitespace().collect();
            let [frame, name, u, v, vis] = f.as_slice() else {
                return Err(bad("expected `frame landmark_name u v visible`"));
            };
            let frame: usize = frame.parse().map_err(|_| bad("bad frame index"))?;
            let u: f64 = u.parse().map_err(|_| bad("bad u"))?;
            let v: f64 = v.parse().map_err(|_| bad("bad v"))?;
            let visible = match *vis {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(bad("visible must be 0 or 1")),
            };
            if visible && !(u.is_finite() && v.is_finite()) {
                return Err(bad("visible landmark with non-finite position"));
            }
            let k = *index.entry(name.to_string()).or_insert_with(|| {
                names.push(name.to_string());
                names.len() - 1
            });
            rows.entry(frame).or_default().push((k, Vector2::new(u, v), visible));
        }
        let mut frames = Vec::with_capacity(rows.len());
        for (frame, entries) in rows {
            let mut points = vec![None; names.len()];
            for (k, p, vis) in entries {
                if points[k].replace((p, vis)).is_some() {
                    return Err(LandmarkError::DuplicateName(format!("{} in frame {frame}", names[k])));
                }
            }
            let mut obs = LandmarkObservation {
                frame,
                points: Vec::with_capacity(names.len()),
                visible: Vec::with_capacity(names.len()),
            };
            for (k, p) in points.into_iter().enumerate() {
                let (p, vis) = p.ok_or_else(|| LandmarkError::MissingPoint {
                    frame,
                    name: names[k].clone(),
                })?;
                obs.points.push(p);
                obs.visible.push(vis);
            }
            frames.push(obs);
        }
        Ok(Self { names, frames })
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for obs in &self.frames {
            for (k, name) in self.names.iter().enumerate() {
                let p = obs.points[k];
                writeln!(w, "{} {name} {} {} {}", obs.frame, p.x, p.y, u8::from(obs.visible[k]))?;
            }
        }
        Ok(())
    }

    /// Reorders landmarks to follow `names`.
    pub fn reordered(&self, names: &[String]) -> Result<Self, LandmarkError> {
        let perm = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| LandmarkError::UnknownLandmark(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            names: names.to_vec(),
            frames: self
                .frames
                .iter()
                .map(|o| LandmarkObservation {
                    frame: o.frame,
                    points: perm.iter().map(|&k| o.points[k]).collect(),
                    visible: perm.iter().map(|&k| o.visible[k]).collect(),
                })
                .collect(),
        })
    }
}

/// Which training frames count toward a landmark's mean error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMode {
    /// Every frame, occluded landmarks included.
    #[default]
    AllFrames,
    /// Only frames where the landmark is marked visible; a landmark never
    /// visible falls back to all frames.
    VisibleOnly,
}

/// Per landmark, the vertex with the lowest mean pixel distance between its
/// projection under each frame's fit and the annotated point. Ties go to
/// the lowest vertex index.
#[allow(clippy::needless_range_loop)]
pub fn select_landmark_vertices(
    fits: &[FitResult],
    observations: &[LandmarkObservation],
    names: &[String],
    model: &MorphableModel,
    mode: SelectionMode,
) -> Result<LandmarkMap, LandmarkError> {
    if fits.is_empty() {
        return Err(LandmarkError::Empty);
    }
    if fits.len() != observations.len() {
        return Err(LandmarkError::Misaligned(fits.len(), observations.len()));
    }
    for obs in observations {
        if obs.points.len() != names.len() || obs.visible.len() != names.len() {
            return Err(LandmarkError::Misaligned(names.len(), obs.points.len()));
        }
    }
    // Fixed summation order makes the result independent of input order.
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by_key(|&i| observations[i].frame);

    let projections = order
        .iter()
        .map(|&i| {
            let x = model.synthesize(&fits[i].coeffs)?;
            Ok(x.iter().map(|p| project_total(&fits[i].camera, p)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let obs: Vec<&LandmarkObservation> = order.iter().map(|&i| &observations[i]).collect();

    let vertex_count = model.vertex_count();
    let ids: Vec<usize> = (0..names.len())
        .into_par_iter()
        .map(|l| {
            let mut frames: Vec<usize> = match mode {
                SelectionMode::AllFrames => Vec::new(),
                SelectionMode::VisibleOnly => (0..obs.len()).filter(|&f| obs[f].visible[l]).collect(),
            };
            if frames.is_empty() {
                frames = (0..obs.len()).collect();
            }
            let mut best = (0, f64::INFINITY);
            for j in 0..vertex_count {
                let total: f64 = frames
                    .iter()
                    .map(|&f| (projections[f][j] - obs[f].points[l]).norm())
                    .sum();
                let mean = total / frames.len() as f64;
                if mean < best.1 {
                    best = (j, mean);
                }
            }
            best.0
        })
        .collect();
    LandmarkMap::new(names.to_vec(), ids)
}

/// Projection defined for every point off the camera plane; points behind a
/// pinhole camera are mirrored through the centre like the formula implies.
fn project_total(camera: &Camera, x: &Vector3<f64>) -> Vector2<f64> {
    match camera {
        Camera::Affine(a) => a.project(x),
        Camera::Pinhole(p) => p.project_camera_frame(&p.to_camera_frame(x)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedLandmark {
    pub pixel: Vector2<f64>,
    /// Synthesized vertex position, model units.
    pub point: Vector3<f64>,
    pub visible: bool,
}

/// 2D and 3D positions of every landmark under a fit, occluded ones
/// included and flagged.
pub fn predict_landmarks(
    fit: &FitResult,
    map: &LandmarkMap,
    model: &MorphableModel,
) -> Result<Vec<PredictedLandmark>, LandmarkError> {
    map.check_vertices(model.vertex_count())?;
    let x = model.synthesize(&fit.coeffs)?;
    let visible = fit_visibility(fit, &x, model);
    Ok(map
        .vertex_ids()
        .iter()
        .map(|&j| PredictedLandmark {
            pixel: project_total(&fit.camera, &x[j]),
            point: x[j],
            visible: visible.as_ref().is_some_and(|v| v[j]),
        })
        .collect())
}

/// Per-vertex visibility under the fit's camera. Affine fits are judged
/// through their weak-perspective pinhole counterpart.
fn fit_visibility(fit: &FitResult, x: &[Vector3<f64>], model: &MorphableModel) -> Option<Vec<bool>> {
    let (w, h) = fit.image_size;
    let cam: PinholeCamera = match &fit.camera {
        Camera::Pinhole(p) => *p,
        Camera::Affine(a) => init_pinhole_from_affine(a, w, h).ok()?,
    };
    let tris = model.topology().triangles();
    let raster = rasterize(x, tris, &cam, true);
    Some(mesh_visibility(
        x,
        tris,
        &cam,
        &raster,
        DEPTH_TOL_FRACTION * model.diameter(),
    ))
}

/// Writes predictions as `name u v x y z visible` lines.
pub fn write_predictions<W: Write>(
    mut w: W,
    map: &LandmarkMap,
    predictions: &[PredictedLandmark],
) -> std::io::Result<()> {
    for (name, p) in map.names().iter().zip(predictions) {
        writeln!(
            w,
            "{name} {} {} {} {} {} {}",
            p.pixel.x,
            p.pixel.y,
            p.point.x,
            p.point.y,
            p.point.z,
            u8::from(p.visible)
        )?;
    }
    Ok(())
}
