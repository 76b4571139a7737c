//! Sequence tracking: bounding-box gap filling, per-frame fits on cropped
//! maps, landmark trajectories with temporal smoothing, and the 2D/3D
//! error metrics with cumulative error distribution output.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::{SVector, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitter::{fit_image, FitOptions, FitResult, PixelFrame};
use crate::image::CorrespondenceMaps;
use crate::landmarks::{predict_landmarks, LandmarkError, LandmarkMap, LandmarkObservation};
use crate::model::MorphableModel;

/// Default crop margin on each side, as a fraction of the box size.
pub const DEFAULT_CROP_MARGIN: f64 = 0.2;
/// Default moving-average window, in frames.
pub const DEFAULT_SMOOTHING_WINDOW: usize = 3;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("no detections in any frame")]
    NoDetections,
    #[error("{what}: expected {expected}, got {got}")]
    Misaligned {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("smoothing window must be odd and at least 1, got {0}")]
    InvalidWindow(usize),
    #[error("bounding box must have positive size, got {0:?}")]
    InvalidBox(BBox),
    #[error("every frame failed to fit; first failure: {0}")]
    AllFramesFailed(String),
    #[error("no landmark map interocular pair to normalize 2D errors")]
    NoInterocular,
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Landmark(#[from] LandmarkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, TrackError> {
        let b = Self { x, y, w, h };
        if !(w > 0.0 && h > 0.0) || ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(TrackError::InvalidBox(b));
        }
        Ok(b)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = ((self.x + self.w).min(other.x + other.w) - self.x.max(other.x)).max(0.0);
        let iy = ((self.y + self.h).min(other.y + other.h) - self.y.max(other.y)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Per-coordinate interpolation, `t = 0` giving `self`.
    pub fn lerp(&self, other: &BBox, t: f64) -> BBox {
        let l = |a: f64, b: f64| a + (b - a) * t;
        BBox {
            x: l(self.x, other.x),
            y: l(self.y, other.y),
            w: l(self.w, other.w),
            h: l(self.h, other.h),
        }
    }

    /// The box grown by `margin` of its size on every side.
    pub fn expanded(&self, margin: f64) -> BBox {
        BBox {
            x: self.x - margin * self.w,
            y: self.y - margin * self.h,
            w: self.w * (1.0 + 2.0 * margin),
            h: self.h * (1.0 + 2.0 * margin),
        }
    }
}

/// Linear interpolation between the nearest defined neighbours of frame
/// `i`; frames before the first or after the last defined one take its
/// value. `None` only when nothing is defined.
fn interpolate_at<T: Clone>(values: &[Option<T>], i: usize, lerp: impl Fn(&T, &T, f64) -> T) -> Option<T> {
    if let Some(v) = &values[i] {
        return Some(v.clone());
    }
    let prev = (0..i).rev().find(|&k| values[k].is_some());
    let next = (i + 1..values.len()).find(|&k| values[k].is_some());
    match (prev, next) {
        (Some(p), Some(n)) => {
            let t = (i - p) as f64 / (n - p) as f64;
            Some(lerp(values[p].as_ref()?, values[n].as_ref()?, t))
        }
        (Some(k), None) | (None, Some(k)) => values[k].clone(),
        (None, None) => None,
    }
}

fn fill_gaps<T: Clone>(values: &[Option<T>], lerp: impl Fn(&T, &T, f64) -> T) -> Option<Vec<T>> {
    (0..values.len()).map(|i| interpolate_at(values, i, &lerp)).collect()
}

/// One box per frame from per-frame detection lists.
///
/// Single detections are kept. A frame with several keeps the one with the
/// highest IoU against the box interpolated from the nearest resolved
/// frames (earlier frames resolve first; ties keep file order). Frames
/// without detections are interpolated per coordinate, with the nearest box
/// held at the sequence ends. If no frame has exactly one detection, the
/// first listed detection of the earliest detected frame seeds the process.
pub fn resolve_bboxes(detections: &[Vec<BBox>]) -> Result<Vec<BBox>, TrackError> {
    let mut resolved: Vec<Option<BBox>> = detections
        .iter()
        .map(|d| if d.len() == 1 { Some(d[0]) } else { None })
        .collect();
    if resolved.iter().all(Option::is_none) {
        let first = detections
            .iter()
            .position(|d| !d.is_empty())
            .ok_or(TrackError::NoDetections)?;
        resolved[first] = Some(detections[first][0]);
    }
    for (i, dets) in detections.iter().enumerate() {
        if dets.len() < 2 || resolved[i].is_some() {
            continue;
        }
        let reference = interpolate_at(&resolved, i, BBox::lerp).expect("at least one frame resolved");
        let mut best = (0, f64::NEG_INFINITY);
        for (k, d) in dets.iter().enumerate() {
            let iou = d.iou(&reference);
            if iou > best.1 {
                best = (k, iou);
            }
        }
        resolved[i] = Some(dets[best.0]);
    }
    Ok(fill_gaps(&resolved, BBox::lerp).expect("at least one frame resolved"))
}

/// Centred moving average over `window` frames; frames near the ends
/// average the in-window frames that exist.
pub fn smooth_trajectory<const D: usize>(
    points: &[SVector<f64, D>],
    window: usize,
) -> Result<Vec<SVector<f64, D>>, TrackError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(TrackError::InvalidWindow(window));
    }
    let half = window / 2;
    Ok((0..points.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(points.len() - 1);
            let sum: SVector<f64, D> = points[lo..=hi].iter().sum();
            sum / (hi - lo + 1) as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOptions {
    pub fit: FitOptions,
    /// Crop margin on every side, as a fraction of the box size.
    pub crop_margin: f64,
    /// Moving-average window; 1 disables smoothing.
    pub window: usize,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            crop_margin: DEFAULT_CROP_MARGIN,
            window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedSequence {
    pub detections: Vec<Vec<BBox>>,
    pub boxes: Vec<BBox>,
    /// `None` for frames whose fit failed.
    pub fits: Vec<Option<FitResult>>,
    pub failures: Vec<Option<String>>,
    /// Frame-major `F × L` landmark pixels before smoothing; failed frames
    /// are interpolated.
    pub raw_2d: Vec<Vec<Vector2<f64>>>,
    pub raw_3d: Vec<Vec<Vector3<f64>>>,
    pub smoothed_2d: Vec<Vec<Vector2<f64>>>,
    pub smoothed_3d: Vec<Vec<Vector3<f64>>>,
    pub visible: Vec<Vec<bool>>,
}

impl TrackedSequence {
    pub fn frame_count(&self) -> usize {
        self.boxes.len()
    }

    /// Writes `frame name u v x y z visible` lines of the smoothed tracks.
    pub fn write_landmarks<W: Write>(&self, mut w: W, map: &LandmarkMap) -> std::io::Result<()> {
        for (f, (p2, p3)) in self.smoothed_2d.iter().zip(&self.smoothed_3d).enumerate() {
            for (l, name) in map.names().iter().enumerate() {
                writeln!(
                    w,
                    "{f} {name} {} {} {} {} {} {}",
                    p2[l].x,
                    p2[l].y,
                    p3[l].x,
                    p3[l].y,
                    p3[l].z,
                    u8::from(self.visible[f][l])
                )?;
            }
        }
        Ok(())
    }
}

/// Landmark tracks read back from `frame name u v x y z visible` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTracks {
    pub points_2d: Vec<Vec<Vector2<f64>>>,
    pub points_3d: Vec<Vec<Vector3<f64>>>,
    pub visible: Vec<Vec<bool>>,
}

/// Parses the output of [`TrackedSequence::write_landmarks`], ordered by
/// `names`. Frames must run from 0 without gaps.
pub fn read_tracks<R: BufRead>(reader: R, names: &[String]) -> Result<LandmarkTracks, TrackError> {
    type Row = Option<(Vector2<f64>, Vector3<f64>, bool)>;
    let mut rows: BTreeMap<usize, Vec<Row>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let bad = |msg: String| TrackError::Format { line: i + 1, msg };
        let f: Vec<&str> = t.split_whitespace().collect();
        let [frame, name, rest @ ..] = f.as_slice() else {
            return Err(bad("expected `frame name u v x y z visible`".into()));
        };
        if rest.len() != 6 {
            return Err(bad("expected `frame name u v x y z visible`".into()));
        }
        let frame: usize = frame.parse().map_err(|_| bad("bad frame index".into()))?;
        let l = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| bad(format!("unknown landmark {name:?}")))?;
        let v: Vec<f64> = rest[..5]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(e.to_string()))?;
        let visible = match rest[5] {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("visibility must be 0 or 1, got {other:?}"))),
        };
        rows.entry(frame).or_insert_with(|| vec![None; names.len()])[l] =
            Some((Vector2::new(v[0], v[1]), Vector3::new(v[2], v[3], v[4]), visible));
    }
    let mut tracks = LandmarkTracks {
        points_2d: Vec::with_capacity(rows.len()),
        points_3d: Vec::with_capacity(rows.len()),
        visible: Vec::with_capacity(rows.len()),
    };
    for (expected, (frame, row)) in rows.into_iter().enumerate() {
        if frame != expected {
            return Err(TrackError::Misaligned {
                what: "track frame index",
                expected,
                got: frame,
            });
        }
        let (mut p2, mut p3, mut vis) = (Vec::new(), Vec::new(), Vec::new());
        for (l, r) in row.into_iter().enumerate() {
            let (a, b, v) = r.ok_or_else(|| {
                TrackError::Landmark(LandmarkError::MissingPoint {
                    frame,
                    name: names[l].clone(),
                })
            })?;
            p2.push(a);
            p3.push(b);
            vis.push(v);
        }
        tracks.points_2d.push(p2);
        tracks.points_3d.push(p3);
        tracks.visible.push(vis);
    }
    Ok(tracks)
}

/// Fits the crop of `maps` around `bbox`, keeping full-frame pixel
/// coordinates.
fn fit_crop(
    maps: &CorrespondenceMaps,
    bbox: &BBox,
    model: &MorphableModel,
    options: &TrackOptions,
) -> Result<FitResult, String> {
    let (w, h) = (maps.width(), maps.height());
    let b = bbox.expanded(options.crop_margin);
    let x0 = b.x.floor().max(0.0) as usize;
    let y0 = b.y.floor().max(0.0) as usize;
    let x1 = ((b.x + b.w).ceil().max(0.0) as usize).min(w);
    let y1 = ((b.y + b.h).ceil().max(0.0) as usize).min(h);
    if x0 >= x1 || y0 >= y1 {
        return Err(format!("tracker: crop {b:?} lies outside the {w}×{h} frame"));
    }
    let crop = maps.crop(x0, y0, x1 - x0, y1 - y0);
    let fit_opts = FitOptions {
        frame: Some(PixelFrame {
            origin: (x0, y0),
            width: w,
            height: h,
        }),
        ..options.fit
    };
    fit_image(&crop, model, &fit_opts).map_err(|e| e.to_string())
}

/// Resolves boxes, fits every frame's crop, predicts landmarks and smooths
/// their trajectories. Frames that fail to fit are recorded and their
/// landmarks interpolated from neighbouring frames.
pub fn track(
    frames: &[CorrespondenceMaps],
    detections: &[Vec<BBox>],
    model: &MorphableModel,
    map: &LandmarkMap,
    options: &TrackOptions,
) -> Result<TrackedSequence, TrackError> {
    if frames.len() != detections.len() {
        return Err(TrackError::Misaligned {
            what: "detection frames",
            expected: frames.len(),
            got: detections.len(),
        });
    }
    if options.window == 0 || options.window.is_multiple_of(2) {
        return Err(TrackError::InvalidWindow(options.window));
    }
    map.check_vertices(model.vertex_count())?;
    let boxes = resolve_bboxes(detections)?;

    type FrameOutput = Result<(FitResult, Vec<Vector2<f64>>, Vec<Vector3<f64>>, Vec<bool>), String>;
    let outputs: Vec<FrameOutput> = frames
        .par_iter()
        .zip(&boxes)
        .map(|(maps, bbox)| {
            let fit = fit_crop(maps, bbox, model, options)?;
            let pred = predict_landmarks(&fit, map, model).map_err(|e| format!("landmarks: {e}"))?;
            Ok((
                fit,
                pred.iter().map(|p| p.pixel).collect(),
                pred.iter().map(|p| p.point).collect(),
                pred.iter().map(|p| p.visible).collect(),
            ))
        })
        .collect();

    let mut fits = Vec::with_capacity(frames.len());
    let mut failures = Vec::with_capacity(frames.len());
    let mut p2 = Vec::with_capacity(frames.len());
    let mut p3 = Vec::with_capacity(frames.len());
    let mut vis = Vec::with_capacity(frames.len());
    for (f, out) in outputs.into_iter().enumerate() {
        match out {
            Ok((fit, a, b, v)) => {
                fits.push(Some(fit));
                failures.push(None);
                p2.push(Some(a));
                p3.push(Some(b));
                vis.push(v);
            }
            Err(e) => {
                log::warn!("frame {f}: {e}");
                fits.push(None);
                failures.push(Some(e));
                p2.push(None);
                p3.push(None);
                vis.push(vec![false; map.len()]);
            }
        }
    }
    let first_failure = || failures.iter().flatten().next().cloned().unwrap_or_default();
    let raw_2d = fill_gap_rows(&p2).ok_or_else(|| TrackError::AllFramesFailed(first_failure()))?;
    let raw_3d = fill_gap_rows(&p3).ok_or_else(|| TrackError::AllFramesFailed(first_failure()))?;
    let smoothed_2d = smooth_rows(&raw_2d, options.window)?;
    let smoothed_3d = smooth_rows(&raw_3d, options.window)?;
    Ok(TrackedSequence {
        detections: detections.to_vec(),
        boxes,
        fits,
        failures,
        raw_2d,
        raw_3d,
        smoothed_2d,
        smoothed_3d,
        visible: vis,
    })
}

fn fill_gap_rows<const D: usize>(rows: &[Option<Vec<SVector<f64, D>>>]) -> Option<Vec<Vec<SVector<f64, D>>>> {
    fill_gaps(rows, |a: &Vec<SVector<f64, D>>, b, t| {
        a.iter().zip(b).map(|(p, q)| p + (q - p) * t).collect()
    })
}

/// Smooths each landmark's trajectory in a frame-major table.
fn smooth_rows<const D: usize>(
    rows: &[Vec<SVector<f64, D>>],
    window: usize,
) -> Result<Vec<Vec<SVector<f64, D>>>, TrackError> {
    let landmarks = rows.first().map_or(0, Vec::len);
    let mut out = rows.to_vec();
    for l in 0..landmarks {
        let track: Vec<_> = rows.iter().map(|r| r[l]).collect();
        for (f, p) in smooth_trajectory(&track, window)?.into_iter().enumerate() {
            out[f][l] = p;
        }
    }
    Ok(out)
}

/// Mean point-to-point pixel error of each frame divided by the ground
/// truth distance between landmarks `interocular.0` and `interocular.1`.
/// Frames with zero interocular distance are `None`.
pub fn normalized_errors_2d(
    predicted: &[Vec<Vector2<f64>>],
    truth: &[Vec<Vector2<f64>>],
    interocular: (usize, usize),
) -> Vec<Option<f64>> {
    predicted
        .iter()
        .zip(truth)
        .map(|(p, g)| {
            let iod = (g[interocular.0] - g[interocular.1]).norm();
            if !(iod > 0.0) {
                return None;
            }
            let mean = p.iter().zip(g).map(|(a, b)| (a - b).norm()).sum::<f64>() / g.len() as f64;
            Some(mean / iod)
        })
        .collect()
}

/// Cumulative error distribution as `(threshold, fraction)` pairs: one pair
/// per distinct error value, with the fraction of errors at or below it.
pub fn ced_curve(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, e) in sorted.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *e => last.1 = fraction,
            _ => out.push((*e, fraction)),
        }
    }
    out
}

pub fn write_ced_csv<W: Write>(mut w: W, curve: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "threshold,fraction")?;
    for (t, f) in curve {
        writeln!(w, "{t},{f}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Normalized 2D error per evaluated frame; `None` for excluded frames.
    pub frame_errors_2d: Vec<(usize, Option<f64>)>,
    /// Frames dropped for a zero interocular distance.
    pub excluded_frames: Vec<usize>,
    /// Per-landmark 3D Euclidean errors over all evaluated frames.
    pub errors_3d: Option<Vec<f64>>,
    pub ced_2d: Vec<(f64, f64)>,
    pub ced_3d: Option<Vec<(f64, f64)>>,
}

impl MetricsReport {
    pub fn mean_2d(&self) -> Option<f64> {
        let v: Vec<f64> = self.frame_errors_2d.iter().filter_map(|(_, e)| *e).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_3d(&self) -> Option<f64> {
        self.errors_3d
            .as_ref()
            .filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Plain-text summary table.
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{:>8} {:>14}", "frame", "nme_2d")?;
        for (f, e) in &self.frame_errors_2d {
            match e {
                Some(e) => writeln!(w, "{f:>8} {e:>14.6}")?,
                None => writeln!(w, "{f:>8} {:>14}", "excluded")?,
            }
        }
        if let Some(m) = self.mean_2d() {
            writeln!(w, "mean normalized 2D error: {m:.6}")?;
        }
        if let Some(m) = self.mean_3d() {
            writeln!(w, "mean 3D error: {m:.6}")?;
        }
        if !self.excluded_frames.is_empty() {
            writeln!(
                w,
                "excluded frames (zero interocular distance): {:?}",
                self.excluded_frames
            )?;
        }
        Ok(())
    }
}

/// Ground-truth 3D landmark positions of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks3d {
    pub frame: usize,
    pub points: Vec<Vector3<f64>>,
}

/// Errors of predicted tracks against annotated frames. Annotations refer
/// to sequence frames by index and must list the map's landmarks in order.
pub fn evaluate(
    predicted_2d: &[Vec<Vector2<f64>>],
    predicted_3d: &[Vec<Vector3<f64>>],
    truth_2d: &[LandmarkObservation],
    truth_3d: Option<&[Landmarks3d]>,
    interocular: (usize, usize),
) -> Result<MetricsReport, TrackError> {
    let lookup = |frame: usize| -> Result<usize, TrackError> {
        if frame < predicted_2d.len() {
            Ok(frame)
        } else {
            Err(TrackError::Misaligned {
                what: "annotated frame index",
                expected: predicted_2d.len(),
                got: frame,
            })
        }
    };
    let mut frame_errors_2d = Vec::with_capacity(truth_2d.len());
    let mut excluded_frames = Vec::new();
    for obs in truth_2d {
        let f = lookup(obs.frame)?;
        if obs.points.len() != predicted_2d[f].len() {
            return Err(TrackError::Misaligned {
                what: "landmarks per frame",
                expected: predicted_2d[f].len(),
                got: obs.points.len(),
            });
        }
        let e = normalized_errors_2d(&predicted_2d[f..=f], std::slice::from_ref(&obs.points), interocular)[0];
        if e.is_none() {
            log::warn!("frame {}: zero interocular distance, excluded", obs.frame);
            excluded_frames.push(obs.frame);
        }
        frame_errors_2d.push((obs.frame, e));
    }
    let errors_3d = truth_3d
        .map(|gt| -> Result<Vec<f64>, TrackError> {
            let mut out = Vec::new();
            for t in gt {
                let f = lookup(t.frame)?;
                if t.points.len() != predicted_3d[f].len() {
                    return Err(TrackError::Misaligned {
                        what: "3D landmarks per frame",
                        expected: predicted_3d[f].len(),
                        got: t.points.len(),
                    });
                }
                out.extend(predicted_3d[f].iter().zip(&t.points).map(|(p, g)| (p - g).norm()));
            }
            Ok(out)
        })
        .transpose()?;
    let e2: Vec<f64> = frame_errors_2d.iter().filter_map(|(_, e)| *e).collect();
    Ok(MetricsReport {
        ced_2d: ced_curve(&e2),
        ced_3d: errors_3d.as_deref().map(ced_curve),
        frame_errors_2d,
        excluded_frames,
        errors_3d,
    })
}

/// Parses `frame x y w h` lines; a frame may have several. The result has
/// `frame_count` entries, or one past the largest frame listed.
pub fn read_detections<R: BufRead>(reader: R, frame_count: Option<usize>) -> Result<Vec<Vec<BBox>>, TrackError> {
    let mut by_frame: BTreeMap<usize, Vec<BBox>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let bad = |msg: String| TrackError::Format { line: i + 1, msg };
        let f: Vec<&str> = t.split_whitespace().collect();
        let [frame, rest @ ..] = f.as_slice() else {
            unreachable!()
        };
        if rest.len() != 4 {
            return Err(bad("expected `frame x y w h`".into()));
        }
        let frame: usize = frame.parse().map_err(|_| bad("bad frame index".into()))?;
        let v: Vec<f64> = rest
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(e.to_string()))?;
        let b = BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| bad(e.to_string()))?;
        by_frame.entry(frame).or_default().push(b);
    }
    let n = frame_count.unwrap_or_else(|| by_frame.keys().next_back().map_or(0, |k| k + 1));
    if let Some(&last) = by_frame.keys().next_back() {
        if last >= n {
            return Err(TrackError::Misaligned {
                what: "detection frame index",
                expected: n,
                got: last,
            });
        }
    }
    let mut out = vec![Vec::new(); n];
    for (f, b) in by_frame {
        out[f] = b;
    }
    Ok(out)
}

pub fn write_detections<W: Write>(mut w: W, detections: &[Vec<BBox>]) -> std::io::Result<()> {
    for (f, dets) in detections.iter().enumerate() {
        for b in dets {
            writeln!(w, "{f} {} {} {} {}", b.x, b.y, b.w, b.h)?;
        }
    }
    Ok(())
}

/// Parses `frame name x y z` lines of 3D ground truth, ordered by `names`.
pub fn read_landmarks_3d<R: BufRead>(reader: R, names: &[String]) -> Result<Vec<Landmarks3d>, TrackError> {
    let mut rows: BTreeMap<usize, Vec<Option<Vector3<f64>>>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let bad = |msg: String| TrackError::Format { line: i + 1, msg };
        let f: Vec<&str> = t.split_whitespace().collect();
        let [frame, name, x, y, z] = f.as_slice() else {
            return Err(bad("expected `frame name x y z`".into()));
        };
        let frame: usize = frame.parse().map_err(|_| bad("bad frame index".into()))?;
        let l = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| bad(format!("unknown landmark {name:?}")))?;
        let p: Vec<f64> = [x, y, z]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(e.to_string()))?;
        rows.entry(frame).or_insert_with(|| vec![None; names.len()])[l] = Some(Vector3::new(p[0], p[1], p[2]));
    }
    rows.into_iter()
        .map(|(frame, pts)| {
            let points = pts
                .into_iter()
                .enumerate()
                .map(|(l, p)| {
                    p.ok_or_else(|| {
                        TrackError::Landmark(LandmarkError::MissingPoint {
                            frame,
                            name: names[l].clone(),
                        })
                    })
                })
                .collect::<Result<_, _>>()?;
            Ok(Landmarks3d { frame, points })
        })
        .collect()
}
