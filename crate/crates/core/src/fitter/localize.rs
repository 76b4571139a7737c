use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::SolveError;
use crate::image::{to_vec3, CorrespondenceMaps};
use crate::model::MorphableModel;

/// A mesh vertex located in the PNCC image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexMatch {
    pub vertex: usize,
    /// Column and row of the matched pixel.
    pub pixel: (usize, usize),
    /// PNCC-space distance between the pixel value and the vertex code.
    pub distance: f64,
    /// Offset image value at the matched pixel, model units.
    pub offset: Vector3<f64>,
}

/// Twice the median PNCC-space edge length of the mean mesh.
pub fn default_tau_match(model: &MorphableModel) -> f64 {
    let codes = model.ncc_codes();
    let mut lengths: Vec<f64> = model
        .topology()
        .edges()
        .into_iter()
        .map(|(a, b)| (codes[a] - codes[b]).norm())
        .collect();
    if lengths.is_empty() {
        return f64::INFINITY;
    }
    lengths.sort_by(f64::total_cmp);
    let mid = lengths.len() / 2;
    let median = if lengths.len().is_multiple_of(2) {
        0.5 * (lengths[mid - 1] + lengths[mid])
    } else {
        lengths[mid]
    };
    2.0 * median
}

type Cell = (i64, i64, i64);

/// Uniform grid over the PNCC values of valid pixels.
struct CodeGrid {
    edge: f64,
    cells: HashMap<Cell, Vec<usize>>,
    codes: Vec<Vector3<f64>>,
}

impl CodeGrid {
    fn build(maps: &CorrespondenceMaps, edge: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        let codes: Vec<Vector3<f64>> = maps.pncc.pixels().iter().map(|p| to_vec3(*p)).collect();
        for i in maps.valid_indices() {
            cells.entry(cell_of(&codes[i], edge)).or_default().push(i);
        }
        Self { edge, cells, codes }
    }

    /// Nearest pixel within `radius` of `target`, smallest index on ties.
    fn nearest(&self, target: &Vector3<f64>, radius: f64) -> Option<(usize, f64)> {
        let lo = cell_of(&target.add_scalar(-radius), self.edge);
        let hi = cell_of(&target.add_scalar(radius), self.edge);
        let mut best: Option<(usize, f64)> = None;
        for cx in lo.0..=hi.0 {
            for cy in lo.1..=hi.1 {
                for cz in lo.2..=hi.2 {
                    let Some(pixels) = self.cells.get(&(cx, cy, cz)) else {
                        continue;
                    };
                    for &i in pixels {
                        let d2 = (self.codes[i] - target).norm_squared();
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d2 < bd || (d2 == bd && i < bi),
                        };
                        if better {
                            best = Some((i, d2));
                        }
                    }
                }
            }
        }
        best.filter(|(_, d2)| *d2 <= radius * radius)
    }
}

fn cell_of(p: &Vector3<f64>, edge: f64) -> Cell {
    (
        (p.x / edge).floor() as i64,
        (p.y / edge).floor() as i64,
        (p.z / edge).floor() as i64,
    )
}

/// For every mesh vertex, the valid pixel whose PNCC value is nearest the
/// vertex's normalized mean-face coordinate. Matches farther than
/// `tau_match` are dropped; ties go to the smallest row-major pixel index.
pub fn localize_vertices(
    maps: &CorrespondenceMaps,
    model: &MorphableModel,
    tau_match: f64,
) -> Result<Vec<VertexMatch>, SolveError> {
    if !(tau_match > 0.0) {
        return Err(SolveError::InvalidParameter(format!(
            "tau_match must be positive, got {tau_match}"
        )));
    }
    let grid = CodeGrid::build(maps, tau_match);
    if grid.cells.is_empty() {
        return Err(SolveError::EmptyInput);
    }
    let w = maps.width();
    let codes = model.ncc_codes();
    Ok(codes
        .par_iter()
        .enumerate()
        .filter_map(|(j, code)| {
            grid.nearest(code, tau_match).map(|(i, d2)| VertexMatch {
                vertex: j,
                pixel: (i % w, i / w),
                distance: d2.sqrt(),
                offset: to_vec3(maps.offset.pixels()[i]),
            })
        })
        .collect())
}
