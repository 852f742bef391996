//! Geometry of the local-ensemble query.
//!
//! Each query point is decoded from the four latent cells whose centers
//! surround it. The MLP sees the cell's unfolded latent plus the offset from
//! the cell center to the query, measured in LR cells. The four predictions
//! are blended with the area of the rectangle spanned by the query and the
//! diagonally opposite cell center, normalized to sum to one.

use crate::field::{cell_center, in_unit_range};
use crate::{Error, Result};

/// Latent cells blended per query.
pub const ENSEMBLE: usize = 4;

const SHIFTS: [(f64, f64); ENSEMBLE] = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)];
const EPS_SHIFT: f64 = 1e-6;
const AREA_EPS: f64 = 1e-9;

/// Per-row inputs for [`crate::model::Model::asm_forward`].
///
/// Rows are ordered sample-major: row `s * Q + q` is ensemble sample `s` of
/// query `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    /// `(batch item, cell row, cell column)` of the latent cell.
    pub positions: Vec<[usize; 3]>,
    /// Query minus cell center, in LR-cell units.
    pub rel: Vec<[f64; 2]>,
    /// Blend weight of each row; the four weights of a query sum to one.
    pub weights: Vec<f64>,
    pub queries: usize,
}

fn nearest_cell(coord: f64, n: usize) -> usize {
    let c = coord.clamp(-1.0 + 1e-6, 1.0 - 1e-6);
    (((c + 1.0) / 2.0 * n as f64).floor() as usize).min(n - 1)
}

/// Builds the ensemble plan for `(item, [y, x])` queries on an `h x w` latent
/// grid.
pub fn plan_queries(h: usize, w: usize, queries: &[(usize, [f64; 2])]) -> Result<QueryPlan> {
    if h == 0 || w == 0 {
        return Err(Error::shape("latent grid must be non-empty"));
    }
    if let Some((_, c)) = queries.iter().find(|(_, c)| !in_unit_range(c[0]) || !in_unit_range(c[1])) {
        return Err(Error::CoordinateOutOfRange(c[0], c[1]));
    }
    let q = queries.len();
    let mut positions = Vec::with_capacity(ENSEMBLE * q);
    let mut rel = Vec::with_capacity(ENSEMBLE * q);
    let mut areas = Vec::with_capacity(ENSEMBLE * q);
    for &(vy, vx) in &SHIFTS {
        for &(item, [y, x]) in queries {
            let iy = nearest_cell(y + vy / h as f64 + EPS_SHIFT, h);
            let ix = nearest_cell(x + vx / w as f64 + EPS_SHIFT, w);
            let ry = (y - cell_center(iy, h)) * h as f64;
            let rx = (x - cell_center(ix, w)) * w as f64;
            positions.push([item, iy, ix]);
            rel.push([ry, rx]);
            areas.push((ry * rx).abs() + AREA_EPS);
        }
    }
    let mut weights = vec![0.0; ENSEMBLE * q];
    for i in 0..q {
        let total: f64 = (0..ENSEMBLE).map(|s| areas[s * q + i]).sum();
        for s in 0..ENSEMBLE {
            // opposite corner: (-1,-1) <-> (1,1), (-1,1) <-> (1,-1)
            weights[s * q + i] = areas[(ENSEMBLE - 1 - s) * q + i] / total;
        }
    }
    Ok(QueryPlan {
        positions,
        rel,
        weights,
        queries: q,
    })
}
