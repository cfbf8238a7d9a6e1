use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Per-cell training targets for a batch. `cells[(n·G + i)·G + j]` holds the
/// ground-truth box owning cell `(i, j)` of image `n`, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMap {
    pub batch: usize,
    pub grid: usize,
    pub stride: usize,
    pub cells: Vec<Option<BBox>>,
}

impl TargetMap {
    pub fn get(&self, n: usize, i: usize, j: usize) -> Option<&BBox> {
        self.cells[(n * self.grid + i) * self.grid + j].as_ref()
    }

    pub fn is_positive(&self, n: usize, i: usize, j: usize) -> bool {
        self.get(n, i, j).is_some()
    }

    pub fn positives(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Objectness targets as 0/1, B×G×G row-major.
    pub fn obj(&self) -> Vec<u8> {
        self.cells.iter().map(|c| u8::from(c.is_some())).collect()
    }
}

/// Marks the 3×3 cells around each box's owning cell, clipped to the grid.
/// A cell claimed twice goes to the box whose center is nearer the cell
/// center; exact ties keep the earlier box.
pub fn assign_targets(annotations: &[Vec<BBox>], grid: usize, stride: usize) -> Result<TargetMap> {
    let size = (grid * stride) as f64;
    let s = stride as f64;
    let mut cells: Vec<Option<BBox>> = vec![None; annotations.len() * grid * grid];
    let mut dist = vec![f64::INFINITY; cells.len()];
    for (n, boxes) in annotations.iter().enumerate() {
        for b in boxes {
            if !(b.cx >= 0.0 && b.cx < size && b.cy >= 0.0 && b.cy < size) || b.is_degenerate() {
                return Err(Error::Data(format!("box centered at ({}, {}) lies outside the {size}×{size} patch", b.cx, b.cy)));
            }
            let (oi, oj) = ((b.cy / s) as usize, (b.cx / s) as usize);
            for i in oi.saturating_sub(1)..=(oi + 1).min(grid - 1) {
                for j in oj.saturating_sub(1)..=(oj + 1).min(grid - 1) {
                    let d = (b.cx - (j as f64 + 0.5) * s).hypot(b.cy - (i as f64 + 0.5) * s);
                    let k = (n * grid + i) * grid + j;
                    if d < dist[k] {
                        dist[k] = d;
                        cells[k] = Some(*b);
                    }
                }
            }
        }
    }
    Ok(TargetMap { batch: annotations.len(), grid, stride, cells })
}
