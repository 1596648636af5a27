//! Spatial max-pooling over square patches holding a variable number of
//! points.

use ndarray::{Array3, ArrayView3};

use crate::domain::Point;
use crate::error::{GconvError, Result};

/// A fixed `cols x rows` grid of square patches anchored at `origin`.
/// Points outside the grid are clamped onto the nearest boundary patch, so
/// every point belongs to exactly one patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchGrid {
    pub origin: Point,
    pub side: f64,
    pub cols: usize,
    pub rows: usize,
}

impl PatchGrid {
    pub fn new(origin: Point, side: f64, cols: usize, rows: usize) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(GconvError::InvalidParameter(format!(
                "patch side must be positive, got {side}"
            )));
        }
        if !origin.is_finite() {
            return Err(GconvError::NonFinite("patch grid origin"));
        }
        Ok(Self {
            origin,
            side,
            cols,
            rows,
        })
    }

    /// Smallest grid of `side`-wide patches tiling a `width x height` lattice
    /// of pitch `pitch` whose first cell starts at `origin`.
    pub fn covering(origin: Point, pitch: f64, width: usize, height: usize, side_cells: f64) -> Result<Self> {
        let cols = (width as f64 / side_cells).ceil() as usize;
        let rows = (height as f64 / side_cells).ceil() as usize;
        Self::new(origin, side_cells * pitch, cols, rows)
    }

    pub fn patch_count(&self) -> usize {
        self.cols * self.rows
    }

    pub fn patch_of(&self, p: &Point) -> usize {
        let clamp = |v: f64, hi: usize| -> usize {
            if v < 0.0 || hi == 0 {
                0
            } else {
                (v as usize).min(hi - 1)
            }
        };
        let col = clamp(((p.x - self.origin.x) / self.side).floor(), self.cols);
        let row = clamp(((p.y - self.origin.y) / self.side).floor(), self.rows);
        row * self.cols + col
    }

    pub fn center(&self, patch: usize) -> Point {
        let (row, col) = (patch / self.cols, patch % self.cols);
        Point::new(
            self.origin.x + (col as f64 + 0.5) * self.side,
            self.origin.y + (row as f64 + 0.5) * self.side,
        )
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.patch_count()).map(|i| self.center(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolPlan {
    grid: PatchGrid,
    input_points: usize,
    /// member point indices per patch, ascending
    members: Vec<Vec<u32>>,
}

impl PoolPlan {
    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn input_points(&self) -> usize {
        self.input_points
    }

    pub fn patch_count(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, patch: usize) -> &[u32] {
        &self.members[patch]
    }

    /// Output points: the patch centers.
    pub fn output_points(&self) -> Vec<Point> {
        self.grid.centers()
    }
}

pub fn plan_pool(points: &[Point], grid: &PatchGrid) -> PoolPlan {
    if grid.patch_count() == 0 && !points.is_empty() {
        // nothing to pool into; keep the plan consistent
        return PoolPlan {
            grid: *grid,
            input_points: points.len(),
            members: Vec::new(),
        };
    }
    let mut members = vec![Vec::new(); grid.patch_count()];
    for (i, p) in points.iter().enumerate() {
        members[grid.patch_of(p)].push(i as u32);
    }
    PoolPlan {
        grid: *grid,
        input_points: points.len(),
        members,
    }
}

/// Max over each patch's members. Empty patches yield 0 with no argmax;
/// ties go to the lowest point index.
pub fn maxpool_forward(
    values: ArrayView3<f64>,
    plan: &PoolPlan,
) -> Result<(Array3<f64>, Array3<Option<u32>>)> {
    let (b, p, f) = values.dim();
    if p != plan.input_points {
        return Err(GconvError::Shape(format!(
            "pool plan built for {} points, got {p}",
            plan.input_points
        )));
    }
    let q = plan.patch_count();
    let mut pooled = Array3::zeros((b, q, f));
    let mut argmax = Array3::from_elem((b, q, f), None);
    for bi in 0..b {
        for (j, members) in plan.members.iter().enumerate() {
            for m in 0..f {
                let mut best: Option<(u32, f64)> = None;
                for &i in members {
                    let v = values[[bi, i as usize, m]];
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((i, v));
                    }
                }
                if let Some((i, v)) = best {
                    pooled[[bi, j, m]] = v;
                    argmax[[bi, j, m]] = Some(i);
                }
            }
        }
    }
    Ok((pooled, argmax))
}

/// Routes each pooled gradient back to the point that won the max.
pub fn maxpool_backward(
    upstream: ArrayView3<f64>,
    argmax: &Array3<Option<u32>>,
    input_points: usize,
) -> Result<Array3<f64>> {
    if upstream.dim() != argmax.dim() {
        return Err(GconvError::Shape(format!(
            "upstream {:?} vs argmax {:?}",
            upstream.dim(),
            argmax.dim()
        )));
    }
    let (b, _, f) = upstream.dim();
    let mut out = Array3::zeros((b, input_points, f));
    for ((bi, j, m), &slot) in argmax.indexed_iter() {
        if let Some(i) = slot {
            out[[bi, i as usize, m]] += upstream[[bi, j, m]];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::regular_grid_points;
    use ndarray::array;
    use proptest::prelude::*;

    fn mnist_grid() -> PatchGrid {
        PatchGrid::covering(Point::new(-0.5, -0.5), 1.0, 28, 28, 2.0).unwrap()
    }

    #[test]
    fn regular_28x28_tiles_into_2x2_blocks() {
        let grid = mnist_grid();
        assert_eq!((grid.cols, grid.rows), (14, 14));
        let plan = plan_pool(&regular_grid_points(28, 28), &grid);
        assert_eq!(plan.patch_count(), 196);
        for j in 0..196 {
            assert_eq!(plan.members(j).len(), 4);
        }
        // patch 0 holds pixels (0,0),(1,0),(0,1),(1,1)
        assert_eq!(plan.members(0), &[0, 1, 28, 29]);
        assert_eq!(grid.center(0), Point::new(0.5, 0.5));
    }

    #[test]
    fn variable_patch_occupancy() {
        let grid = PatchGrid::new(Point::new(0.0, 0.0), 2.0, 2, 1).unwrap();
        let mut pts: Vec<Point> = (0..7).map(|i| Point::new(0.1 + 0.2 * i as f64, 1.0)).collect();
        pts.push(Point::new(3.0, 0.5));
        let plan = plan_pool(&pts, &grid);
        assert_eq!(plan.members(0).len(), 7);
        assert_eq!(plan.members(1), &[7]);
    }

    #[test]
    fn empty_input_gives_empty_patches() {
        let plan = plan_pool(&[], &mnist_grid());
        assert!((0..plan.patch_count()).all(|j| plan.members(j).is_empty()));
        let (pooled, arg) = maxpool_forward(Array3::zeros((2, 0, 3)).view(), &plan).unwrap();
        assert!(pooled.iter().all(|&v| v == 0.0));
        assert!(arg.iter().all(Option::is_none));
    }

    #[test]
    fn outside_points_clamp_to_boundary() {
        let grid = mnist_grid();
        assert_eq!(grid.patch_of(&Point::new(-10.0, -3.0)), 0);
        assert_eq!(grid.patch_of(&Point::new(40.0, 40.0)), 195);
        assert_eq!(grid.patch_of(&Point::new(40.0, 0.0)), 13);
    }

    #[test]
    fn max_and_argmax() {
        let grid = PatchGrid::new(Point::new(0.0, 0.0), 10.0, 1, 1).unwrap();
        let plan = plan_pool(&[Point::new(1.0, 1.0), Point::new(2.0, 2.0), Point::new(3.0, 3.0)], &grid);
        let (pooled, arg) = maxpool_forward(array![[[1.0], [3.0], [2.0]]].view(), &plan).unwrap();
        assert_eq!(pooled[[0, 0, 0]], 3.0);
        assert_eq!(arg[[0, 0, 0]], Some(1));

        let grad = maxpool_backward(array![[[5.0]]].view(), &arg, 3).unwrap();
        assert_eq!(grad, array![[[0.0], [5.0], [0.0]]]);

        let (pooled, _) = maxpool_forward(array![[[-2.0], [-1.0], [-3.0]]].view(), &plan).unwrap();
        assert_eq!(pooled[[0, 0, 0]], -1.0);

        let (_, arg) = maxpool_forward(array![[[4.0], [4.0], [4.0]]].view(), &plan).unwrap();
        assert_eq!(arg[[0, 0, 0]], Some(0));
    }

    #[test]
    fn empty_patch_outputs_zero() {
        let grid = PatchGrid::new(Point::new(0.0, 0.0), 1.0, 2, 1).unwrap();
        let plan = plan_pool(&[Point::new(0.5, 0.5)], &grid);
        let (pooled, arg) = maxpool_forward(array![[[-7.0]]].view(), &plan).unwrap();
        assert_eq!(pooled, array![[[-7.0], [0.0]]]);
        assert_eq!(arg[[0, 1, 0]], None);
        let grad = maxpool_backward(array![[[1.0], [9.0]]].view(), &arg, 1).unwrap();
        assert_eq!(grad, array![[[1.0]]]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let grid = PatchGrid::new(Point::new(0.0, 0.0), 2.0, 2, 2).unwrap();
        let pts: Vec<Point> = (0..12)
            .map(|i| Point::new((i % 4) as f64 + 0.3, (i / 4) as f64 * 1.3))
            .collect();
        let plan = plan_pool(&pts, &grid);
        // distinct values, gaps well above the step
        let values = Array3::from_shape_fn((2, 12, 2), |(b, i, m)| ((b * 31 + i * 7 + m * 13) % 23) as f64 * 0.1 - 1.0);
        let up = Array3::from_shape_fn((2, 4, 2), |(b, j, m)| 0.5 + (b + j + m) as f64 * 0.25);
        let (_, arg) = maxpool_forward(values.view(), &plan).unwrap();
        let grad = maxpool_backward(up.view(), &arg, 12).unwrap();
        let loss = |v: &Array3<f64>| (&maxpool_forward(v.view(), &plan).unwrap().0 * &up).sum();
        let h = 1e-5;
        for idx in 0..values.len() {
            let mut plus = values.clone();
            let mut minus = values.clone();
            plus.as_slice_mut().unwrap()[idx] += h;
            minus.as_slice_mut().unwrap()[idx] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - grad.as_slice().unwrap()[idx]).abs() < 1e-8, "index {idx}");
        }
    }

    proptest! {
        #[test]
        fn every_point_in_exactly_one_patch(
            coords in proptest::collection::vec((-3.0f64..30.0, -3.0f64..30.0), 0..200)
        ) {
            let pts: Vec<Point> = coords.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            let plan = plan_pool(&pts, &mnist_grid());
            let mut seen = vec![0; pts.len()];
            for j in 0..plan.patch_count() {
                for &i in plan.members(j) {
                    seen[i as usize] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
