//! Cell-based quality measures for a 2-D map over a 2-D input space.
//!
//! A cell is the quadrilateral spanned by the weights of the four nodes of
//! one elementary grid square. For the square with top-left grid coordinate
//! `(a, b)` the corners are taken in the cyclic order
//! `(a, b), (a, b+1), (a+1, b+1), (a+1, b)`, so the shoelace formula over
//! them gives the quad's signed area and the diagonals are corners 0-2 and
//! 1-3.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub corner_nodes: [usize; 4],
    pub corners: [[f64; 2]; 4],
}

impl Cell {
    pub fn signed_area(&self) -> f64 {
        let c = &self.corners;
        let mut s = 0.0;
        for k in 0..4 {
            let p = c[k];
            let q = c[(k + 1) % 4];
            s += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * s
    }

    pub fn diagonals(&self) -> (f64, f64) {
        let c = &self.corners;
        let d = |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        (d(c[0], c[2]), d(c[1], c[3]))
    }
}

/// Absolute shoelace area of the quad.
pub fn cell_area(cell: &Cell) -> f64 {
    cell.signed_area().abs()
}

fn check_2d(lattice: &Lattice, w: &WeightMatrix) -> Result<()> {
    if lattice.dims() != 2 {
        return Err(Error::invalid(format!("cell metrics need a 2-D lattice, got {}-D", lattice.dims())));
    }
    if w.input_dim() != 2 {
        return Err(Error::invalid(format!("cell metrics need 2-D weights, got {}-D", w.input_dim())));
    }
    if w.node_count() != lattice.node_count() {
        return Err(Error::DimensionMismatch { expected: lattice.node_count(), got: w.node_count() });
    }
    Ok(())
}

/// All `(m-1)(n-1)` cells in row-major order of their top-left node.
pub fn enumerate_cells(lattice: &Lattice, w: &WeightMatrix) -> Result<Vec<Cell>> {
    check_2d(lattice, w)?;
    let (m, n) = (lattice.extents()[0], lattice.extents()[1]);
    let mut cells = Vec::with_capacity(m.saturating_sub(1) * n.saturating_sub(1));
    for a in 0..m.saturating_sub(1) {
        for b in 0..n.saturating_sub(1) {
            let nodes = [a * n + b, a * n + b + 1, (a + 1) * n + b + 1, (a + 1) * n + b];
            let corners = nodes.map(|i| {
                let r = w.row(i);
                [r[0], r[1]]
            });
            cells.push(Cell { corner_nodes: nodes, corners });
        }
    }
    Ok(cells)
}

/// `(total_area - sum of cell areas) / total_area`. Overlapping cells are
/// counted once each, so a folded map can report too little unused space;
/// read it together with [`topology_twist_indicator`].
pub fn unused_space(lattice: &Lattice, w: &WeightMatrix, total_area: f64) -> Result<f64> {
    if !(total_area > 0.0) {
        return Err(Error::invalid(format!("total area must be > 0, got {total_area}")));
    }
    let covered: f64 = enumerate_cells(lattice, w)?.iter().map(cell_area).sum();
    Ok((total_area - covered) / total_area)
}

/// Diagonals shorter than this make a cell's skew undefined.
pub const MIN_DIAGONAL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewSummary {
    /// Mean of `max diagonal / min diagonal - 1` over cells with a defined skew.
    pub mean: f64,
    /// Cells left out because a diagonal collapsed.
    pub excluded: usize,
}

pub fn cell_skew(cell: &Cell) -> f64 {
    let (d1, d2) = cell.diagonals();
    let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
    if lo < MIN_DIAGONAL {
        f64::INFINITY
    } else {
        hi / lo - 1.0
    }
}

pub fn average_skew(lattice: &Lattice, w: &WeightMatrix) -> Result<SkewSummary> {
    let cells = enumerate_cells(lattice, w)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for c in &cells {
        let s = cell_skew(c);
        if s.is_finite() {
            sum += s;
            used += 1;
        }
    }
    let mean = if used > 0 { sum / used as f64 } else { 0.0 };
    Ok(SkewSummary { mean, excluded: cells.len() - used })
}

/// A cell is an edge cell when any of its corners is a boundary grid node.
pub fn is_edge_cell(lattice: &Lattice, cell: &Cell) -> bool {
    cell.corner_nodes.iter().any(|&i| lattice.is_boundary(i))
}

fn relative_mean_deviation(areas: &[f64]) -> Result<f64> {
    if areas.is_empty() {
        return Err(Error::Degenerate("no cells qualify for the size deviation".into()));
    }
    let mean = areas.iter().sum::<f64>() / areas.len() as f64;
    if mean == 0.0 {
        return Err(Error::Degenerate("mean cell area is zero".into()));
    }
    let dev = areas.iter().map(|a| (a - mean).abs()).sum::<f64>() / areas.len() as f64;
    Ok(dev / mean)
}

/// Mean absolute deviation of cell area divided by the mean cell area,
/// over all cells or over interior cells only.
pub fn cell_size_deviation(lattice: &Lattice, w: &WeightMatrix, include_edges: bool) -> Result<f64> {
    let areas: Vec<f64> = enumerate_cells(lattice, w)?
        .iter()
        .filter(|c| include_edges || !is_edge_cell(lattice, c))
        .map(cell_area)
        .collect();
    relative_mean_deviation(&areas)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistCount {
    pub flipped: usize,
    pub total: usize,
}

/// Cells whose signed area has the opposite sign to the majority. Cells
/// with zero signed area count as flipped. A consistently oriented map has
/// no flips.
pub fn topology_twist_indicator(lattice: &Lattice, w: &WeightMatrix) -> Result<TwistCount> {
    let cells = enumerate_cells(lattice, w)?;
    let (mut pos, mut neg, mut zero) = (0usize, 0usize, 0usize);
    for c in &cells {
        let a = c.signed_area();
        if a > 0.0 {
            pos += 1;
        } else if a < 0.0 {
            neg += 1;
        } else {
            zero += 1;
        }
    }
    Ok(TwistCount { flipped: pos.min(neg) + zero, total: cells.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    pub r_lo: f64,
    pub r_hi: f64,
    pub count: usize,
    /// Nodes per unit area of the annulus.
    pub density: f64,
}

/// Node density in annuli of width `bin_width` around `center` (2-D).
/// A radius within `1e-9` bin widths below a bin edge is counted in the
/// upper bin.
pub fn density_vs_radius(w: &WeightMatrix, center: [f64; 2], bin_width: f64) -> Result<Vec<DensityBin>> {
    if !(bin_width > 0.0) {
        return Err(Error::invalid(format!("bin width must be > 0, got {bin_width}")));
    }
    if w.input_dim() != 2 {
        return Err(Error::invalid("density_vs_radius needs 2-D weights"));
    }
    let bins: Vec<usize> = w
        .rows()
        .map(|r| {
            let rad = ((r[0] - center[0]).powi(2) + (r[1] - center[1]).powi(2)).sqrt();
            (rad / bin_width + 1e-9).floor() as usize
        })
        .collect();
    let nbins = bins.iter().max().map_or(0, |&b| b + 1);
    let mut counts = vec![0usize; nbins];
    for b in bins {
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| {
            let r_lo = k as f64 * bin_width;
            let r_hi = r_lo + bin_width;
            let area = std::f64::consts::PI * (r_hi * r_hi - r_lo * r_lo);
            DensityBin { r_lo, r_hi, count, density: count as f64 / area }
        })
        .collect())
}

/// Nodes whose weights lie inside the axis-aligned box `[lo, hi]` (inclusive).
pub fn nodes_in_box(w: &WeightMatrix, lo: &[f64], hi: &[f64]) -> usize {
    w.rows()
        .filter(|r| r.iter().zip(lo).zip(hi).all(|((v, l), h)| v >= l && v <= h))
        .count()
}

/// One row of the metrics time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSample {
    pub iteration: u64,
    pub unused_space: f64,
    pub avg_skew: f64,
    pub cell_dev_all: f64,
    pub cell_dev_interior: f64,
    pub twist_flips: usize,
}

pub const METRICS_CSV_HEADER: [&str; 6] =
    ["iteration", "unused_space", "avg_skew", "cell_dev_all", "cell_dev_interior", "twist_flips"];

impl MetricsSample {
    /// Degenerate maps (all cells collapsed) report `NaN` deviations.
    pub fn measure(iteration: u64, lattice: &Lattice, w: &WeightMatrix, total_area: f64) -> Result<Self> {
        let cells = enumerate_cells(lattice, w)?;
        if !(total_area > 0.0) {
            return Err(Error::invalid(format!("total area must be > 0, got {total_area}")));
        }
        let areas: Vec<f64> = cells.iter().map(cell_area).collect();
        let covered: f64 = areas.iter().sum();
        let interior: Vec<f64> = cells
            .iter()
            .zip(&areas)
            .filter(|(c, _)| !is_edge_cell(lattice, c))
            .map(|(_, &a)| a)
            .collect();
        Ok(MetricsSample {
            iteration,
            unused_space: (total_area - covered) / total_area,
            avg_skew: average_skew(lattice, w)?.mean,
            cell_dev_all: relative_mean_deviation(&areas).unwrap_or(f64::NAN),
            cell_dev_interior: relative_mean_deviation(&interior).unwrap_or(f64::NAN),
            twist_flips: topology_twist_indicator(lattice, w)?.flipped,
        })
    }

    pub fn record(&self) -> [String; 6] {
        [
            self.iteration.to_string(),
            format!("{:?}", self.unused_space),
            format!("{:?}", self.avg_skew),
            format!("{:?}", self.cell_dev_all),
            format!("{:?}", self.cell_dev_interior),
            self.twist_flips.to_string(),
        ]
    }
}

pub fn write_metrics_csv<W: std::io::Write>(samples: &[MetricsSample], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(METRICS_CSV_HEADER)?;
    for s in samples {
        wtr.write_record(s.record())?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use proptest::prelude::*;

    /// Regular grid of `m x n` nodes spanning `[lo, hi]^2`.
    fn grid(m: usize, n: usize, lo: f64, hi: f64) -> (Lattice, WeightMatrix) {
        let l = Lattice::euclidean(&[m, n]).unwrap();
        let mut rows = Vec::new();
        for a in 0..m {
            for b in 0..n {
                let x = lo + (hi - lo) * b as f64 / (n - 1) as f64;
                let y = lo + (hi - lo) * a as f64 / (m - 1) as f64;
                rows.push([x, y]);
            }
        }
        (l, WeightMatrix::from_rows(&rows).unwrap())
    }

    fn quad(c: [[f64; 2]; 4]) -> Cell {
        Cell { corner_nodes: [0, 1, 2, 3], corners: c }
    }

    #[test]
    fn cell_counts() {
        let (l, w) = grid(2, 2, 0.0, 1.0);
        assert_eq!(enumerate_cells(&l, &w).unwrap().len(), 1);
        let (l, w) = grid(20, 20, 0.0, 1.0);
        assert_eq!(enumerate_cells(&l, &w).unwrap().len(), 361);
    }

    #[test]
    fn three_by_two_corner_order() {
        let (l, w) = grid(3, 2, 0.0, 1.0);
        let cells = enumerate_cells(&l, &w).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].corner_nodes, [0, 1, 3, 2]);
        assert_eq!(cells[1].corner_nodes, [2, 3, 5, 4]);
        assert_eq!(cells[0].corners, [[0.0, 0.0], [1.0, 0.0], [1.0, 0.5], [0.0, 0.5]]);
    }

    #[test]
    fn non_2d_rejected() {
        let l = Lattice::euclidean(&[3, 3, 3]).unwrap();
        let w = WeightMatrix::from_flat(27, 2, vec![0.0; 54]).unwrap();
        assert!(enumerate_cells(&l, &w).is_err());
        let l = Lattice::euclidean(&[3, 3]).unwrap();
        let w = WeightMatrix::from_flat(9, 3, vec![0.0; 27]).unwrap();
        assert!(enumerate_cells(&l, &w).is_err());
    }

    #[test]
    fn areas() {
        assert_eq!(cell_area(&quad([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])), 1.0);
        assert_eq!(cell_area(&quad([[0.3, 0.3]; 4])), 0.0);
        assert_eq!(cell_area(&quad([[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]])), 2.0);
    }

    #[test]
    fn unused_space_examples() {
        let (l, w) = grid(5, 5, 0.0, 1.0);
        assert!(unused_space(&l, &w, 1.0).unwrap().abs() < 1e-12);
        let w2 = WeightMatrix::from_flat(25, 2, vec![0.5; 50]).unwrap();
        assert_eq!(unused_space(&l, &w2, 1.0).unwrap(), 1.0);
        let (l, w) = grid(3, 3, 0.25, 0.75);
        assert!((unused_space(&l, &w, 1.0).unwrap() - 0.75).abs() < 1e-12);
        assert!(unused_space(&l, &w, 0.0).is_err());
    }

    #[test]
    fn skew_examples() {
        assert_eq!(cell_skew(&quad([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])), 0.0);
        assert_eq!(cell_skew(&quad([[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]])), 0.0);
        let par = quad([[0.0, 0.0], [1.0, 0.0], [1.5, 1.0], [0.5, 1.0]]);
        // diagonals (0,0)-(1.5,1) and (1,0)-(0.5,1)
        let expected = (1.5f64 * 1.5 + 1.0).sqrt() / (0.25f64 + 1.0).sqrt() - 1.0;
        assert!((cell_skew(&par) - expected).abs() < 1e-12);
        assert!((cell_skew(&par) - 0.6125).abs() < 1e-4);
    }

    #[test]
    fn skew_excludes_collapsed_cells() {
        let l = Lattice::euclidean(&[2, 3]).unwrap();
        let w = WeightMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
            .unwrap();
        let s = average_skew(&l, &w).unwrap();
        assert_eq!(s.excluded, 1);
        assert_eq!(s.mean, 0.0);
    }

    #[test]
    fn deviation_examples() {
        let (l, w) = grid(6, 6, 0.0, 1.0);
        assert!(cell_size_deviation(&l, &w, true).unwrap() < 1e-12);

        // two cells of areas 1 and 3: mean 2, mean abs dev 1
        let l = Lattice::euclidean(&[2, 3]).unwrap();
        let w = WeightMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [4.0, 0.0], [0.0, 1.0], [1.0, 1.0], [4.0, 1.0]])
            .unwrap();
        assert!((cell_size_deviation(&l, &w, true).unwrap() - 0.5).abs() < 1e-12);
        // no interior cells in a 2x3 grid
        assert!(cell_size_deviation(&l, &w, false).is_err());

        let flat = WeightMatrix::from_flat(6, 2, vec![0.0; 12]).unwrap();
        assert!(cell_size_deviation(&l, &flat, true).is_err());
    }

    #[test]
    fn perturbed_corner_hits_edge_cells_only() {
        let (l, mut w) = grid(4, 4, 0.0, 1.0);
        w.row_mut(0).copy_from_slice(&[-0.2, -0.1]);
        let all = cell_size_deviation(&l, &w, true).unwrap();
        let interior = cell_size_deviation(&l, &w, false).unwrap();
        // 9 cells: one has area 1/9 + delta, the rest 1/9
        let areas: Vec<f64> = enumerate_cells(&l, &w).unwrap().iter().map(cell_area).collect();
        let mean = areas.iter().sum::<f64>() / 9.0;
        let dev = areas.iter().map(|a| (a - mean).abs()).sum::<f64>() / 9.0;
        assert!((all - dev / mean).abs() < 1e-12);
        assert_eq!(interior, 0.0);
        assert!(interior < all);
    }

    #[test]
    fn density_examples() {
        let w = WeightMatrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let bins = density_vs_radius(&w, [0.5, 0.5], 0.1).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].count, 1);

        let rows: Vec<[f64; 2]> = (0..12)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 12.0;
                [0.3 * a.cos(), 0.3 * a.sin()]
            })
            .collect();
        let w = WeightMatrix::from_rows(&rows).unwrap();
        let bins = density_vs_radius(&w, [0.0, 0.0], 0.1).unwrap();
        assert_eq!(bins.len(), 4);
        assert_eq!(bins[3].count, 12);
        assert!(bins[..3].iter().all(|b| b.count == 0));
    }

    #[test]
    fn density_matches_direct_count() {
        let (_, w) = grid(11, 11, 0.0, 1.0);
        let bw = 0.13;
        let bins = density_vs_radius(&w, [0.5, 0.5], bw).unwrap();
        for b in &bins {
            let n = w
                .rows()
                .filter(|r| {
                    let d = ((r[0] - 0.5).powi(2) + (r[1] - 0.5).powi(2)).sqrt();
                    d >= b.r_lo && d < b.r_hi
                })
                .count();
            assert_eq!(b.count, n);
            let area = std::f64::consts::PI * (b.r_hi.powi(2) - b.r_lo.powi(2));
            assert!((b.density - n as f64 / area).abs() < 1e-9);
        }
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 121);
    }

    #[test]
    fn twist_examples() {
        let (l, w) = grid(5, 5, 0.0, 1.0);
        assert_eq!(topology_twist_indicator(&l, &w).unwrap(), TwistCount { flipped: 0, total: 16 });
        let mut folded = w.clone();
        for b in 0..5 {
            let r1 = folded.row(5 + b).to_vec();
            let r2 = folded.row(10 + b).to_vec();
            folded.row_mut(5 + b).copy_from_slice(&r2);
            folded.row_mut(10 + b).copy_from_slice(&r1);
        }
        assert!(topology_twist_indicator(&l, &folded).unwrap().flipped > 0);
    }

    #[test]
    fn area_agrees_with_monte_carlo() {
        let mut rng = SeedStream::new(5, 0);
        for _ in 0..20 {
            // random convex quad: four points on an ellipse at sorted angles
            let mut angles: Vec<f64> = (0..4).map(|_| rng.uniform() * std::f64::consts::TAU).collect();
            angles.sort_by(f64::total_cmp);
            let (ax, ay) = (rng.uniform_range(0.2, 0.5), rng.uniform_range(0.2, 0.5));
            let corners = [0, 1, 2, 3].map(|k| [0.5 + ax * angles[k].cos(), 0.5 + ay * angles[k].sin()]);
            let c = quad(corners);
            let inside = |p: [f64; 2]| {
                (0..4).all(|k| {
                    let a = corners[k];
                    let b = corners[(k + 1) % 4];
                    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
                })
            };
            let n = 200_000;
            let hits = (0..n).filter(|_| inside([rng.uniform(), rng.uniform()])).count();
            let mc = hits as f64 / n as f64;
            let area = cell_area(&c);
            assert!((mc - area).abs() <= 0.01 * area + 3.0 * (area / n as f64).sqrt(), "{mc} vs {area}");
        }
    }

    proptest! {
        #[test]
        fn translation_and_scale_invariance(
            jitter in prop::collection::vec(-0.03f64..0.03, 50),
            shift in prop::collection::vec(-5.0f64..5.0, 2),
            scale in 0.1f64..10.0,
        ) {
            let (l, mut w) = grid(5, 5, 0.0, 1.0);
            for (v, j) in w.as_flat_mut().iter_mut().zip(&jitter) {
                *v += j;
            }
            let moved = WeightMatrix::from_rows(
                &w.rows().map(|r| [r[0] + shift[0], r[1] + shift[1]]).collect::<Vec<_>>()
            ).unwrap();
            let scaled = WeightMatrix::from_rows(
                &w.rows().map(|r| [r[0] * scale, r[1] * scale]).collect::<Vec<_>>()
            ).unwrap();
            let base_u = unused_space(&l, &w, 1.0).unwrap();
            let base_s = average_skew(&l, &w).unwrap().mean;
            let base_d = cell_size_deviation(&l, &w, true).unwrap();
            let tol = 1e-9;
            prop_assert!((unused_space(&l, &moved, 1.0).unwrap() - base_u).abs() < tol);
            prop_assert!((average_skew(&l, &moved).unwrap().mean - base_s).abs() < tol);
            prop_assert!((cell_size_deviation(&l, &moved, true).unwrap() - base_d).abs() < tol);
            prop_assert!((unused_space(&l, &scaled, scale * scale).unwrap() - base_u).abs() < tol);
            prop_assert!((average_skew(&l, &scaled).unwrap().mean - base_s).abs() < tol);
            prop_assert!((cell_size_deviation(&l, &scaled, true).unwrap() - base_d).abs() < tol);
        }
    }
}
