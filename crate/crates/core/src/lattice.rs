//! Output-space grid, weight storage, winner search and initialization.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMetric {
    #[default]
    Euclidean,
    Manhattan,
}

/// A rectangular node grid. Node indices are row-major: the last extent
/// varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeRepr", into = "LatticeRepr")]
pub struct Lattice {
    extents: Vec<usize>,
    metric: GridMetric,
    strides: Vec<usize>,
    coords: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct LatticeRepr {
    extents: Vec<usize>,
    #[serde(default)]
    metric: GridMetric,
}

impl TryFrom<LatticeRepr> for Lattice {
    type Error = Error;
    fn try_from(r: LatticeRepr) -> Result<Self> {
        Lattice::new(r.extents, r.metric)
    }
}

impl From<Lattice> for LatticeRepr {
    fn from(l: Lattice) -> Self {
        LatticeRepr { extents: l.extents, metric: l.metric }
    }
}

impl Lattice {
    pub fn new(extents: Vec<usize>, metric: GridMetric) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::invalid("lattice needs at least one extent"));
        }
        if let Some(&bad) = extents.iter().find(|&&e| e == 0) {
            return Err(Error::invalid(format!("lattice extent must be >= 1, got {bad}")));
        }
        let node_count = extents
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::invalid("lattice node count overflows"))?;
        let dims = extents.len();
        let mut strides = vec![1; dims];
        for k in (0..dims - 1).rev() {
            strides[k] = strides[k + 1] * extents[k + 1];
        }
        let mut coords = Vec::with_capacity(node_count * dims);
        for i in 0..node_count {
            for k in 0..dims {
                coords.push(((i / strides[k]) % extents[k]) as u32);
            }
        }
        Ok(Lattice { extents, metric, strides, coords })
    }

    pub fn euclidean(extents: &[usize]) -> Result<Self> {
        Lattice::new(extents.to_vec(), GridMetric::Euclidean)
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn metric(&self) -> GridMetric {
        self.metric
    }

    pub fn dims(&self) -> usize {
        self.extents.len()
    }

    pub fn node_count(&self) -> usize {
        self.coords.len() / self.extents.len()
    }

    pub fn coords(&self, i: usize) -> &[u32] {
        let d = self.dims();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn index_of(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dims() {
            return Err(Error::DimensionMismatch { expected: self.dims(), got: coords.len() });
        }
        let mut idx = 0;
        for (k, (&c, &e)) in coords.iter().zip(&self.extents).enumerate() {
            if c >= e {
                return Err(Error::IndexOutOfRange { index: c, len: e });
            }
            idx += c * self.strides[k];
        }
        Ok(idx)
    }

    /// Offset of one step along grid axis `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.node_count() {
            return Err(Error::IndexOutOfRange { index: i, len: self.node_count() });
        }
        Ok(())
    }

    pub fn grid_distance(&self, i: usize, c: usize) -> Result<f64> {
        self.check(i)?;
        self.check(c)?;
        Ok(self.grid_distance_sq(i, c).sqrt())
    }

    /// Squared grid distance without bounds checks. For the Manhattan
    /// metric this is the square of the L1 offset.
    #[inline]
    pub(crate) fn grid_distance_sq(&self, i: usize, c: usize) -> f64 {
        let a = self.coords(i);
        let b = self.coords(c);
        match self.metric {
            GridMetric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&p, &q)| {
                    let d = p as f64 - q as f64;
                    d * d
                })
                .sum(),
            GridMetric::Manhattan => {
                let d: f64 = a.iter().zip(b).map(|(&p, &q)| (p as f64 - q as f64).abs()).sum();
                d * d
            }
        }
    }

    /// True when the node lies on the outer shell of the grid.
    pub fn is_boundary(&self, i: usize) -> bool {
        self.coords(i)
            .iter()
            .zip(&self.extents)
            .any(|(&c, &e)| c == 0 || c as usize == e - 1)
    }
}

impl fmt::Display for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.extents.iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

/// Grid extents written as `AxBxC`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Extents(pub Vec<usize>);

impl fmt::Display for Extents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

impl TryFrom<String> for Extents {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Extents> for String {
    fn from(e: Extents) -> String {
        e.to_string()
    }
}

impl FromStr for Extents {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(['x', 'X'])
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("bad grid `{s}`: {e}")))?;
        if parts.is_empty() || parts.contains(&0) {
            return Err(Error::invalid(format!("bad grid `{s}`")));
        }
        Ok(Extents(parts))
    }
}

/// Per-node weight vectors, stored node-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    node_count: usize,
    input_dim: usize,
    weights: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_flat(node_count: usize, input_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be >= 1"));
        }
        if weights.len() != node_count * input_dim {
            return Err(Error::DimensionMismatch { expected: node_count * input_dim, got: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("weight matrix"));
        }
        Ok(WeightMatrix { node_count, input_dim, weights })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(1);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            flat.extend_from_slice(r);
        }
        WeightMatrix::from_flat(rows.len(), dim, flat)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.weights[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.input_dim)
    }

    pub(crate) fn rows_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.weights.chunks_exact_mut(self.input_dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.weights
    }

    #[cfg(test)]
    pub(crate) fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["node_index".to_string()];
        header.extend((0..self.input_dim).map(|k| format!("w_{k}")));
        wtr.write_record(&header)?;
        for (i, row) in self.rows().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(input: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("node_index") || headers.len() < 2 {
            return Err(Error::parse(origin, "expected header `node_index,w_0,...`"));
        }
        let dim = headers.len() - 1;
        let mut flat = Vec::new();
        let mut n = 0usize;
        for rec in rdr.records() {
            let rec = rec?;
            let idx: usize = rec[0]
                .parse()
                .map_err(|_| Error::parse(origin, format!("bad node index `{}`", &rec[0])))?;
            if idx != n {
                return Err(Error::parse(origin, format!("node {idx} out of order, expected {n}")));
            }
            for field in rec.iter().skip(1) {
                flat.push(
                    field
                        .parse::<f64>()
                        .map_err(|_| Error::parse(origin, format!("bad weight `{field}`")))?,
                );
            }
            n += 1;
        }
        WeightMatrix::from_flat(n, dim, flat)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        WeightMatrix::read_csv(std::io::BufReader::new(f), path)
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Best-matching node for `x` and its L2 distance. Ties go to the lowest
/// node index.
pub fn find_winner(x: &[f64], w: &WeightMatrix) -> Result<(usize, f64)> {
    if w.node_count() == 0 {
        return Err(Error::EmptyMap);
    }
    if x.len() != w.input_dim() {
        return Err(Error::DimensionMismatch { expected: w.input_dim(), got: x.len() });
    }
    Ok(winner_unchecked(x, w))
}

#[inline]
pub(crate) fn winner_unchecked(x: &[f64], w: &WeightMatrix) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, row) in w.rows().enumerate() {
        let d = squared_distance(x, row);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    UniformBox { lo: f64, hi: f64 },
    Constant { value: f64 },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::UniformBox { lo: 0.4, hi: 0.6 }
    }
}

/// Deterministic initial weights. Uniform draws come from the `INIT` stream
/// of `seed`, node by node, component by component.
pub fn init_weights(lattice: &Lattice, input_dim: usize, seed: u64, scheme: InitScheme) -> Result<WeightMatrix> {
    if input_dim == 0 {
        return Err(Error::invalid("input dimension must be >= 1"));
    }
    let n = lattice.node_count() * input_dim;
    let flat = match scheme {
        InitScheme::Constant { value } => {
            if !value.is_finite() {
                return Err(Error::NonFinite("constant initial weight"));
            }
            vec![value; n]
        }
        InitScheme::UniformBox { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::NonFinite("initialization box"));
            }
            if lo > hi {
                return Err(Error::invalid(format!("initialization box has lo {lo} > hi {hi}")));
            }
            let mut rng = SeedStream::new(seed, streams::INIT);
            (0..n).map(|_| rng.uniform_range(lo, hi)).collect()
        }
    };
    WeightMatrix::from_flat(lattice.node_count(), input_dim, flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_distance_examples() {
        let l = Lattice::euclidean(&[5, 5]).unwrap();
        let a = l.index_of(&[0, 0]).unwrap();
        let c = l.index_of(&[3, 4]).unwrap();
        assert_eq!(l.grid_distance(a, a).unwrap(), 0.0);
        assert_eq!(l.grid_distance(a, c).unwrap(), 5.0);
        let m = Lattice::new(vec![5, 5], GridMetric::Manhattan).unwrap();
        assert_eq!(m.grid_distance(a, c).unwrap(), 7.0);
    }

    #[test]
    fn grid_distance_out_of_range() {
        let l = Lattice::euclidean(&[2, 2]).unwrap();
        assert!(matches!(l.grid_distance(0, 4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn row_major_bijection() {
        let l = Lattice::euclidean(&[3, 4, 2]).unwrap();
        assert_eq!(l.node_count(), 24);
        for i in 0..l.node_count() {
            let c: Vec<usize> = l.coords(i).iter().map(|&v| v as usize).collect();
            assert_eq!(l.index_of(&c).unwrap(), i);
        }
        assert_eq!(l.index_of(&[0, 1, 0]).unwrap(), 2);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Lattice::euclidean(&[3, 0]).is_err());
        assert!("20x0".parse::<Extents>().is_err());
        assert_eq!("20x20x20".parse::<Extents>().unwrap().0, vec![20, 20, 20]);
    }

    #[test]
    fn winner_examples() {
        let w = WeightMatrix::from_rows(&[[0.1], [0.5], [0.9]]).unwrap();
        let (c, d) = find_winner(&[0.55], &w).unwrap();
        assert_eq!(c, 1);
        assert!((d - 0.05).abs() < 1e-15);

        let rows: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 0.0]).collect();
        let w = WeightMatrix::from_rows(&rows).unwrap();
        assert_eq!(find_winner(&[7.0, 0.0], &w).unwrap(), (7, 0.0));

        let w = WeightMatrix::from_rows(&[[9.0], [9.0], [1.0], [9.0], [9.0], [3.0]]).unwrap();
        let (c, d) = find_winner(&[2.0], &w).unwrap();
        assert_eq!((c, d), (2, 1.0));
    }

    #[test]
    fn winner_errors() {
        let w = WeightMatrix::from_flat(0, 2, vec![]).unwrap();
        assert!(matches!(find_winner(&[0.0, 0.0], &w), Err(Error::EmptyMap)));
        let w = WeightMatrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(matches!(find_winner(&[0.0], &w), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn init_schemes() {
        let l = Lattice::euclidean(&[100, 50]).unwrap();
        let w = init_weights(&l, 2, 3, InitScheme::Constant { value: 0.5 }).unwrap();
        assert!(w.as_flat().iter().all(|&v| v == 0.5));

        let scheme = InitScheme::UniformBox { lo: 0.4, hi: 0.6 };
        let a = init_weights(&l, 2, 11, scheme).unwrap();
        let b = init_weights(&l, 2, 11, scheme).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_flat().len(), 10_000);
        assert!(a.as_flat().iter().all(|v| (0.4..=0.6).contains(v)));

        let bad = InitScheme::UniformBox { lo: 0.6, hi: 0.4 };
        assert!(init_weights(&l, 2, 1, bad).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let l = Lattice::euclidean(&[3, 3]).unwrap();
        let w = init_weights(&l, 2, 5, InitScheme::default()).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("node_index,w_0,w_1\n"));
        let back = WeightMatrix::read_csv(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, w);
    }

    proptest! {
        #[test]
        fn winner_matches_brute_force(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..40),
            x in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let w = WeightMatrix::from_rows(&rows).unwrap();
            let (c, _) = find_winner(&x, &w).unwrap();
            let dists: Vec<f64> = rows.iter().map(|r| squared_distance(&x, r)).collect();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let first = dists.iter().position(|&d| d == min).unwrap();
            prop_assert_eq!(c, first);
        }

        #[test]
        fn grid_distance_is_a_metric(
            ex in prop::collection::vec(1usize..6, 1..4),
            picks in prop::collection::vec(0usize..1000, 3),
            manhattan in any::<bool>(),
        ) {
            let metric = if manhattan { GridMetric::Manhattan } else { GridMetric::Euclidean };
            let l = Lattice::new(ex, metric).unwrap();
            let n = l.node_count();
            let (a, b, c) = (picks[0] % n, picks[1] % n, picks[2] % n);
            let ab = l.grid_distance(a, b).unwrap();
            let ba = l.grid_distance(b, a).unwrap();
            let bc = l.grid_distance(b, c).unwrap();
            let ac = l.grid_distance(a, c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(ab == 0.0, a == b);
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
