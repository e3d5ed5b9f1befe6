//! Inverse kinematics through a PLSOM trained on joint configurations.
//!
//! The map lives in joint space; after training each node is labelled with
//! the end-effector position of its joint weights. A target is solved by
//! taking the node with the closest label, building a local basis from its
//! lattice neighbors, orthogonalizing that basis in position space and
//! replaying the same combination on the joint-space side.

use std::f64::consts::FRAC_PI_2;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{init_weights, InitScheme, Lattice, WeightMatrix};
use crate::plsom::{PlsomParams, PlsomTrainer};
use crate::rng::{streams, SeedStream};
use crate::trainer::Trainer;

/// Serial arm: joint 0 yaws the whole arm about `z`; every later joint
/// pitches within the vertical arm plane. Link `k` follows joint `k`, so
/// with all joints at zero the arm lies along `+x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub link_lengths: Vec<f64>,
    pub joint_limits: Vec<[f64; 2]>,
}

impl Default for ArmModel {
    /// A 3-DOF arm with a short shoulder offset and an elbow that only bends
    /// one way, so every reachable position has a single joint solution.
    fn default() -> Self {
        ArmModel {
            link_lengths: vec![0.1, 0.4, 0.3],
            joint_limits: vec![[-FRAC_PI_2, FRAC_PI_2], [-0.3, 1.2], [-2.0, -0.3]],
        }
    }
}

impl ArmModel {
    pub fn new(link_lengths: Vec<f64>, joint_limits: Vec<[f64; 2]>) -> Result<Self> {
        let arm = ArmModel { link_lengths, joint_limits };
        arm.validate()?;
        Ok(arm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.is_empty() || self.link_lengths.len() != self.joint_limits.len() {
            return Err(Error::invalid("arm needs one joint limit per link and at least one link"));
        }
        if self.link_lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("link lengths must be positive and finite"));
        }
        if self.joint_limits.iter().any(|[lo, hi]| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::invalid("joint limits must be finite with min < max"));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn within_limits(&self, joints: &[f64]) -> bool {
        joints.len() == self.dof() && joints.iter().zip(&self.joint_limits).all(|(q, [lo, hi])| q >= lo && q <= hi)
    }

    /// Joint vector to `[0, 1]^dof`.
    pub fn normalize(&self, joints: &[f64], out: &mut [f64]) {
        for ((o, q), [lo, hi]) in out.iter_mut().zip(joints).zip(&self.joint_limits) {
            *o = (q - lo) / (hi - lo);
        }
    }

    pub fn denormalize(&self, unit: &[f64], out: &mut [f64]) {
        for ((o, u), [lo, hi]) in out.iter_mut().zip(unit).zip(&self.joint_limits) {
            *o = lo + u * (hi - lo);
        }
    }

    pub fn clamp(&self, joints: &mut [f64]) -> bool {
        let mut clamped = false;
        for (q, [lo, hi]) in joints.iter_mut().zip(&self.joint_limits) {
            let c = q.clamp(*lo, *hi);
            clamped |= c != *q;
            *q = c;
        }
        clamped
    }
}

/// End-effector position for `joints`.
pub fn forward_kinematics(arm: &ArmModel, joints: &[f64]) -> Result<[f64; 3]> {
    if joints.len() != arm.dof() {
        return Err(Error::DimensionMismatch { expected: arm.dof(), got: joints.len() });
    }
    if !arm.within_limits(joints) {
        return Err(Error::invalid(format!("joints {joints:?} outside limits {:?}", arm.joint_limits)));
    }
    Ok(fk_unchecked(arm, joints))
}

fn fk_unchecked(arm: &ArmModel, joints: &[f64]) -> [f64; 3] {
    let mut radial = 0.0;
    let mut z = 0.0;
    let mut pitch = 0.0;
    for (k, l) in arm.link_lengths.iter().enumerate() {
        if k > 0 {
            pitch += joints[k];
        }
        radial += l * pitch.cos();
        z += l * pitch.sin();
    }
    let (s, c) = joints[0].sin_cos();
    [radial * c, radial * s, z]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Classical Gram-Schmidt without normalization. `coeffs[k][j]` (j < k) is
/// the multiple of output `j` subtracted from input `k`, so the same
/// combination can be replayed on another set of vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramSchmidt {
    pub basis: [[f64; 3]; 3],
    pub coeffs: [[f64; 3]; 3],
    /// Outputs that came out (numerically) zero.
    pub dropped: [bool; 3],
}

impl GramSchmidt {
    pub fn rank(&self) -> usize {
        self.dropped.iter().filter(|d| !**d).count()
    }
}

/// Relative length below which an orthogonalized vector counts as zero.
const GS_DEPENDENT: f64 = 1e-10;

pub fn gram_schmidt(v: [[f64; 3]; 3]) -> GramSchmidt {
    let mut basis = [[0.0; 3]; 3];
    let mut coeffs = [[0.0; 3]; 3];
    let mut dropped = [false; 3];
    for k in 0..3 {
        let mut u = v[k];
        for j in 0..k {
            if dropped[j] {
                continue;
            }
            let c = dot(&v[k], &basis[j]) / dot(&basis[j], &basis[j]);
            coeffs[k][j] = c;
            for a in 0..3 {
                u[a] -= c * basis[j][a];
            }
        }
        let n2 = dot(&u, &u);
        if n2 == 0.0 || n2 <= GS_DEPENDENT * GS_DEPENDENT * dot(&v[k], &v[k]) {
            dropped[k] = true;
            coeffs[k] = [0.0; 3];
            u = [0.0; 3];
        }
        basis[k] = u;
    }
    GramSchmidt { basis, coeffs, dropped }
}

/// Trained map: joint-space weights plus the position label of each node.
#[derive(Debug, Clone, PartialEq)]
pub struct IkMap {
    pub arm: ArmModel,
    pub lattice: Lattice,
    pub weights: WeightMatrix,
    pub labels: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IkMapMeta {
    arm: ArmModel,
    lattice: Lattice,
}

/// Sidecar paths for a map stored at `weights_path`.
pub fn map_file_paths(weights_path: &Path) -> (PathBuf, PathBuf) {
    let stem = weights_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = weights_path.parent().unwrap_or(Path::new(""));
    (dir.join(format!("{stem}.labels.csv")), dir.join(format!("{stem}.meta.json")))
}

impl IkMap {
    pub fn from_weights(arm: ArmModel, lattice: Lattice, weights: WeightMatrix) -> Result<Self> {
        arm.validate()?;
        if lattice.dims() != 3 {
            return Err(Error::invalid(format!("IK maps need a 3-D lattice, got {lattice}")));
        }
        if weights.node_count() != lattice.node_count() || weights.input_dim() != arm.dof() {
            return Err(Error::invalid("weights do not match the lattice and arm"));
        }
        let mut map = IkMap { arm, lattice, weights, labels: Vec::new() };
        map.relabel()?;
        Ok(map)
    }

    /// Recompute every label from the node's joint weights.
    pub fn relabel(&mut self) -> Result<()> {
        self.labels = self.weights.rows().map(|w| forward_kinematics(&self.arm, w)).collect::<Result<_>>()?;
        Ok(())
    }

    /// Mean distance from each probe position to the closest label.
    pub fn quantization_error(&self, probes: &[[f64; 3]]) -> f64 {
        let total: f64 = probes.iter().map(|p| dist2(&self.labels[self.nearest_full(p)], p).sqrt()).sum();
        total / probes.len().max(1) as f64
    }

    fn nearest_full(&self, target: &[f64; 3]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, l) in self.labels.iter().enumerate() {
            let d = dist2(l, target);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Write weights to `path` with labels and metadata alongside.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.weights.save_csv(path)?;
        let (labels, meta) = map_file_paths(path);
        let file = std::fs::File::create(&labels).map_err(|e| Error::io(&labels, e))?;
        self.write_labels(file)?;
        let json = serde_json::to_vec_pretty(&IkMapMeta { arm: self.arm.clone(), lattice: self.lattice.clone() })?;
        std::fs::write(&meta, json).map_err(|e| Error::io(&meta, e))
    }

    pub fn write_labels<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["node_index", "x", "y", "z"])?;
        for (i, l) in self.labels.iter().enumerate() {
            wtr.write_record([i.to_string(), format!("{:?}", l[0]), format!("{:?}", l[1]), format!("{:?}", l[2])])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Load a map written by [`IkMap::save`]. Labels are recomputed and
    /// checked against the stored ones.
    pub fn load(path: &Path) -> Result<Self> {
        let (labels_path, meta_path) = map_file_paths(path);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: IkMapMeta = serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e.to_string()))?;
        let weights = WeightMatrix::load_csv(path)?;
        let map = IkMap::from_weights(meta.arm, meta.lattice, weights)?;
        let file = std::fs::File::open(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
        let stored = read_labels(file, &labels_path)?;
        if stored.len() != map.labels.len() {
            return Err(Error::parse(&labels_path, "label count does not match the weights"));
        }
        let tol = 1e-9 * map.arm.reach();
        if stored.iter().zip(&map.labels).any(|(a, b)| dist2(a, b).sqrt() > tol) {
            return Err(Error::parse(&labels_path, "labels do not match the forward kinematics of the weights"));
        }
        Ok(map)
    }
}

fn read_labels<R: Read>(input: R, origin: &Path) -> Result<Vec<[f64; 3]>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::parse(origin, format!("expected 4 columns, got {}", rec.len())));
        }
        let mut p = [0.0; 3];
        for (k, v) in p.iter_mut().enumerate() {
            *v = rec[k + 1].trim().parse().map_err(|_| Error::parse(origin, format!("bad number {:?}", &rec[k + 1])))?;
        }
        out.push(p);
    }
    Ok(out)
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    dot(&d, &d)
}

/// Training run for an IK map. The PLSOM is trained in normalized joint
/// coordinates so every joint counts equally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkTraining {
    pub params: PlsomParams,
    pub iterations: u64,
    pub seed: u64,
    pub init: InitScheme,
}

impl IkTraining {
    /// Defaults used for the bundled arm: affine neighborhood width scaled
    /// with the lattice.
    pub fn for_lattice(lattice: &Lattice, iterations: u64, seed: u64) -> Result<Self> {
        let extent = *lattice.extents().iter().max().unwrap_or(&1) as f64;
        Ok(IkTraining { params: PlsomParams::affine(extent.max(2.0))?, iterations, seed, init: InitScheme::default() })
    }
}

/// Uniform random joint configuration in normalized coordinates.
fn sample_unit(rng: &mut SeedStream, out: &mut [f64]) {
    for o in out.iter_mut() {
        *o = rng.uniform();
    }
}

pub fn train_ik_map(arm: &ArmModel, lattice: Lattice, training: &IkTraining) -> Result<IkMap> {
    Ok(train_ik_map_traced(arm, lattice, training, 0, &[])?.0)
}

/// As [`train_ik_map`], also recording the quantization error over
/// `probes` at `checkpoints` log-spaced iterations, the last one at the end
/// of training.
pub fn train_ik_map_traced(
    arm: &ArmModel,
    lattice: Lattice,
    training: &IkTraining,
    checkpoints: u64,
    probes: &[[f64; 3]],
) -> Result<(IkMap, Vec<(u64, f64)>)> {
    arm.validate()?;
    if lattice.dims() != 3 {
        return Err(Error::invalid(format!("IK maps need a 3-D lattice, got {lattice}")));
    }
    let dof = arm.dof();
    let unit = init_weights(&lattice, dof, training.seed, training.init)?;
    let mut trainer = PlsomTrainer::new(lattice.clone(), training.params, unit)?;
    let mut rng = SeedStream::new(training.seed, streams::INPUT);
    let mut x = vec![0.0; dof];
    let mut trace = Vec::new();
    let mut marks: Vec<u64> = (1..=checkpoints)
        .map(|k| ((training.iterations as f64).powf(k as f64 / checkpoints as f64).round() as u64).max(1))
        .collect();
    marks.dedup();
    let mut next_mark = 0;
    for t in 1..=training.iterations {
        sample_unit(&mut rng, &mut x);
        trainer.step(&x)?;
        while next_mark < marks.len() && marks[next_mark] == t {
            let map = to_joint_map(arm, &lattice, trainer.weights())?;
            trace.push((t, map.quantization_error(probes)));
            next_mark += 1;
        }
    }
    let map = to_joint_map(arm, &lattice, trainer.weights())?;
    Ok((map, trace))
}

fn to_joint_map(arm: &ArmModel, lattice: &Lattice, unit: &WeightMatrix) -> Result<IkMap> {
    let dof = arm.dof();
    let mut joints = vec![0.0; unit.node_count() * dof];
    for (row, out) in unit.rows().zip(joints.chunks_exact_mut(dof)) {
        arm.denormalize(row, out);
        // PLSOM updates are convex combinations of in-range inputs, so this
        // only trims rounding at the limits
        arm.clamp(out);
    }
    IkMap::from_weights(arm.clone(), lattice.clone(), WeightMatrix::from_flat(unit.node_count(), dof, joints)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub joints: Vec<f64>,
    pub node: usize,
    /// Rank of the orthogonalized local basis (3 unless degenerate).
    pub rank: usize,
    pub degenerate: bool,
    /// Interpolated joints had to be clamped into the limits.
    pub clamped: bool,
}

/// Uniform bucket grid over the labels for exact radius-bounded search.
#[derive(Debug, Clone)]
struct LabelGrid {
    lo: [f64; 3],
    inv_cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    nodes: Vec<u32>,
}

impl LabelGrid {
    fn new(labels: &[[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for l in labels {
            for k in 0..3 {
                lo[k] = lo[k].min(l[k]);
                hi[k] = hi[k].max(l[k]);
            }
        }
        let span = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max).max(1e-12);
        let volume: f64 = (0..3).map(|k| (hi[k] - lo[k]).max(span * 1e-3)).product();
        // about one label per bucket
        let cell = (volume / labels.len().max(1) as f64).cbrt();
        let inv_cell = 1.0 / cell;
        let dims = [0, 1, 2].map(|k| (((hi[k] - lo[k]) * inv_cell).floor() as usize + 1).min(1 << 10));
        let mut grid = LabelGrid { lo, inv_cell, dims, starts: Vec::new(), nodes: Vec::new() };
        let keys: Vec<usize> = labels.iter().map(|l| grid.key(grid.cell_of(l))).collect();
        let mut counts = vec![0u32; dims[0] * dims[1] * dims[2] + 1];
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut nodes = vec![0u32; labels.len()];
        for (i, &k) in keys.iter().enumerate() {
            nodes[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.nodes = nodes;
        grid
    }

    fn axis_cell(&self, k: usize, v: f64) -> usize {
        let c = ((v - self.lo[k]) * self.inv_cell).floor();
        c.clamp(0.0, (self.dims[k] - 1) as f64) as usize
    }

    fn cell_of(&self, p: &[f64; 3]) -> [usize; 3] {
        [0, 1, 2].map(|k| self.axis_cell(k, p[k]))
    }

    fn key(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    /// Improve `(best, best_d2)` to the exact nearest label; only buckets
    /// within the current best distance are visited.
    fn refine(&self, labels: &[[f64; 3]], target: &[f64; 3], best: &mut usize, best_d2: &mut f64) {
        let r = best_d2.sqrt();
        let lo = [0, 1, 2].map(|k| self.axis_cell(k, target[k] - r));
        let hi = [0, 1, 2].map(|k| self.axis_cell(k, target[k] + r));
        for a in lo[0]..=hi[0] {
            for b in lo[1]..=hi[1] {
                for c in lo[2]..=hi[2] {
                    let key = self.key([a, b, c]);
                    for &n in &self.nodes[self.starts[key] as usize..self.starts[key + 1] as usize] {
                        let n = n as usize;
                        let d = dist2(&labels[n], target);
                        if d < *best_d2 || (d == *best_d2 && n < *best) {
                            *best = n;
                            *best_d2 = d;
                        }
                    }
                }
            }
        }
    }
}

/// Solver handle with a warm-start cursor; one per thread.
///
/// The nearest label is found by hill-climbing over lattice neighbors from
/// the last node used, then confirmed with a bucket search bounded by the
/// hill-climb distance, so the result is always the exact nearest label.
#[derive(Debug)]
pub struct IkSolver<'a> {
    map: &'a IkMap,
    cursor: Option<usize>,
    /// Lattice neighbors of node `i` are `neighbors[offsets[i]..offsets[i + 1]]`.
    offsets: Vec<u32>,
    neighbors: Vec<u32>,
    grid: LabelGrid,
    /// Solves where the hill-climb stopped at a local minimum.
    pub corrections: u64,
}

impl<'a> IkSolver<'a> {
    pub fn new(map: &'a IkMap) -> Self {
        let l = &map.lattice;
        let ext = l.extents().to_vec();
        let mut offsets = Vec::with_capacity(l.node_count() + 1);
        let mut neighbors = Vec::with_capacity(26 * l.node_count());
        offsets.push(0);
        for i in 0..l.node_count() {
            let c = l.coords(i).to_vec();
            for d0 in -1i64..=1 {
                for d1 in -1i64..=1 {
                    for d2 in -1i64..=1 {
                        if d0 == 0 && d1 == 0 && d2 == 0 {
                            continue;
                        }
                        let q = [c[0] as i64 + d0, c[1] as i64 + d1, c[2] as i64 + d2];
                        if q.iter().zip(&ext).all(|(&v, &e)| v >= 0 && v < e as i64) {
                            let idx = q[0] as usize * l.stride(0) + q[1] as usize * l.stride(1) + q[2] as usize * l.stride(2);
                            neighbors.push(idx as u32);
                        }
                    }
                }
            }
            offsets.push(neighbors.len() as u32);
        }
        IkSolver { map, cursor: None, offsets, neighbors, grid: LabelGrid::new(&map.labels), corrections: 0 }
    }

    pub fn reset(&mut self) {
        self.cursor = None;
    }

    /// Index of the closest label (lowest index on ties).
    pub fn nearest(&mut self, target: &[f64; 3]) -> usize {
        let labels = &self.map.labels;
        let start = match self.cursor {
            Some(c) => c,
            None => self.grid.nodes[self.grid.starts[self.grid.key(self.grid.cell_of(target))] as usize..]
                .first()
                .map_or(0, |&n| n as usize),
        };
        let mut cur = start;
        let mut cur_d = dist2(&labels[cur], target);
        loop {
            let mut moved = false;
            for &j in &self.neighbors[self.offsets[cur] as usize..self.offsets[cur + 1] as usize] {
                let j = j as usize;
                let d = dist2(&labels[j], target);
                if d < cur_d || (d == cur_d && j < cur) {
                    cur = j;
                    cur_d = d;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        let climbed = cur;
        self.grid.refine(labels, target, &mut cur, &mut cur_d);
        if cur != climbed {
            self.corrections += 1;
        }
        self.cursor = Some(cur);
        cur
    }

    pub fn solve(&mut self, target: &[f64; 3]) -> Result<IkSolution> {
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("IK target"));
        }
        let node = self.nearest(target);
        let map = self.map;
        let l = &map.lattice;
        let c = l.coords(node);
        let dof = map.arm.dof();
        let base_label = map.labels[node];
        let base_joints = map.weights.row(node);
        let mut label_vecs = [[0.0; 3]; 3];
        let mut joint_vecs = vec![vec![0.0; dof]; 3];
        for axis in 0..3 {
            let up = (c[axis] as usize) + 1 < l.extents()[axis];
            let nb = if up { node + l.stride(axis) } else { node - l.stride(axis) };
            for k in 0..3 {
                label_vecs[axis][k] = map.labels[nb][k] - base_label[k];
            }
            for k in 0..dof {
                joint_vecs[axis][k] = map.weights.row(nb)[k] - base_joints[k];
            }
        }
        let gs = gram_schmidt(label_vecs);
        // replay the orthogonalization on the joint side
        let mut joint_basis = joint_vecs.clone();
        for k in 0..3 {
            for j in 0..k {
                let cj = gs.coeffs[k][j];
                if cj != 0.0 {
                    for a in 0..dof {
                        joint_basis[k][a] -= cj * joint_basis[j][a];
                    }
                }
            }
        }
        let delta = [target[0] - base_label[0], target[1] - base_label[1], target[2] - base_label[2]];
        let mut joints = base_joints.to_vec();
        for k in 0..3 {
            if gs.dropped[k] {
                continue;
            }
            let a = dot(&delta, &gs.basis[k]) / dot(&gs.basis[k], &gs.basis[k]);
            for (q, b) in joints.iter_mut().zip(&joint_basis[k]) {
                *q += a * b;
            }
        }
        let clamped = map.arm.clamp(&mut joints);
        let rank = gs.rank();
        Ok(IkSolution { joints, node, rank, degenerate: rank < 3, clamped })
    }
}

/// Positions of uniformly random joint configurations drawn from the
/// central `fraction` of each joint range.
pub fn interior_targets(arm: &ArmModel, count: usize, fraction: f64, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = SeedStream::new(seed, streams::MONTE_CARLO);
    let dof = arm.dof();
    let mut unit = vec![0.0; dof];
    let mut q = vec![0.0; dof];
    (0..count)
        .map(|_| {
            for u in unit.iter_mut() {
                *u = 0.5 + fraction * (rng.uniform() - 0.5);
            }
            arm.denormalize(&unit, &mut q);
            fk_unchecked(arm, &q)
        })
        .collect()
}
