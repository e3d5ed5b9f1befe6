//! Scripted training runs: a lattice, one or more trainers fed the same
//! input stream, and a schedule of input distributions.
//!
//! Specs are TOML with a flat key set:
//!
//! ```toml
//! name = "plasticity"
//! seed = 1
//! lattice = "20x20"
//! metric_every = 250          # optional, default 250
//! total_area = 1.0            # optional, area the unused-space metric refers to
//! snapshots = [5000]          # optional extra weight snapshots
//! field_at = [10000]          # optional integrated expected-displacement fields
//! field_grid = 200            # optional midpoint points per axis for those fields
//! init = { scheme = "uniform_box", lo = 0.4, hi = 0.6 }   # or constant / folded
//!
//! [[trainer]]
//! kind = "plsom"              # beta, theta_min, variant, forced_r, lattice
//! name = "plsom"
//!
//! [[trainer]]
//! kind = "som"                # alpha0, beta0, horizon_fraction, final_fraction, lattice
//! name = "som"
//!
//! [[phase]]
//! iterations = 50000
//! distribution = "uniform"    # or clipped_gaussian with mean and sd
//! lo = [0.0, 0.0]
//! hi = [0.5, 0.5]
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{integrated_expected_displacement, InputDistribution, Quadrature};
use crate::lattice::{init_weights, Extents, InitScheme, Lattice, WeightMatrix};
use crate::metrics::{nodes_in_box, write_metrics_csv, MetricsSample};
use crate::plsom::{PlsomParams, PlsomTrainer, ThetaVariant};
use crate::rng::{streams, SeedStream};
use crate::som::{SomParams, SomTrainer};
use crate::trainer::{AnyTrainer, Trainer};

pub const DEFAULT_METRIC_EVERY: u64 = 250;
pub const DEFAULT_FIELD_GRID: usize = 200;

/// Margin of the folded start configuration inside the unit square.
const FOLD_MARGIN: f64 = 0.1;
/// Horizontal offset that keeps folded-back columns from landing on the
/// columns they mirror.
const FOLD_OFFSET: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    UniformBox { lo: f64, hi: f64 },
    Constant { value: f64 },
    /// Regular grid over `[0.1, 0.9]^2` whose upper half along the first
    /// axis is folded back over the lower half, so roughly half the cells
    /// are mirrored.
    Folded,
}

impl Default for InitSpec {
    fn default() -> Self {
        match InitScheme::default() {
            InitScheme::UniformBox { lo, hi } => InitSpec::UniformBox { lo, hi },
            InitScheme::Constant { value } => InitSpec::Constant { value },
        }
    }
}

impl InitSpec {
    pub fn build(&self, lattice: &Lattice, input_dim: usize, seed: u64) -> Result<WeightMatrix> {
        match *self {
            InitSpec::UniformBox { lo, hi } => init_weights(lattice, input_dim, seed, InitScheme::UniformBox { lo, hi }),
            InitSpec::Constant { value } => init_weights(lattice, input_dim, seed, InitScheme::Constant { value }),
            InitSpec::Folded => folded_weights(lattice, input_dim),
        }
    }
}

/// The folded start: node `(i, j)` of an `n0 x n1` lattice sits at
/// `(0.1 + 0.8 f(i / (n0 - 1)), 0.1 + 0.8 j / (n1 - 1))` with `f(u) = u`
/// for `u <= 1/2` and `f(u) = 1 - u + 0.04` above.
pub fn folded_weights(lattice: &Lattice, input_dim: usize) -> Result<WeightMatrix> {
    let ext = lattice.extents();
    if ext.len() != 2 || input_dim != 2 || ext.iter().any(|&e| e < 2) {
        return Err(Error::invalid("folded initialization needs a 2-D lattice (each extent >= 2) and 2-D input"));
    }
    let span = 1.0 - 2.0 * FOLD_MARGIN;
    let rows: Vec<[f64; 2]> = (0..lattice.node_count())
        .map(|i| {
            let c = lattice.coords(i);
            let u = c[0] as f64 / (ext[0] - 1) as f64;
            let v = c[1] as f64 / (ext[1] - 1) as f64;
            let f = if u <= 0.5 { u } else { 1.0 - u + FOLD_OFFSET };
            [FOLD_MARGIN + span * f, FOLD_MARGIN + span * v]
        })
        .collect();
    WeightMatrix::from_rows(&rows)
}

fn default_alpha0() -> f64 {
    0.9
}
fn default_one() -> f64 {
    1.0
}
fn default_final_fraction() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainerSpec {
    /// Annealed SOM. `beta0` defaults to half the larger grid extent; alpha
    /// and beta reach `final_fraction` of their start values after
    /// `horizon_fraction` of the whole schedule.
    Som {
        name: String,
        #[serde(default)]
        lattice: Option<Extents>,
        #[serde(default = "default_alpha0")]
        alpha0: f64,
        #[serde(default)]
        beta0: Option<f64>,
        #[serde(default = "default_one")]
        horizon_fraction: f64,
        #[serde(default = "default_final_fraction")]
        final_fraction: f64,
    },
    /// `beta` defaults to half the larger grid extent, `theta_min` to 0 for
    /// the log variant and 1 otherwise.
    Plsom {
        name: String,
        #[serde(default)]
        lattice: Option<Extents>,
        #[serde(default)]
        beta: Option<f64>,
        #[serde(default)]
        theta_min: Option<f64>,
        #[serde(default)]
        variant: ThetaVariant,
        #[serde(default)]
        forced_r: Option<f64>,
    },
}

impl TrainerSpec {
    pub fn name(&self) -> &str {
        match self {
            TrainerSpec::Som { name, .. } | TrainerSpec::Plsom { name, .. } => name,
        }
    }

    fn lattice_override(&self) -> Option<&Extents> {
        match self {
            TrainerSpec::Som { lattice, .. } | TrainerSpec::Plsom { lattice, .. } => lattice.as_ref(),
        }
    }

    pub fn som(name: &str, horizon_fraction: f64) -> Self {
        TrainerSpec::Som {
            name: name.to_string(),
            lattice: None,
            alpha0: default_alpha0(),
            beta0: None,
            horizon_fraction,
            final_fraction: default_final_fraction(),
        }
    }

    pub fn plsom(name: &str) -> Self {
        TrainerSpec::Plsom {
            name: name.to_string(),
            lattice: None,
            beta: None,
            theta_min: None,
            variant: ThetaVariant::default(),
            forced_r: None,
        }
    }

    pub fn with_lattice(mut self, extents: &[usize]) -> Self {
        match &mut self {
            TrainerSpec::Som { lattice, .. } | TrainerSpec::Plsom { lattice, .. } => {
                *lattice = Some(Extents(extents.to_vec()))
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionName {
    Uniform,
    ClippedGaussian,
}

fn unit_lo() -> Vec<f64> {
    vec![0.0, 0.0]
}
fn unit_hi() -> Vec<f64> {
    vec![1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub iterations: u64,
    pub distribution: DistributionName,
    #[serde(default = "unit_lo")]
    pub lo: Vec<f64>,
    #[serde(default = "unit_hi")]
    pub hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
}

impl PhaseSpec {
    pub fn uniform(iterations: u64, lo: f64, hi: f64) -> Self {
        PhaseSpec {
            iterations,
            distribution: DistributionName::Uniform,
            lo: vec![lo; 2],
            hi: vec![hi; 2],
            mean: None,
            sd: None,
        }
    }

    pub fn clipped_gaussian(iterations: u64, mean: f64, sd: f64) -> Self {
        PhaseSpec {
            iterations,
            distribution: DistributionName::ClippedGaussian,
            lo: unit_lo(),
            hi: unit_hi(),
            mean: Some(vec![mean; 2]),
            sd: Some(sd),
        }
    }

    pub fn input_distribution(&self) -> Result<InputDistribution> {
        match self.distribution {
            DistributionName::Uniform => {
                if self.mean.is_some() || self.sd.is_some() {
                    return Err(Error::invalid("uniform phases take no mean or sd"));
                }
                InputDistribution::uniform(self.lo.clone(), self.hi.clone())
            }
            DistributionName::ClippedGaussian => {
                let mean = self.mean.clone().ok_or_else(|| Error::invalid("clipped_gaussian phase needs mean"))?;
                let sd = self.sd.ok_or_else(|| Error::invalid("clipped_gaussian phase needs sd"))?;
                InputDistribution::clipped_gaussian(mean, sd, self.lo.clone(), self.hi.clone())
            }
        }
    }
}

fn default_metric_every() -> u64 {
    DEFAULT_METRIC_EVERY
}
fn default_field_grid() -> usize {
    DEFAULT_FIELD_GRID
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub seed: u64,
    pub lattice: Extents,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default = "default_metric_every")]
    pub metric_every: u64,
    #[serde(default = "default_one")]
    pub total_area: f64,
    #[serde(default)]
    pub snapshots: Vec<u64>,
    #[serde(default)]
    pub field_at: Vec<u64>,
    #[serde(default = "default_field_grid")]
    pub field_grid: usize,
    #[serde(rename = "trainer")]
    pub trainers: Vec<TrainerSpec>,
    #[serde(rename = "phase")]
    pub phases: Vec<PhaseSpec>,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentSpec::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize spec: {e}")))
    }

    pub fn total_iterations(&self) -> u64 {
        self.phases.iter().map(|p| p.iterations).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::invalid("experiment needs at least one phase"));
        }
        if self.trainers.is_empty() {
            return Err(Error::invalid("experiment needs at least one trainer"));
        }
        if self.metric_every == 0 {
            return Err(Error::invalid("metric_every must be >= 1"));
        }
        if !(self.total_area > 0.0 && self.total_area.is_finite()) {
            return Err(Error::invalid(format!("total_area must be > 0, got {}", self.total_area)));
        }
        if self.field_grid < crate::field::MIN_GRID_POINTS {
            return Err(Error::invalid(format!("field_grid must be >= {}", crate::field::MIN_GRID_POINTS)));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.iterations == 0 {
                return Err(Error::invalid(format!("phase {i} has zero iterations")));
            }
            let d = p.input_distribution()?;
            if d.dim() != 2 {
                return Err(Error::invalid(format!("phase {i} is {}-D; experiments use 2-D input", d.dim())));
            }
        }
        let mut names = BTreeSet::new();
        for t in &self.trainers {
            let name = t.name();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                return Err(Error::invalid(format!("trainer name {name:?} must be nonempty [A-Za-z0-9._-]")));
            }
            if !names.insert(name) {
                return Err(Error::invalid(format!("duplicate trainer name {name:?}")));
            }
            let ext = t.lattice_override().unwrap_or(&self.lattice);
            if ext.0.len() != 2 {
                return Err(Error::invalid(format!("trainer {name:?}: experiments use 2-D lattices")));
            }
            let resolved = resolve(t, &Lattice::euclidean(&ext.0)?, self.total_iterations())?;
            if let ResolvedParams::Plsom { forced_r: Some(r), .. } = resolved {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::invalid(format!("trainer {name:?}: forced r must be > 0, got {r}")));
                }
            }
        }
        let total = self.total_iterations();
        for &t in self.snapshots.iter().chain(&self.field_at) {
            if t > total {
                return Err(Error::invalid(format!("requested iteration {t} is past the end of the run ({total})")));
            }
        }
        Ok(())
    }
}

fn half_extent(lattice: &Lattice) -> f64 {
    *lattice.extents().iter().max().unwrap_or(&1) as f64 / 2.0
}

/// Parameters a trainer spec resolves to once the lattice and run length are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResolvedParams {
    Som { params: SomParams, horizon: u64, final_fraction: f64 },
    Plsom { params: PlsomParams, forced_r: Option<f64> },
}

fn resolve(spec: &TrainerSpec, lattice: &Lattice, total: u64) -> Result<ResolvedParams> {
    match *spec {
        TrainerSpec::Som { alpha0, beta0, horizon_fraction, final_fraction, .. } => {
            if !(horizon_fraction > 0.0 && horizon_fraction.is_finite()) {
                return Err(Error::invalid(format!("horizon_fraction must be > 0, got {horizon_fraction}")));
            }
            let horizon = ((total as f64 * horizon_fraction).round() as u64).max(1);
            let params =
                SomParams::annealed_over(alpha0, beta0.unwrap_or_else(|| half_extent(lattice)), horizon, final_fraction)?;
            Ok(ResolvedParams::Som { params, horizon, final_fraction })
        }
        TrainerSpec::Plsom { beta, theta_min, variant, forced_r, .. } => {
            let theta_min = theta_min.unwrap_or(if variant == ThetaVariant::Log { 0.0 } else { 1.0 });
            let params = PlsomParams::new(beta.unwrap_or_else(|| half_extent(lattice)), theta_min, variant)?;
            Ok(ResolvedParams::Plsom { params, forced_r })
        }
    }
}

fn build_trainer(spec: &TrainerSpec, lattice: &Lattice, weights: WeightMatrix, total: u64) -> Result<AnyTrainer> {
    match resolve(spec, lattice, total)? {
        ResolvedParams::Som { params, .. } => Ok(AnyTrainer::Som(SomTrainer::new(lattice.clone(), params, weights)?)),
        ResolvedParams::Plsom { params, forced_r } => {
            let mut t = PlsomTrainer::new(lattice.clone(), params, weights)?;
            t.set_r_override(forced_r)?;
            Ok(AnyTrainer::Plsom(t))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCount {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: usize,
}

/// State at the end of one phase. `boxes` counts nodes inside the support
/// of every phase, so densities can be compared across phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEnd {
    pub phase: usize,
    pub iteration: u64,
    pub metrics: MetricsSample,
    pub covered_fraction: f64,
    pub boxes: Vec<BoxCount>,
}

/// Integrated expected displacement at one iteration, under the
/// distribution of the phase the next input comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub iteration: u64,
    pub phase: usize,
    pub grid: usize,
    /// Mean magnitude over the four corner nodes.
    pub corner_magnitude: f64,
    /// Mean magnitude over the four nodes at the middle of each lattice side.
    pub side_magnitude: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerSummary {
    pub name: String,
    pub kind: String,
    pub lattice: Extents,
    pub resolved: ResolvedParams,
    pub final_metrics: MetricsSample,
    pub covered_fraction: f64,
    pub phase_ends: Vec<PhaseEnd>,
    pub fields: Vec<FieldRecord>,
    pub metrics_file: String,
    pub snapshot_files: Vec<String>,
    /// Final running normalizer of a PLSOM; stays at its start value when r is forced.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub spec: ExperimentSpec,
    pub total_iterations: u64,
    pub trainers: Vec<TrainerSummary>,
}

impl ExperimentSummary {
    pub fn trainer(&self, name: &str) -> Option<&TrainerSummary> {
        self.trainers.iter().find(|t| t.name == name)
    }
}

/// Everything a run produced, before it is written out.
#[derive(Debug, Clone)]
pub struct TrainerRun {
    pub summary: TrainerSummary,
    pub series: Vec<MetricsSample>,
    pub snapshots: Vec<(u64, WeightMatrix)>,
    pub fields: Vec<(u64, crate::field::IntegratedField)>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub summary: ExperimentSummary,
    pub runs: Vec<TrainerRun>,
}

impl ExperimentRun {
    pub fn run(&self, name: &str) -> Option<&TrainerRun> {
        self.runs.iter().find(|r| r.summary.name == name)
    }
}

fn snapshot_file(trainer: &str, iteration: u64) -> String {
    format!("snapshots/{trainer}_{iteration}.csv")
}

fn field_file(trainer: &str, iteration: u64) -> String {
    format!("fields/{trainer}_{iteration}.csv")
}

fn corner_and_side_nodes(lattice: &Lattice) -> Result<(Vec<usize>, Vec<usize>)> {
    let e = lattice.extents();
    let (a, b) = (e[0] - 1, e[1] - 1);
    let corners = [[0, 0], [a, 0], [0, b], [a, b]];
    let sides = [[e[0] / 2, 0], [e[0] / 2, b], [0, e[1] / 2], [a, e[1] / 2]];
    let idx = |c: &[[usize; 2]; 4]| c.iter().map(|c| lattice.index_of(c)).collect::<Result<Vec<_>>>();
    Ok((idx(&corners)?, idx(&sides)?))
}

fn phase_end(
    phase: usize,
    trainer: &AnyTrainer,
    dists: &[InputDistribution],
    total_area: f64,
) -> Result<PhaseEnd> {
    let metrics = MetricsSample::measure(trainer.iteration(), trainer.lattice(), trainer.weights(), total_area)?;
    let boxes = dists
        .iter()
        .map(|d| BoxCount { lo: d.lo.clone(), hi: d.hi.clone(), nodes: nodes_in_box(trainer.weights(), &d.lo, &d.hi) })
        .collect();
    Ok(PhaseEnd { phase, iteration: trainer.iteration(), covered_fraction: 1.0 - metrics.unused_space, metrics, boxes })
}

fn run_trainer(spec: &ExperimentSpec, tspec: &TrainerSpec, dists: &[InputDistribution]) -> Result<TrainerRun> {
    let start = Instant::now();
    let extents = tspec.lattice_override().unwrap_or(&spec.lattice).clone();
    let lattice = Lattice::euclidean(&extents.0)?;
    let total = spec.total_iterations();
    let resolved = resolve(tspec, &lattice, total)?;
    let weights = spec.init.build(&lattice, 2, spec.seed)?;
    let mut trainer = build_trainer(tspec, &lattice, weights, total)?;
    let name = tspec.name().to_string();

    let mut snap_at: BTreeSet<u64> = spec.snapshots.iter().copied().collect();
    snap_at.insert(0);
    let mut boundary = 0;
    for p in &spec.phases {
        boundary += p.iterations;
        snap_at.insert(boundary);
    }
    let field_at: BTreeSet<u64> = spec.field_at.iter().copied().collect();
    let (corners, sides) = corner_and_side_nodes(&lattice)?;

    let mut series = vec![MetricsSample::measure(0, &lattice, trainer.weights(), spec.total_area)?];
    let mut snapshots = Vec::new();
    let mut fields = Vec::new();
    let mut field_records = Vec::new();
    let mut phase_ends = Vec::new();

    let mut capture = |t: u64, phase: usize, trainer: &AnyTrainer| -> Result<()> {
        if snap_at.contains(&t) {
            snapshots.push((t, trainer.weights().clone()));
        }
        if field_at.contains(&t) {
            let field = integrated_expected_displacement(trainer, &dists[phase], Quadrature::Grid { n: spec.field_grid })?;
            let mean = |nodes: &[usize]| nodes.iter().map(|&i| field.magnitude(i)).sum::<f64>() / nodes.len() as f64;
            field_records.push(FieldRecord {
                iteration: t,
                phase,
                grid: spec.field_grid,
                corner_magnitude: mean(&corners),
                side_magnitude: mean(&sides),
                file: field_file(&name, t),
            });
            fields.push((t, field));
        }
        Ok(())
    };

    capture(0, 0, &trainer)?;
    let mut rng = SeedStream::new(spec.seed, streams::INPUT);
    let mut x = [0.0; 2];
    for (pi, (phase, dist)) in spec.phases.iter().zip(dists).enumerate() {
        for k in 0..phase.iterations {
            dist.sample(&mut rng, &mut x);
            trainer.step(&x)?;
            let t = trainer.iteration();
            if t % spec.metric_every == 0 {
                series.push(MetricsSample::measure(t, &lattice, trainer.weights(), spec.total_area)?);
            }
            // An input-boundary iteration belongs to the phase that follows it.
            let next_phase = if k + 1 == phase.iterations && pi + 1 < dists.len() { pi + 1 } else { pi };
            capture(t, next_phase, &trainer)?;
        }
        phase_ends.push(phase_end(pi, &trainer, dists, spec.total_area)?);
    }

    let final_metrics = phase_ends.last().expect("phases nonempty").metrics;
    let final_r = match &trainer {
        AnyTrainer::Plsom(p) => Some(p.state().r),
        AnyTrainer::Som(_) => None,
    };
    let summary = TrainerSummary {
        kind: trainer.kind_name().to_string(),
        lattice: extents,
        resolved,
        covered_fraction: 1.0 - final_metrics.unused_space,
        final_metrics,
        phase_ends,
        fields: field_records,
        metrics_file: format!("metrics_{name}.csv"),
        snapshot_files: snapshots.iter().map(|(t, _)| snapshot_file(&name, *t)).collect(),
        final_r,
        name,
    };
    Ok(TrainerRun { summary, series, snapshots, fields, elapsed_seconds: start.elapsed().as_secs_f64() })
}

/// Train every trainer of `spec` and collect its outputs in memory.
/// Trainers run concurrently; each draws from its own copy of the input
/// stream, so the result does not depend on the worker count.
pub fn execute(spec: &ExperimentSpec) -> Result<ExperimentRun> {
    spec.validate()?;
    let dists = spec.phases.iter().map(PhaseSpec::input_distribution).collect::<Result<Vec<_>>>()?;
    let runs = spec
        .trainers
        .par_iter()
        .map(|t| run_trainer(spec, t, &dists))
        .collect::<Result<Vec<_>>>()?;
    let summary = ExperimentSummary {
        spec: spec.clone(),
        total_iterations: spec.total_iterations(),
        trainers: runs.iter().map(|r| r.summary.clone()).collect(),
    };
    Ok(ExperimentRun { summary, runs })
}

fn create_file(path: &Path) -> Result<fs::File> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write the bundle: `spec.toml`, `summary.json`, one metrics CSV per
/// trainer, weight snapshots and fields. Returns the relative paths written.
pub fn write_bundle(run: &ExperimentRun, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let spec_path = dir.join("spec.toml");
    fs::write(&spec_path, run.summary.spec.to_toml_string()?).map_err(|e| Error::io(&spec_path, e))?;
    written.push("spec.toml".to_string());
    for r in &run.runs {
        let s = &r.summary;
        write_metrics_csv(&r.series, create_file(&dir.join(&s.metrics_file))?)?;
        written.push(s.metrics_file.clone());
        for ((_, w), file) in r.snapshots.iter().zip(&s.snapshot_files) {
            w.write_csv(create_file(&dir.join(file))?)?;
            written.push(file.clone());
        }
        for ((_, f), rec) in r.fields.iter().zip(&s.fields) {
            f.write_csv(create_file(&dir.join(&rec.file))?)?;
            written.push(rec.file.clone());
        }
    }
    write_json(&dir.join("summary.json"), &run.summary)?;
    written.push("summary.json".to_string());
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainerTiming {
    pub name: String,
    pub seconds: f64,
}

/// Run record kept next to the outputs. Unlike the other files it carries
/// wall-clock timings, so it differs between otherwise identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub seed: u64,
    pub workers: usize,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub timings: Vec<TrainerTiming>,
    pub total_seconds: f64,
}

impl Manifest {
    pub fn new(command: Vec<String>, seed: u64, workers: usize, config: serde_json::Value) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            seed,
            workers,
            config,
            outputs: Vec::new(),
            timings: Vec::new(),
            total_seconds: 0.0,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

/// Execute `spec`, write its bundle into `dir` and a manifest beside it.
pub fn run_to_dir(spec: &ExperimentSpec, dir: &Path, command: Vec<String>, workers: usize) -> Result<ExperimentRun> {
    let start = Instant::now();
    let run = execute(spec)?;
    let outputs = write_bundle(&run, dir)?;
    let mut manifest = Manifest::new(command, spec.seed, workers, serde_json::to_value(spec)?);
    manifest.outputs = outputs;
    manifest.timings =
        run.runs.iter().map(|r| TrainerTiming { name: r.summary.name.clone(), seconds: r.elapsed_seconds }).collect();
    manifest.total_seconds = start.elapsed().as_secs_f64();
    manifest.write(dir)?;
    Ok(run)
}

/// Horizon fractions of the SOM annealing sweep used in every comparison.
pub const SOM_HORIZON_SWEEP: [f64; 3] = [0.25, 0.5, 1.0];

fn som_sweep(prefix: &str, extents: Option<&[usize]>) -> Vec<TrainerSpec> {
    SOM_HORIZON_SWEEP
        .iter()
        .map(|&f| {
            let t = TrainerSpec::som(&format!("{prefix}-h{f}"), f);
            match extents {
                Some(e) => t.with_lattice(e),
                None => t,
            }
        })
        .collect()
}

/// Names of the SOM trainers a built-in comparison contains.
pub fn som_sweep_names(prefix: &str) -> Vec<String> {
    SOM_HORIZON_SWEEP.iter().map(|f| format!("{prefix}-h{f}")).collect()
}

pub const BUILTINS: [(&str, &str); 5] = [
    ("uniform-comparison", "20x20 PLSOM and SOM sweep, uniform [0,1]^2, 100000 iterations"),
    ("plasticity", "[0,0.5]^2 for 50000 then [0,1]^2 for 20000"),
    ("memory", "[0,1]^2 for 50000 then [0,0.5]^2 for 20000"),
    ("gaussian-warping", "clipped N(0.5, 0.2) input, 100000 iterations: 20x20 PLSOM, 20x20 and 7x7 SOM sweeps"),
    ("difficult-init", "8x8 log-variant PLSOM from a folded start, beta 11, forced r 0.65"),
];

fn base_spec(name: &str, seed: u64, extents: &[usize], trainers: Vec<TrainerSpec>, phases: Vec<PhaseSpec>) -> ExperimentSpec {
    ExperimentSpec {
        name: name.to_string(),
        seed,
        lattice: Extents(extents.to_vec()),
        init: InitSpec::default(),
        metric_every: DEFAULT_METRIC_EVERY,
        total_area: 1.0,
        snapshots: Vec::new(),
        field_at: Vec::new(),
        field_grid: DEFAULT_FIELD_GRID,
        trainers,
        phases,
    }
}

fn with_plsom(mut rest: Vec<TrainerSpec>) -> Vec<TrainerSpec> {
    rest.insert(0, TrainerSpec::plsom("plsom"));
    rest
}

/// Iterations the difficult-init run lasts.
pub const DIFFICULT_INIT_ITERATIONS: u64 = 2000;

pub fn builtin(name: &str, seed: u64) -> Option<ExperimentSpec> {
    let spec = match name {
        "uniform-comparison" => base_spec(
            name,
            seed,
            &[20, 20],
            with_plsom(som_sweep("som", None)),
            vec![PhaseSpec::uniform(100_000, 0.0, 1.0)],
        ),
        "plasticity" => base_spec(
            name,
            seed,
            &[20, 20],
            with_plsom(som_sweep("som", None)),
            vec![PhaseSpec::uniform(50_000, 0.0, 0.5), PhaseSpec::uniform(20_000, 0.0, 1.0)],
        ),
        "memory" => base_spec(
            name,
            seed,
            &[20, 20],
            with_plsom(som_sweep("som", None)),
            vec![PhaseSpec::uniform(50_000, 0.0, 1.0), PhaseSpec::uniform(20_000, 0.0, 0.5)],
        ),
        "gaussian-warping" => {
            let mut trainers = with_plsom(som_sweep("som", None));
            trainers.extend(som_sweep("som7", Some(&[7, 7])));
            let mut s = base_spec(name, seed, &[20, 20], trainers, vec![PhaseSpec::clipped_gaussian(100_000, 0.5, 0.2)]);
            s.field_at = vec![10_000];
            s
        }
        "difficult-init" => {
            let plsom = TrainerSpec::Plsom {
                name: "plsom".to_string(),
                lattice: None,
                beta: Some(11.0),
                theta_min: Some(0.0),
                variant: ThetaVariant::Log,
                forced_r: Some(0.65),
            };
            let mut s =
                base_spec(name, seed, &[8, 8], vec![plsom], vec![PhaseSpec::uniform(DIFFICULT_INIT_ITERATIONS, 0.0, 1.0)]);
            s.init = InitSpec::Folded;
            s.metric_every = 10;
            s.snapshots = vec![400, 480, 650];
            s
        }
        _ => return None,
    };
    Some(spec)
}

/// First sampled iteration with no flipped cells.
pub fn first_untwisted(series: &[MetricsSample]) -> Option<u64> {
    series.iter().find(|s| s.twist_flips == 0).map(|s| s.iteration)
}

/// Samples after `from` that show flipped cells again.
pub fn retwisted_samples(series: &[MetricsSample], from: u64) -> usize {
    series.iter().filter(|s| s.iteration > from && s.twist_flips > 0).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::topology_twist_indicator;

    fn tiny() -> ExperimentSpec {
        let mut s = builtin("plasticity", 3).unwrap();
        s.lattice = Extents(vec![5, 5]);
        s.phases = vec![PhaseSpec::uniform(300, 0.0, 0.5), PhaseSpec::uniform(200, 0.0, 1.0)];
        s.metric_every = 50;
        s.snapshots = vec![100];
        s.field_at = vec![300];
        s.field_grid = 10;
        s
    }

    #[test]
    fn builtins_validate() {
        for (name, _) in BUILTINS {
            builtin(name, 1).unwrap().validate().unwrap();
        }
        assert!(builtin("nope", 1).is_none());
    }

    #[test]
    fn toml_round_trip() {
        let s = tiny();
        let text = s.to_toml_string().unwrap();
        assert_eq!(ExperimentSpec::from_toml_str(&text, Path::new("x.toml")).unwrap(), s);
    }

    #[test]
    fn documented_keys_parse_and_unknown_keys_fail() {
        let text = r#"
name = "demo"
seed = 4
lattice = "6x6"
init = { scheme = "constant", value = 0.5 }
[[trainer]]
kind = "plsom"
name = "p"
variant = "log"
[[trainer]]
kind = "som"
name = "s"
lattice = "4x4"
horizon_fraction = 0.5
[[phase]]
iterations = 10
distribution = "clipped_gaussian"
mean = [0.5, 0.5]
sd = 0.2
"#;
        let s = ExperimentSpec::from_toml_str(text, Path::new("d.toml")).unwrap();
        assert_eq!(s.metric_every, DEFAULT_METRIC_EVERY);
        assert_eq!(s.trainers[1].lattice_override(), Some(&Extents(vec![4, 4])));
        let bad = text.replace("horizon_fraction", "horizon_fractoin");
        assert!(ExperimentSpec::from_toml_str(&bad, Path::new("d.toml")).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = tiny();
        s.phases.clear();
        assert!(s.validate().is_err());
        let mut s = tiny();
        s.phases[0].iterations = 0;
        assert!(s.validate().is_err());
        let mut s = tiny();
        s.snapshots = vec![10_000];
        assert!(s.validate().is_err());
        let mut s = tiny();
        s.trainers.push(TrainerSpec::plsom("plsom"));
        assert!(s.validate().is_err());
    }

    #[test]
    fn trainers_see_identical_inputs() {
        // Two identically configured trainers must end in the same state.
        let mut s = tiny();
        s.trainers = vec![TrainerSpec::plsom("a"), TrainerSpec::plsom("b")];
        let run = execute(&s).unwrap();
        assert_eq!(run.runs[0].snapshots, run.runs[1].snapshots);
        assert_eq!(run.runs[0].series, run.runs[1].series);
    }

    #[test]
    fn outputs_cover_requested_points() {
        let run = execute(&tiny()).unwrap();
        for r in &run.runs {
            let its: Vec<u64> = r.snapshots.iter().map(|(t, _)| *t).collect();
            assert_eq!(its, vec![0, 100, 300, 500]);
            assert_eq!(r.series.len(), 11);
            assert_eq!(r.summary.phase_ends.len(), 2);
            assert_eq!(r.summary.fields.len(), 1);
            // The field at a phase boundary uses the next phase's input.
            assert_eq!(r.summary.fields[0].phase, 1);
        }
    }

    #[test]
    fn bundle_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let files = write_bundle(&execute(&tiny()).unwrap(), a.path()).unwrap();
        write_bundle(&execute(&tiny()).unwrap(), b.path()).unwrap();
        for f in files {
            assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn folded_start_is_twisted() {
        let l = Lattice::euclidean(&[8, 8]).unwrap();
        let w = folded_weights(&l, 2).unwrap();
        assert!(topology_twist_indicator(&l, &w).unwrap().flipped > 0);
        assert!(w.rows().all(|r| r.iter().all(|&v| (0.1..=0.9).contains(&v))));
    }

    #[test]
    fn forced_r_leaves_running_max_alone() {
        let mut s = builtin("difficult-init", 2).unwrap();
        s.phases[0].iterations = 700;
        let run = execute(&s).unwrap();
        assert_eq!(run.summary.trainers[0].final_r, Some(0.0));
    }

    #[test]
    fn untwist_helpers() {
        let mk = |iteration, twist_flips| MetricsSample {
            iteration,
            unused_space: 0.0,
            avg_skew: 0.0,
            cell_dev_all: 0.0,
            cell_dev_interior: 0.0,
            twist_flips,
        };
        let series = [mk(0, 3), mk(10, 0), mk(20, 1), mk(30, 0), mk(40, 2)];
        assert_eq!(first_untwisted(&series), Some(10));
        assert_eq!(retwisted_samples(&series, 10), 2);
        assert_eq!(first_untwisted(&series[..1]), None);
    }
}
