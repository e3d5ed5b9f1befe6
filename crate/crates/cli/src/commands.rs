use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use plsom::classify::{
    classify_dataset, evaluate, label_and_prune, load_dataset, train_classifier_map, ClassifierConfig, LabeledDataset,
    LabeledMap, SyntheticClusters,
};
use plsom::experiment::{
    builtin, execute, write_bundle, DistributionName, ExperimentSpec, InitSpec, Manifest, PhaseSpec, TrainerSpec,
    TrainerTiming, BUILTINS,
};
use plsom::field::{expected_displacement_map, integrated_expected_displacement, InputDistribution, Quadrature};
use plsom::ik::{forward_kinematics, train_ik_map, IkMap, IkSolver, IkTraining};
use plsom::lattice::{Extents, Lattice, WeightMatrix};
use plsom::metrics::{average_skew, density_vs_radius, topology_twist_indicator, DensityBin, MetricsSample};
use plsom::ordering::{lemma_property_suites, verify_unordered_subspace_with, SweepCheckpoint, VerifierConfig, FULL_SPACING};
use plsom::{AnyTrainer, PlsomParams, PlsomTrainer, SomParams, SomTrainer, ThetaVariant};

use crate::{
    Cli, ClassifyArgs, ClassifyCommand, Command, DistributionArg, DistributionOpts, ExperimentCommand,
    ExperimentRunArgs, FieldArgs, GlobalOpts, IkCommand, IkSolveArgs, IkTrainArgs, MetricsArgs, QuadratureArg,
    TrainArgs, TrainerKind, TrainerOpts, VerifyArgs,
};

pub enum Outcome {
    Success,
    CheckFailed(String),
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Outcome {
    if ok {
        Outcome::Success
    } else {
        Outcome::CheckFailed(msg())
    }
}

/// Shared bookkeeping of one invocation: the output directory and the
/// manifest written at the end.
struct Session {
    out_dir: PathBuf,
    argv: Vec<String>,
    seed: u64,
    workers: usize,
    verbose: bool,
    start: Instant,
    outputs: Vec<String>,
}

impl Session {
    fn new(g: &GlobalOpts, argv: Vec<String>, workers: usize) -> Result<Self> {
        fs::create_dir_all(&g.out_dir).with_context(|| format!("cannot create {}", g.out_dir.display()))?;
        Ok(Session {
            out_dir: g.out_dir.clone(),
            argv,
            seed: g.seed,
            workers,
            verbose: g.verbose,
            start: Instant::now(),
            outputs: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Outputs inside the output directory are listed relative to it.
    fn record(&mut self, path: &Path) {
        let shown = path.strip_prefix(&self.out_dir).unwrap_or(path);
        self.outputs.push(shown.display().to_string());
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        self.record(&path);
        Ok(path)
    }

    fn finish<C: Serialize>(self, name: &str, config: &C) -> Result<()> {
        let mut m = Manifest::new(self.argv, self.seed, self.workers, serde_json::to_value(config)?);
        m.outputs = self.outputs;
        m.total_seconds = self.start.elapsed().as_secs_f64();
        m.timings = vec![TrainerTiming { name: name.to_string(), seconds: m.total_seconds }];
        let path = self.out_dir.join(format!("{name}.manifest.json"));
        fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<Outcome> {
    let workers = cli.global.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        bail!("--workers must be >= 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().context("cannot start worker pool")?;
    if let Command::Experiment(ExperimentCommand::List) = cli.command {
        for (name, about) in BUILTINS {
            println!("{name:20} {about}");
        }
        return Ok(Outcome::Success);
    }
    let session = Session::new(&cli.global, argv, workers)?;
    match cli.command {
        Command::Train(a) => train(session, a),
        Command::Metrics(a) => metrics(session, a),
        Command::ExpectedField(a) => expected_field(session, a),
        Command::VerifyOrdering(a) => verify_ordering(session, a),
        Command::Ik(IkCommand::Train(a)) => ik_train(session, a),
        Command::Ik(IkCommand::Solve(a)) => ik_solve(session, a),
        Command::Classify(ClassifyCommand::Train(a)) => classify(session, a, false),
        Command::Classify(ClassifyCommand::Eval(a)) => classify(session, a, true),
        Command::Experiment(ExperimentCommand::Run(a)) => experiment_run(session, a),
        Command::Experiment(ExperimentCommand::List) => unreachable!("handled above"),
    }
}

fn default_theta_min(variant: ThetaVariant) -> f64 {
    if variant == ThetaVariant::Log {
        0.0
    } else {
        1.0
    }
}

fn half_extent(ext: &Extents) -> f64 {
    *ext.0.iter().max().unwrap_or(&1) as f64 / 2.0
}

fn phase_from(d: &DistributionOpts, iterations: u64) -> PhaseSpec {
    let gaussian = d.distribution == DistributionArg::Gaussian;
    PhaseSpec {
        iterations,
        distribution: if gaussian { DistributionName::ClippedGaussian } else { DistributionName::Uniform },
        lo: d.lo.clone(),
        hi: d.hi.clone(),
        mean: gaussian.then(|| d.mean.clone()),
        sd: gaussian.then_some(d.sd),
    }
}

fn train(mut s: Session, a: TrainArgs) -> Result<Outcome> {
    let t = &a.trainer;
    let name = match t.trainer {
        TrainerKind::Plsom => "plsom",
        TrainerKind::Som => "som",
    };
    let trainer = match t.trainer {
        TrainerKind::Plsom => TrainerSpec::Plsom {
            name: name.into(),
            lattice: None,
            beta: t.beta,
            theta_min: t.theta_min,
            variant: t.variant.into(),
            forced_r: a.forced_r,
        },
        TrainerKind::Som => TrainerSpec::Som {
            name: name.into(),
            lattice: None,
            alpha0: t.alpha0,
            beta0: t.beta0,
            horizon_fraction: a.horizon_fraction,
            final_fraction: 0.01,
        },
    };
    let spec = ExperimentSpec {
        name: "train".into(),
        seed: s.seed,
        lattice: a.lattice,
        init: InitSpec::UniformBox { lo: a.init_lo, hi: a.init_hi },
        metric_every: a.metric_every,
        total_area: 1.0,
        snapshots: a.snapshots,
        field_at: Vec::new(),
        field_grid: plsom::experiment::DEFAULT_FIELD_GRID,
        trainers: vec![trainer],
        phases: vec![phase_from(&a.dist, a.iterations)],
    };
    let run = execute(&spec)?;
    for f in write_bundle(&run, &s.out_dir)? {
        s.outputs.push(f);
    }
    let weights = s.path("weights.csv");
    run.runs[0].snapshots.last().expect("final snapshot").1.save_csv(&weights)?;
    s.record(&weights);
    print_json(&run.summary.trainers[0])?;
    s.finish("train", &spec)?;
    Ok(Outcome::Success)
}

fn load_map(weights: &Path, extents: &Extents) -> Result<(Lattice, WeightMatrix)> {
    let lattice = Lattice::euclidean(&extents.0)?;
    let w = WeightMatrix::load_csv(weights)?;
    if w.node_count() != lattice.node_count() {
        bail!("{} has {} nodes but lattice {} has {}", weights.display(), w.node_count(), extents, lattice.node_count());
    }
    Ok((lattice, w))
}

#[derive(Serialize)]
struct MetricsReport {
    weights: String,
    lattice: Extents,
    metrics: MetricsSample,
    covered_fraction: f64,
    skew_cells_excluded: usize,
    cells: usize,
    density: Vec<DensityBin>,
}

fn metrics(mut s: Session, a: MetricsArgs) -> Result<Outcome> {
    let (lattice, w) = load_map(&a.weights, &a.lattice)?;
    if a.center.len() != 2 {
        bail!("--center needs two coordinates");
    }
    let m = MetricsSample::measure(0, &lattice, &w, a.total_area)?;
    let report = MetricsReport {
        weights: a.weights.display().to_string(),
        lattice: a.lattice.clone(),
        covered_fraction: 1.0 - m.unused_space,
        metrics: m,
        skew_cells_excluded: average_skew(&lattice, &w)?.excluded,
        cells: topology_twist_indicator(&lattice, &w)?.total,
        density: density_vs_radius(&w, [a.center[0], a.center[1]], a.bin_width)?,
    };
    s.write_json("metrics.json", &report)?;
    print_json(&report)?;
    s.finish("metrics", &serde_json::json!({ "weights": report.weights, "lattice": a.lattice, "total_area": a.total_area, "center": a.center, "bin_width": a.bin_width }))?;
    Ok(check(!a.check || m.twist_flips == 0, || format!("{} flipped cells", m.twist_flips)))
}

fn distribution(d: &DistributionOpts) -> Result<InputDistribution> {
    Ok(phase_from(d, 1).input_distribution()?)
}

fn frozen_trainer(t: &TrainerOpts, lattice: &Lattice, extents: &Extents, w: WeightMatrix, r: f64, alpha: f64, som_beta: Option<f64>) -> Result<AnyTrainer> {
    Ok(match t.trainer {
        TrainerKind::Plsom => {
            let variant: ThetaVariant = t.variant.into();
            let params = PlsomParams::new(
                t.beta.unwrap_or_else(|| half_extent(extents)),
                t.theta_min.unwrap_or(default_theta_min(variant)),
                variant,
            )?;
            let mut p = PlsomTrainer::new(lattice.clone(), params, w)?;
            p.set_r(r)?;
            AnyTrainer::Plsom(p)
        }
        TrainerKind::Som => {
            let beta0 = t.beta0.unwrap_or_else(|| half_extent(extents));
            // Decay constants are irrelevant for a frozen state.
            let mut som = SomTrainer::new(lattice.clone(), SomParams::new(t.alpha0, beta0, 0.5, 0.5)?, w)?;
            som.set_rates(alpha, som_beta.unwrap_or(beta0))?;
            AnyTrainer::Som(som)
        }
    })
}

fn expected_field(mut s: Session, a: FieldArgs) -> Result<Outcome> {
    let (lattice, w) = load_map(&a.weights, &a.lattice)?;
    let trainer = frozen_trainer(&a.trainer, &lattice, &a.lattice, w, a.r, a.alpha, a.som_beta)?;
    let dist = distribution(&a.dist)?;
    let quadrature = match a.quadrature {
        QuadratureArg::Grid => Quadrature::Grid { n: a.grid },
        QuadratureArg::MonteCarlo => Quadrature::MonteCarlo { samples: a.samples, seed: s.seed },
    };
    let field = integrated_expected_displacement(&trainer, &dist, quadrature)?;
    let path = s.path("field.csv");
    field.write_csv(fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?)?;
    s.record(&path);
    if let Some(node) = a.node {
        let map = expected_displacement_map(&trainer, node, &dist, a.resolution, None)?;
        let path = s.path(&format!("map_node{node}.csv"));
        map.write_csv(fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?)?;
        s.record(&path);
    }
    let magnitudes: Vec<f64> = (0..lattice.node_count()).map(|i| field.magnitude(i)).collect();
    let summary = serde_json::json!({
        "trainer": trainer.kind_name(),
        "quadrature": quadrature,
        "max_magnitude": magnitudes.iter().cloned().fold(0.0, f64::max),
        "mean_magnitude": magnitudes.iter().sum::<f64>() / magnitudes.len() as f64,
        "outputs": s.outputs,
    });
    s.write_json("field_summary.json", &summary)?;
    print_json(&summary)?;
    s.finish("expected-field", &serde_json::json!({ "args": format!("{a:?}") }))?;
    Ok(Outcome::Success)
}

fn verify_ordering(mut s: Session, a: VerifyArgs) -> Result<Outcome> {
    if a.lemmas {
        let report = lemma_property_suites(s.seed, a.trials)?;
        s.write_json("lemma_report.json", &report)?;
        print_json(&report)?;
        s.finish("verify-ordering", &serde_json::json!({ "lemmas": true, "trials": a.trials }))?;
        return Ok(check(!a.check || report.passed(), || "lemma suites found counterexamples".into()));
    }
    let mut cfg = VerifierConfig::default();
    if a.paper_scale {
        cfg.spacing = FULL_SPACING;
    }
    if let Some(v) = a.spacing {
        cfg.spacing = v;
    }
    if let Some(v) = a.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = a.gradient_bound {
        cfg.gradient_bound = v;
    }
    if let Some(t) = a.attractor {
        cfg.attractor = t.try_into().map_err(|_| anyhow::anyhow!("--attractor needs three values"))?;
    }
    cfg.validate()?;
    let checkpoint = a.checkpoint.map(SweepCheckpoint::new);
    let verbose = s.verbose;
    let report = verify_unordered_subspace_with(&cfg, checkpoint.as_ref(), |points, slabs| {
        if verbose {
            eprintln!("swept {points} points, {slabs} slabs");
        }
    })?;
    s.log(format!("max field value {:e}", report.max_field_value));
    s.write_json("ordering_report.json", &report)?;
    print_json(&report)?;
    s.finish("verify-ordering", &cfg)?;
    Ok(check(!a.check || report.passes, || format!("{} violations", report.violation_count)))
}

fn ik_train(mut s: Session, a: IkTrainArgs) -> Result<Outcome> {
    let lattice = Lattice::euclidean(&a.nodes.0)?;
    if lattice.dims() != 3 {
        bail!("--nodes must be a 3-D grid such as 20x20x20");
    }
    let training = IkTraining::for_lattice(&lattice, a.iterations, s.seed)?;
    let arm = plsom::ik::ArmModel::default();
    s.log(format!("training {} nodes for {} iterations", lattice.node_count(), a.iterations));
    let map = train_ik_map(&arm, lattice, &training)?;
    let out = a.out.unwrap_or_else(|| s.path("ik_map.csv"));
    map.save(&out)?;
    let (labels, meta) = plsom::ik::map_file_paths(&out);
    for p in [&out, &labels, &meta] {
        s.record(p);
    }
    print_json(&serde_json::json!({ "map": out.display().to_string(), "nodes": map.lattice.node_count() }))?;
    s.finish("ik-train", &serde_json::json!({ "arm": arm, "nodes": a.nodes, "training": training }))?;
    Ok(Outcome::Success)
}

fn ik_solve(mut s: Session, a: IkSolveArgs) -> Result<Outcome> {
    let target: [f64; 3] = a.target.clone().try_into().map_err(|_| anyhow::anyhow!("--target needs x,y,z"))?;
    let map = IkMap::load(&a.map)?;
    let mut solver = IkSolver::new(&map);
    let sol = solver.solve(&target)?;
    let reached = forward_kinematics(&map.arm, &sol.joints)?;
    let error = reached.iter().zip(&target).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let report = serde_json::json!({ "target": target, "solution": sol, "reached": reached, "error": error });
    s.write_json("ik_solution.json", &report)?;
    print_json(&report)?;
    s.finish("ik-solve", &serde_json::json!({ "map": a.map.display().to_string(), "target": target }))?;
    Ok(Outcome::Success)
}

fn datasets(a: &ClassifyArgs, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let data = match &a.data {
        Some(p) => load_dataset(p)?,
        None => SyntheticClusters { seed, ..SyntheticClusters::default() }.generate()?,
    };
    match &a.test_data {
        Some(p) => Ok((data, load_dataset(p)?)),
        None => Ok(data.split(a.test_fraction, seed)?),
    }
}

fn classify(mut s: Session, a: ClassifyArgs, eval: bool) -> Result<Outcome> {
    let variant: ThetaVariant = a.variant.into();
    let cfg = ClassifierConfig {
        grid: a.grid.clone(),
        iterations: a.iterations,
        params: PlsomParams::new(a.beta, default_theta_min(variant), variant)?,
        seed: s.seed,
        k: a.k,
        ..ClassifierConfig::default()
    };
    let (train, test) = datasets(&a, s.seed)?;
    let config = serde_json::json!({
        "classifier": cfg,
        "data": a.data.as_ref().map(|p| p.display().to_string()),
        "test_data": a.test_data.as_ref().map(|p| p.display().to_string()),
        "test_fraction": a.test_fraction,
    });
    if !eval {
        let (lattice, weights) = train_classifier_map(&cfg, &train)?;
        let map = label_and_prune(&weights, &train)?;
        let out = a.map.clone().unwrap_or_else(|| s.path("classifier_map.csv"));
        map.save_csv(&out)?;
        s.record(&out);
        let report = serde_json::json!({ "map": out.display().to_string(), "survivors": map.len(), "node_count": lattice.node_count() });
        print_json(&report)?;
        s.finish("classify-train", &config)?;
        return Ok(Outcome::Success);
    }
    let report = match &a.map {
        Some(p) => {
            let map = LabeledMap::load_csv(p)?;
            let nodes = Lattice::euclidean(&a.grid.0)?.node_count();
            classify_dataset(&map, &test, a.k, nodes)?
        }
        None => evaluate(&cfg, &train, &test)?,
    };
    s.write_json("classification_report.json", &report)?;
    print_json(&report)?;
    s.finish("classify-eval", &config)?;
    Ok(match a.min_accuracy {
        Some(min) => check(report.accuracy >= min, || format!("accuracy {} below {min}", report.accuracy)),
        None => Outcome::Success,
    })
}

fn experiment_run(s: Session, a: ExperimentRunArgs) -> Result<Outcome> {
    let spec = match (&a.spec, &a.builtin) {
        (Some(p), _) => ExperimentSpec::load(p)?,
        (None, Some(name)) => builtin(name, s.seed).with_context(|| {
            let names: Vec<&str> = BUILTINS.iter().map(|(n, _)| *n).collect();
            format!("unknown built-in `{name}` (one of {})", names.join(", "))
        })?,
        (None, None) => bail!("give --spec FILE or --builtin NAME"),
    };
    s.log(format!("running {} for {} iterations", spec.name, spec.total_iterations()));
    let run = plsom::experiment::run_to_dir(&spec, &s.out_dir, s.argv.clone(), s.workers)?;
    print_json(&run.summary.trainers)?;
    Ok(Outcome::Success)
}
