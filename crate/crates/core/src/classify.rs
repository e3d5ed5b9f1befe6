//! Nearest-prototype classification with a labelled, pruned PLSOM.
//!
//! Training vectors vote for their winning node; a node keeps a class only
//! if that class has at least three times the votes of any other class.
//! Surviving node weights are the reference set for k-NN classification.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{init_weights, squared_distance, winner_unchecked, Extents, InitScheme, Lattice, WeightMatrix};
use crate::plsom::{PlsomParams, PlsomTrainer};
use crate::rng::{streams, SeedStream};
use crate::trainer::Trainer;

/// Vectors with class labels. Class names are interned; `labels[i]`
/// indexes `classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub dim: usize,
    pub vectors: Vec<f64>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

impl LabeledDataset {
    pub fn new(dim: usize, vectors: Vec<f64>, labels: Vec<usize>, classes: Vec<String>) -> Result<Self> {
        if dim == 0 || vectors.len() != dim * labels.len() {
            return Err(Error::invalid("dataset vectors do not match its labels and dimension"));
        }
        if labels.iter().any(|&l| l >= classes.len()) || classes.iter().any(|c| c.is_empty()) {
            return Err(Error::invalid("dataset labels must name nonempty classes"));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset vector"));
        }
        Ok(LabeledDataset { dim, vectors, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Subset by sample index, keeping the class table.
    pub fn select(&self, idx: &[usize]) -> LabeledDataset {
        let mut vectors = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            vectors.extend_from_slice(self.vector(i));
        }
        LabeledDataset {
            dim: self.dim,
            vectors,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes.clone(),
        }
    }

    /// Deterministic shuffled split; `test_fraction` of the samples go to
    /// the second set.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::invalid(format!("test fraction must be in [0, 1), got {test_fraction}")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = SeedStream::new(seed, streams::DATASET);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.index(i + 1));
        }
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        let (test, train) = idx.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.select(&train), self.select(&test)))
    }

    /// Re-express this dataset's labels in `other`'s class table, adding
    /// classes `other` lacks.
    pub fn align_classes(&mut self, classes: &mut Vec<String>) {
        let remap: Vec<usize> = self
            .classes
            .iter()
            .map(|c| {
                classes.iter().position(|k| k == c).unwrap_or_else(|| {
                    classes.push(c.clone());
                    classes.len() - 1
                })
            })
            .collect();
        for l in &mut self.labels {
            *l = remap[*l];
        }
        self.classes = classes.clone();
    }
}

fn normalize_class(raw: &str) -> String {
    let t = raw.trim().trim_matches('"');
    match t.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 1e15 => format!("{}", v as i64),
        _ => t.to_string(),
    }
}

/// Read delimiter-separated numeric rows whose last field is the class
/// (commas or whitespace; blank lines and `#` comments skipped).
pub fn read_dataset<R: Read>(input: R, origin: &Path) -> Result<LabeledDataset> {
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut dim = None;
    for (lineno, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> =
            line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        if fields.len() < 2 {
            return Err(Error::parse(origin, format!("line {}: need features and a class", lineno + 1)));
        }
        let (feat, class) = fields.split_at(fields.len() - 1);
        match dim {
            None => dim = Some(feat.len()),
            Some(d) if d != feat.len() => {
                return Err(Error::parse(origin, format!("line {}: {} features, expected {d}", lineno + 1, feat.len())))
            }
            _ => {}
        }
        for f in feat {
            let v: f64 = f.parse().map_err(|_| Error::parse(origin, format!("line {}: bad number {f:?}", lineno + 1)))?;
            vectors.push(v);
        }
        let name = normalize_class(class[0]);
        let id = *index.entry(name.clone()).or_insert_with(|| {
            classes.push(name);
            classes.len() - 1
        });
        labels.push(id);
    }
    let dim = dim.ok_or_else(|| Error::parse(origin, "no samples"))?;
    LabeledDataset::new(dim, vectors, labels, classes)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, path)
}

/// Well-separated Gaussian clusters, one per class, inside `[-1, 1]^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClusters {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub sd: f64,
    pub seed: u64,
}

impl Default for SyntheticClusters {
    fn default() -> Self {
        SyntheticClusters { classes: 26, dim: 16, per_class: 80, sd: 0.05, seed: 1 }
    }
}

impl SyntheticClusters {
    pub fn generate(&self) -> Result<LabeledDataset> {
        if self.classes == 0 || self.dim == 0 || self.per_class == 0 || !(self.sd > 0.0) {
            return Err(Error::invalid("synthetic clusters need classes, dim, per_class >= 1 and sd > 0"));
        }
        let mut rng = SeedStream::new(self.seed, streams::DATASET);
        let centers: Vec<f64> = (0..self.classes * self.dim).map(|_| rng.uniform_range(-0.8, 0.8)).collect();
        let mut vectors = Vec::with_capacity(self.classes * self.per_class * self.dim);
        let mut labels = Vec::new();
        for _ in 0..self.per_class {
            for c in 0..self.classes {
                for k in 0..self.dim {
                    let v = centers[c * self.dim + k] + self.sd * rng.gaussian();
                    vectors.push(v.clamp(-1.0, 1.0));
                }
                labels.push(c);
            }
        }
        let classes = (0..self.classes).map(class_name).collect();
        LabeledDataset::new(self.dim, vectors, labels, classes)
    }
}

/// `A`..`Z`, then `AA`, `AB`, ...
fn class_name(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'A' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

/// Surviving nodes of a labelled map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMap {
    pub dim: usize,
    /// Original node index of each survivor.
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

impl LabeledMap {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn weight(&self, i: usize) -> &[f64] {
        &self.weights[i * self.dim..(i + 1) * self.dim]
    }

    /// CSV `node_index,label,w_0..`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["node_index".to_string(), "label".to_string()];
        header.extend((0..self.dim).map(|k| format!("w_{k}")));
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.nodes[i].to_string(), self.classes[self.labels[i]].clone()];
            rec.extend(self.weight(i).iter().map(|v| format!("{v:?}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let dim = rdr.headers()?.len().checked_sub(2).filter(|d| *d > 0).ok_or_else(|| Error::parse(path, "missing weight columns"))?;
        let mut map = LabeledMap { dim, nodes: Vec::new(), weights: Vec::new(), labels: Vec::new(), classes: Vec::new() };
        for rec in rdr.records() {
            let rec = rec?;
            let node = rec[0].parse().map_err(|_| Error::parse(path, format!("bad node index {:?}", &rec[0])))?;
            let class = rec[1].to_string();
            let id = map.classes.iter().position(|c| *c == class).unwrap_or_else(|| {
                map.classes.push(class);
                map.classes.len() - 1
            });
            map.nodes.push(node);
            map.labels.push(id);
            for k in 0..dim {
                let v = rec[k + 2].parse().map_err(|_| Error::parse(path, format!("bad number {:?}", &rec[k + 2])))?;
                map.weights.push(v);
            }
        }
        if map.is_empty() {
            return Err(Error::parse(path, "labelled map has no nodes"));
        }
        Ok(map)
    }
}

/// Class a node keeps under the thrice rule, if any.
pub fn thrice_rule(votes: &[u32]) -> Option<usize> {
    let mut top = None;
    let mut first = 0u32;
    let mut second = 0u32;
    for (c, &v) in votes.iter().enumerate() {
        if v > first {
            second = first;
            first = v;
            top = Some(c);
        } else if v > second {
            second = v;
        }
    }
    match top {
        Some(c) if first as u64 >= 3 * second as u64 => Some(c),
        _ => None,
    }
}

/// Vote each training vector into its winning node and keep the nodes that
/// pass the thrice rule.
pub fn label_and_prune(weights: &WeightMatrix, train: &LabeledDataset) -> Result<LabeledMap> {
    if weights.input_dim() != train.dim {
        return Err(Error::DimensionMismatch { expected: weights.input_dim(), got: train.dim });
    }
    let classes = train.classes.len();
    let winners: Vec<usize> = (0..train.len()).into_par_iter().map(|i| winner_unchecked(train.vector(i), weights).0).collect();
    let mut votes = vec![0u32; weights.node_count() * classes];
    for (i, &w) in winners.iter().enumerate() {
        votes[w * classes + train.labels[i]] += 1;
    }
    let mut map = LabeledMap {
        dim: train.dim,
        nodes: Vec::new(),
        weights: Vec::new(),
        labels: Vec::new(),
        classes: train.classes.clone(),
    };
    for node in 0..weights.node_count() {
        if let Some(c) = thrice_rule(&votes[node * classes..(node + 1) * classes]) {
            map.nodes.push(node);
            map.labels.push(c);
            map.weights.extend_from_slice(weights.row(node));
        }
    }
    if map.is_empty() {
        return Err(Error::Degenerate("every node was pruned; the map is unusable for classification".into()));
    }
    Ok(map)
}

/// Majority class among the `k` nearest survivors; on a tied vote `k` is
/// reduced until the vote is decided.
pub fn knn_classify(map: &LabeledMap, x: &[f64], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    if x.len() != map.dim {
        return Err(Error::DimensionMismatch { expected: map.dim, got: x.len() });
    }
    let k = k.min(map.len());
    // k smallest (distance, index) pairs, ascending
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..map.len() {
        let d = squared_distance(x, map.weight(i));
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    let mut counts = vec![0usize; map.classes.len()];
    for kk in (1..=k).rev() {
        counts.iter_mut().for_each(|c| *c = 0);
        for &(_, i) in &best[..kk] {
            counts[map.labels[i]] += 1;
        }
        let top = *counts.iter().max().expect("classes nonempty");
        let mut winners = counts.iter().enumerate().filter(|(_, &c)| c == top);
        let first = winners.next().expect("a maximum exists").0;
        if winners.next().is_none() {
            return Ok(first);
        }
    }
    unreachable!("a single neighbor always decides the vote")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub grid: Extents,
    pub iterations: u64,
    pub params: PlsomParams,
    pub init: InitScheme,
    pub seed: u64,
    pub k: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            grid: Extents(vec![20, 20, 20]),
            iterations: 100_000,
            params: PlsomParams::affine(2.0).expect("valid"),
            init: InitScheme::UniformBox { lo: -0.1, hi: 0.1 },
            seed: 1,
            k: 5,
        }
    }
}

/// Train a PLSOM on randomly drawn training vectors.
pub fn train_classifier_map(cfg: &ClassifierConfig, train: &LabeledDataset) -> Result<(Lattice, WeightMatrix)> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let lattice = Lattice::euclidean(&cfg.grid.0)?;
    let w = init_weights(&lattice, train.dim, cfg.seed, cfg.init)?;
    let mut trainer = PlsomTrainer::new(lattice.clone(), cfg.params, w)?;
    let mut rng = SeedStream::new(cfg.seed, streams::INPUT);
    for _ in 0..cfg.iterations {
        trainer.step(train.vector(rng.index(train.len())))?;
    }
    Ok((lattice, trainer.weights().clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub k: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub survivors: usize,
    pub node_count: usize,
    pub classes: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Classify `test` against `map`.
pub fn classify_dataset(map: &LabeledMap, test: &LabeledDataset, k: usize, node_count: usize) -> Result<ClassificationReport> {
    let mut test = test.clone();
    let mut classes = map.classes.clone();
    test.align_classes(&mut classes);
    let predicted: Vec<usize> =
        (0..test.len()).into_par_iter().map(|i| knn_classify(map, test.vector(i), k)).collect::<Result<_>>()?;
    let mut confusion = vec![vec![0u64; classes.len()]; classes.len()];
    let mut correct = 0;
    for (i, &p) in predicted.iter().enumerate() {
        confusion[test.labels[i]][p] += 1;
        correct += usize::from(test.labels[i] == p);
    }
    Ok(ClassificationReport {
        k,
        accuracy: if test.is_empty() { 0.0 } else { correct as f64 / test.len() as f64 },
        correct,
        total: test.len(),
        survivors: map.len(),
        node_count,
        classes,
        confusion,
    })
}

/// Train, label, prune and classify the test split.
pub fn evaluate(cfg: &ClassifierConfig, train: &LabeledDataset, test: &LabeledDataset) -> Result<ClassificationReport> {
    let (lattice, weights) = train_classifier_map(cfg, train)?;
    let map = label_and_prune(&weights, train)?;
    classify_dataset(&map, test, cfg.k, lattice.node_count())
}
