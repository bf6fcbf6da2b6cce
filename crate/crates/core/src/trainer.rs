//! Training loop: refresh trees and pseudo-labels every `m` epochs, encode,
//! compute the objective, backpropagate and take Adam steps.
//!
//! Gradients flow in three stages. Roots are first encoded value-only, the
//! objective is then built on its own tape with those outputs as inputs, and
//! finally each tree is re-encoded on a private tape seeded with its root's
//! gradient. Per-tree contributions are merged in a fixed order, so results
//! do not depend on the number of worker threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    csls_adjust, evaluate_reference, mutual_nearest_labels, similarity_matrix, Metrics, PseudoLabelSet,
    SimilarityKind, SimilarityMatrix,
};
use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::embed::{read_emb, write_emb, EmbeddingTables, FeatureSet, TensorId, TensorSet};
use crate::encoder::{backprop_tree, encode_root};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraphPair, Side};
use crate::losses::{objective_on_tape, BatchPlan, LossConfig, LossReport};
use crate::sampler::{sample_all_trees, FrozenTables, RootedTree};
use crate::tensor::{Matrix, Real};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    step: i32,
    m: TensorSet<F>,
    v: TensorSet<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &TensorSet<F>, learning_rate: f64) -> Self {
        Self {
            learning_rate: F::of(learning_rate),
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
            step: 0,
            m: TensorSet::zeros_like(params),
            v: TensorSet::zeros_like(params),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut TensorSet<F>, grads: &TensorSet<F>) {
        self.step += 1;
        let one = F::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for id in TensorId::ALL {
            let g = grads.get(id).as_slice();
            let m = self.m.get_mut(id).as_mut_slice();
            let v = self.v.get_mut(id).as_mut_slice();
            let p = params.get_mut(id).as_mut_slice();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] = p[i] - self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Encodes the given roots of one side in parallel, in input order.
fn encode_roots<F: Real>(
    trees: &[RootedTree<F>],
    roots: &[usize],
    params: &TensorSet<F>,
    slope: F,
) -> Vec<Vec<F>> {
    roots
        .par_iter()
        .map(|&e| encode_root(&trees[e], params, slope).embedding)
        .collect()
}

/// Encoder outputs of every entity of both graphs.
pub fn encode_all<F: Real>(trees: &[Vec<RootedTree<F>>; 2], params: &TensorSet<F>, slope: F) -> [Matrix<F>; 2] {
    let side = |s: usize| {
        let roots: Vec<usize> = (0..trees[s].len()).collect();
        let rows = encode_roots(&trees[s], &roots, params, slope);
        let dim = params.get(TensorId::EdgeScore).cols();
        if rows.is_empty() {
            Matrix::zeros(0, dim)
        } else {
            Matrix::from_rows(&rows)
        }
    };
    [side(0), side(1)]
}

/// Objective of one planned batch and its gradient w.r.t. every parameter.
pub fn objective_and_gradient<F: Real>(
    params: &TensorSet<F>,
    trees: &[Vec<RootedTree<F>>; 2],
    plan: &BatchPlan,
    features: &FeatureSet,
    cfg: &LossConfig,
    slope: F,
) -> Result<(LossReport, TensorSet<F>)> {
    let encoded = plan.encoded_entities();
    let roots: [Vec<usize>; 2] = [encoded[0].iter().copied().collect(), encoded[1].iter().copied().collect()];
    let outs = [
        encode_roots(&trees[0], &roots[0], params, slope),
        encode_roots(&trees[1], &roots[1], params, slope),
    ];

    let mut grads = TensorSet::zeros_like(params);
    let mut tape = Tape::new(params);
    let mut inputs: [BTreeMap<usize, _>; 2] = Default::default();
    for s in 0..2 {
        for (e, v) in roots[s].iter().zip(&outs[s]) {
            inputs[s].insert(*e, tape.input(v.clone()));
        }
    }
    let vars = objective_on_tape(&mut tape, &inputs, plan, features, cfg)?;
    let report = vars.report(&tape, cfg.lambda);
    let node_grads = tape.backward(&[(vars.total, vec![F::one()])], &mut |id, row, g| {
        grads.add_row(id, row, g)
    });

    for s in 0..2 {
        let seeds: Vec<(usize, Vec<F>)> = roots[s]
            .iter()
            .filter_map(|e| {
                let var = inputs[s][e];
                node_grads[var.index()].clone().map(|g| (*e, g))
            })
            .collect();
        let contributions: Vec<BTreeMap<(TensorId, usize), Vec<F>>> = seeds
            .par_iter()
            .map(|(e, seed)| {
                let mut local: BTreeMap<(TensorId, usize), Vec<F>> = BTreeMap::new();
                backprop_tree(&trees[s][*e], params, slope, seed, &mut |id, row, g| {
                    match local.get_mut(&(id, row)) {
                        Some(acc) => crate::tensor::axpy(F::one(), g, acc),
                        None => {
                            local.insert((id, row), g.to_vec());
                        }
                    }
                });
                local
            })
            .collect();
        for local in contributions {
            for ((id, row), g) in local {
                grads.add_row(id, row, &g);
            }
        }
    }
    Ok((report, grads))
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossReport,
    pub pseudo_labels: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub csls_metrics: Option<Metrics>,
}

#[derive(Debug, Clone)]
pub struct TrainerState<F> {
    pub tables: EmbeddingTables<F>,
    pub trees: [Vec<RootedTree<F>>; 2],
    pub pseudo: PseudoLabelSet,
    pub epoch: usize,
    pub optimizer: Adam<F>,
}

pub struct Trainer<'a, F> {
    pair: &'a KnowledgeGraphPair,
    features: &'a FeatureSet,
    cfg: TrainConfig,
    pub state: TrainerState<F>,
    rng: ChaCha8Rng,
}

impl<'a, F: Real> Trainer<'a, F> {
    pub fn new(pair: &'a KnowledgeGraphPair, features: &'a FeatureSet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let tables = EmbeddingTables::initialize(pair, features, cfg.dim, cfg.seed)?;
        Ok(Self::with_tables(pair, features, cfg, tables))
    }

    pub fn with_tables(
        pair: &'a KnowledgeGraphPair,
        features: &'a FeatureSet,
        cfg: TrainConfig,
        tables: EmbeddingTables<F>,
    ) -> Self {
        let optimizer = Adam::new(&tables.params, cfg.learning_rate);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
        Self {
            pair,
            features,
            state: TrainerState {
                tables,
                trees: [Vec::new(), Vec::new()],
                pseudo: PseudoLabelSet::default(),
                epoch: 0,
                optimizer,
            },
            cfg,
            rng,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn slope(&self) -> F {
        F::of(self.cfg.leaky_slope)
    }

    /// Samples trees for every root from the current frozen tables.
    pub fn sample_trees(&self) -> Result<[Vec<RootedTree<F>>; 2]> {
        sample_trees_from(self.pair, &self.state.tables, &self.cfg)
    }

    /// Encoder outputs of all entities under the cached trees.
    pub fn encode_all(&self) -> [Matrix<F>; 2] {
        encode_all(&self.state.trees, &self.state.tables.params, self.slope())
    }

    pub fn similarity(&self, kind: SimilarityKind) -> Result<SimilarityMatrix<F>> {
        let [a, b] = self.encode_all();
        let s = similarity_matrix(&a, &b)?;
        match kind {
            SimilarityKind::Cosine => Ok(s),
            SimilarityKind::Csls => csls_adjust(&s, self.csls_delta()),
        }
    }

    fn csls_delta(&self) -> usize {
        self.cfg
            .delta
            .min(self.pair.g1.entity_count())
            .min(self.pair.g2.entity_count())
    }

    /// Momentum step, tree resampling and pseudo-label regeneration.
    pub fn refresh(&mut self) -> Result<()> {
        self.state.tables.momentum_step(F::of(self.cfg.mu))?;
        self.state.trees = self.sample_trees()?;
        let labels = mutual_nearest_labels(&self.similarity(SimilarityKind::Csls)?);
        if labels.is_empty() {
            if self.state.pseudo.is_empty() {
                return Err(Error::EmptyPseudoLabels(format!(
                    "no mutual nearest pairs at epoch {}",
                    self.state.epoch
                )));
            }
            warn!(
                "epoch {}: no mutual nearest pairs, keeping {} previous pseudo-labels",
                self.state.epoch,
                self.state.pseudo.len()
            );
        } else {
            info!("epoch {}: {} pseudo-labels", self.state.epoch, labels.len());
            self.state.pseudo = labels;
        }
        Ok(())
    }

    /// Plans the negatives for one batch of pseudo-labels.
    pub fn plan_batch(&mut self, pairs: &[(usize, usize)]) -> BatchPlan {
        let with_mi = self.cfg.effective_lambda() < 1.0;
        BatchPlan::sample(self.pair, pairs, &self.cfg.losses(), with_mi, &mut self.rng)
    }

    pub fn objective_and_gradient(&self, plan: &BatchPlan) -> Result<(LossReport, TensorSet<F>)> {
        objective_and_gradient(
            &self.state.tables.params,
            &self.state.trees,
            plan,
            self.features,
            &self.cfg.losses(),
            self.slope(),
        )
    }

    /// One pass over the pseudo-labels in shuffled batches.
    pub fn train_epoch(&mut self) -> Result<LossReport> {
        if self.state.pseudo.is_empty() {
            return Err(Error::EmptyPseudoLabels("cannot train without pseudo-labels".into()));
        }
        let mut pairs = self.state.pseudo.pairs().to_vec();
        pairs.shuffle(&mut self.rng);
        let mut sum = LossReport::default();
        let mut batches = 0usize;
        for chunk in pairs.chunks(self.cfg.batch_size) {
            let plan = self.plan_batch(chunk);
            let (report, grads) = self.objective_and_gradient(&plan)?;
            if !report.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.state.epoch,
                    detail: format!("{report:?}"),
                });
            }
            self.state.optimizer.update(&mut self.state.tables.params, &grads);
            for (acc, x) in [
                (&mut sum.l_align, report.l_align),
                (&mut sum.l_ent, report.l_ent),
                (&mut sum.l_rel, report.l_rel),
                (&mut sum.l_topo, report.l_topo),
                (&mut sum.l_mi, report.l_mi),
                (&mut sum.total, report.total),
            ] {
                *acc += x;
            }
            batches += 1;
        }
        let n = batches as f64;
        Ok(LossReport {
            l_align: sum.l_align / n,
            l_ent: sum.l_ent / n,
            l_rel: sum.l_rel / n,
            l_topo: sum.l_topo / n,
            l_mi: sum.l_mi / n,
            total: sum.total / n,
        })
    }

    /// Metrics against the reference alignment (raw cosine and CSLS).
    pub fn evaluate(&self) -> Result<(Metrics, Metrics)> {
        let [a, b] = self.encode_all();
        let s = similarity_matrix(&a, &b)?;
        let c = csls_adjust(&s, self.csls_delta())?;
        Ok((evaluate_reference(&s, self.pair), evaluate_reference(&c, self.pair)))
    }

    /// Runs the remaining epochs, calling `observe` after each one.
    pub fn run(&mut self, mut observe: impl FnMut(&EpochRecord)) -> Result<Vec<EpochRecord>> {
        let mut history = Vec::new();
        while self.state.epoch < self.cfg.epochs {
            let epoch = self.state.epoch;
            if epoch.is_multiple_of(self.cfg.m) {
                self.refresh()?;
            }
            let loss = self.train_epoch()?;
            let last = epoch + 1 == self.cfg.epochs;
            let (metrics, csls_metrics) = if last || (epoch + 1).is_multiple_of(self.cfg.m) {
                let (m, c) = self.evaluate()?;
                (Some(m), Some(c))
            } else {
                (None, None)
            };
            let record = EpochRecord {
                epoch,
                loss,
                pseudo_labels: self.state.pseudo.len(),
                metrics,
                csls_metrics,
            };
            observe(&record);
            history.push(record);
            self.state.epoch += 1;
        }
        Ok(history)
    }
}

/// Stream tag of tree sampling. Every refresh replays the same per-root
/// random numbers, so trees change only when the frozen tables do.
pub const TREE_STREAM: u64 = 0;

/// Trees for every root, sampled from the frozen copies in `tables`.
pub fn sample_trees_from<F: Real>(
    pair: &KnowledgeGraphPair,
    tables: &EmbeddingTables<F>,
    cfg: &TrainConfig,
) -> Result<[Vec<RootedTree<F>>; 2]> {
    let frozen = [
        FrozenTables::new(&tables.frozen_entities[0], &tables.frozen_relations[0])?,
        FrozenTables::new(&tables.frozen_entities[1], &tables.frozen_relations[1])?,
    ];
    sample_all_trees(
        pair,
        &frozen,
        &cfg.sampler(),
        cfg.ablation.plain_gnn_encoder,
        cfg.seed,
        TREE_STREAM,
    )
}

/// Everything `run` produces.
pub struct RunOutput {
    pub tables: EmbeddingTables<f32>,
    pub history: Vec<EpochRecord>,
    pub final_metrics: Metrics,
    pub manifest: Manifest,
}

/// Trains from scratch in 32-bit mode.
pub fn run(
    cfg: &TrainConfig,
    pair: &KnowledgeGraphPair,
    features: &FeatureSet,
    observe: impl FnMut(&EpochRecord),
) -> Result<RunOutput> {
    let mut trainer = Trainer::<f32>::new(pair, features, cfg.clone())?;
    let history = trainer.run(observe)?;
    let final_metrics = history
        .last()
        .and_then(|r| r.metrics)
        .map_or_else(|| trainer.evaluate().map(|m| m.0), Ok)?;
    let manifest = Manifest::new(cfg, &trainer.state, None);
    Ok(RunOutput {
        tables: trainer.state.tables,
        history,
        final_metrics,
        manifest,
    })
}

pub const CHECKPOINT_FORMAT: &str = "unea-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub epoch: usize,
    pub config: TrainConfig,
    pub config_hash: String,
    pub shapes: BTreeMap<String, (usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<String>,
}

impl Manifest {
    pub fn new<F: Real>(cfg: &TrainConfig, state: &TrainerState<F>, data_dir: Option<String>) -> Self {
        let shapes = checkpoint_tensors(&state.tables)
            .into_iter()
            .map(|(name, m)| (name, m.shape()))
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            epoch: state.epoch,
            config: cfg.clone(),
            config_hash: cfg.hash(),
            shapes,
            data_dir,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(Error::BadHeader(format!("unknown checkpoint format {:?}", m.format)));
        }
        if m.config.hash() != m.config_hash {
            return Err(Error::Config("checkpoint config does not match its hash".into()));
        }
        m.config.validate()?;
        Ok(m)
    }
}

fn checkpoint_tensors<F: Real>(t: &EmbeddingTables<F>) -> Vec<(String, &Matrix<F>)> {
    let mut out: Vec<(String, &Matrix<F>)> = t.params.iter().map(|(id, m)| (id.name().to_string(), m)).collect();
    for side in Side::BOTH {
        let n = side.number();
        out.push((format!("frozen_entities_{n}"), &t.frozen_entities[side.index()]));
        out.push((format!("frozen_relations_{n}"), &t.frozen_relations[side.index()]));
    }
    out
}

/// Writes one UNEA-EMB file per tensor plus `manifest.json`.
pub fn save_checkpoint<F: Real>(dir: impl AsRef<Path>, tables: &EmbeddingTables<F>, manifest: &Manifest) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, m) in checkpoint_tensors(tables) {
        write_emb(dir.join(format!("{name}.emb")), m)?;
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(EmbeddingTables<f32>, Manifest)> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let manifest = Manifest::from_json(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
    let load = |name: &str| -> Result<Matrix<f32>> {
        let m = read_emb(dir.join(format!("{name}.emb")))?;
        match manifest.shapes.get(name) {
            Some(&shape) if shape == m.shape() => Ok(m),
            other => Err(Error::Shape(format!(
                "checkpoint tensor {name} has shape {:?}, manifest says {other:?}",
                m.shape()
            ))),
        }
    };
    let params = TensorSet::from_tensors(
        TensorId::ALL
            .iter()
            .map(|id| load(id.name()))
            .collect::<Result<Vec<_>>>()?,
    );
    let tables = EmbeddingTables {
        params,
        frozen_entities: [load("frozen_entities_1")?, load("frozen_entities_2")?],
        frozen_relations: [load("frozen_relations_1")?, load("frozen_relations_2")?],
    };
    Ok((tables, manifest))
}

/// Rebuilds the trees a checkpoint was last trained on and encodes every
/// entity.
pub fn checkpoint_similarity(
    tables: &EmbeddingTables<f32>,
    manifest: &Manifest,
    pair: &KnowledgeGraphPair,
    kind: SimilarityKind,
) -> Result<SimilarityMatrix<f32>> {
    check_tables_fit(tables, pair)?;
    let trees = sample_trees_from(pair, tables, &manifest.config)?;
    let [a, b] = encode_all(&trees, &tables.params, manifest.config.leaky_slope as f32);
    let s = similarity_matrix(&a, &b)?;
    match kind {
        SimilarityKind::Cosine => Ok(s),
        SimilarityKind::Csls => {
            let delta = manifest.config.delta.min(a.rows()).min(b.rows());
            csls_adjust(&s, delta)
        }
    }
}

pub fn check_tables_fit<F: Real>(tables: &EmbeddingTables<F>, pair: &KnowledgeGraphPair) -> Result<()> {
    for side in Side::BOTH {
        let g = pair.graph(side);
        if tables.entities(side).rows() != g.entity_count()
            || tables.relations(side).rows() != 2 * g.relation_count()
        {
            return Err(Error::Shape(format!(
                "checkpoint tables do not fit graph {} ({} entities, {} relations)",
                side.number(),
                g.entity_count(),
                g.relation_count()
            )));
        }
    }
    Ok(())
}

/// Entities a batch plan reads, for diagnostics.
pub fn plan_footprint(plan: &BatchPlan) -> [usize; 2] {
    let s: [BTreeSet<usize>; 2] = plan.encoded_entities();
    [s[0].len(), s[1].len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::FeatureTable;
    use crate::kg::KnowledgeGraph;
    use crate::synth::{generate, SynthSpec};

    fn singleton() -> (KnowledgeGraphPair, FeatureSet) {
        let g = || KnowledgeGraph::new(1, 1, Vec::new()).unwrap();
        let pair = KnowledgeGraphPair::new(g(), g(), vec![(0, 0)]).unwrap();
        let t = |v: Vec<f32>| FeatureTable::new(Matrix::from_vec(1, 4, v)).unwrap();
        let features = FeatureSet {
            entities: [t(vec![0.5, 0.5, 0.5, 0.5]), t(vec![0.5, 0.5, 0.5, 0.5])],
            relations: [t(vec![1.0, 0.0, 0.0, 0.0]), t(vec![1.0, 0.0, 0.0, 0.0])],
        };
        (pair, features)
    }

    #[test]
    fn adam_first_step_is_learning_rate_times_sign() {
        let p = TensorSet::from_tensors((0..7).map(|_| Matrix::from_vec(1, 2, vec![1.0f64, 1.0])).collect());
        let mut g = TensorSet::zeros_like(&p);
        g.get_mut(TensorId::Projection).as_mut_slice().copy_from_slice(&[3.0, -0.02]);
        let mut params = p.clone();
        let mut adam = Adam::new(&p, 0.1);
        adam.update(&mut params, &g);
        let got = params.get(TensorId::Projection).as_slice();
        assert!((got[0] - 0.9).abs() < 1e-6 && (got[1] - 1.1).abs() < 1e-6);
        assert_eq!(params.get(TensorId::Attention), p.get(TensorId::Attention));
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn converged_singleton_is_a_fixed_point() {
        let (pair, features) = singleton();
        let cfg = TrainConfig {
            lambda: 1.0,
            dim: 4,
            ..TrainConfig::default()
        };
        let mut t = Trainer::<f64>::new(&pair, &features, cfg).unwrap();
        t.refresh().unwrap();
        assert_eq!(t.state.pseudo.pairs(), &[(0, 0)]);
        let before = t.state.tables.params.clone();
        let report = t.train_epoch().unwrap();
        assert!(report.total.abs() < 1e-12, "{report:?}");
        assert!(t.state.tables.params.max_abs_diff(&before) < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_similarity() {
        let spec = SynthSpec {
            n_entities: 30,
            n_triples: 90,
            ..SynthSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let cfg = TrainConfig {
            dim: 16,
            epochs: 3,
            m: 2,
            ..TrainConfig::default()
        };
        let mut t = Trainer::<f32>::new(&ds.pair, &ds.features, cfg.clone()).unwrap();
        t.run(|_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest::new(&cfg, &t.state, None);
        save_checkpoint(dir.path(), &t.state.tables, &manifest).unwrap();
        let (tables, back) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(tables.params, t.state.tables.params);
        let s = checkpoint_similarity(&tables, &back, &ds.pair, SimilarityKind::Cosine).unwrap();
        assert_eq!(s, t.similarity(SimilarityKind::Cosine).unwrap());
    }

    #[test]
    fn manifest_rejects_tampering() {
        let cfg = TrainConfig::default();
        let (pair, features) = singleton();
        let t = Trainer::<f32>::new(&pair, &features, TrainConfig { dim: 4, ..cfg }).unwrap();
        let m = Manifest::new(t.config(), &t.state, None);
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(Manifest::from_json(&text).unwrap(), m);
        let bad = text.replace("\"lambda\":0.4", "\"lambda\":0.5");
        assert!(matches!(Manifest::from_json(&bad), Err(Error::Config(_))));
        let bad = text.replace(CHECKPOINT_FORMAT, "other");
        assert!(Manifest::from_json(&bad).is_err());
    }

    #[test]
    fn training_needs_pseudo_labels() {
        let (pair, features) = singleton();
        let mut t = Trainer::<f32>::new(&pair, &features, TrainConfig { dim: 4, ..TrainConfig::default() }).unwrap();
        assert!(matches!(t.train_epoch(), Err(Error::EmptyPseudoLabels(_))));
    }
}
