//! Contrastive alignment loss and the mutual-information regularizers.
//!
//! Scores are `exp(aᵀb / τ)` between L2-normalized vectors and every InfoNCE
//! term is evaluated as `logsumexp(logits) − positive_logit`. Negatives are
//! drawn up front into a [`BatchPlan`], which makes the objective a
//! deterministic function of the parameters.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::PseudoLabelSet;
use crate::autodiff::{sigmoid, Tape, Var};
use crate::embed::{FeatureSet, FeatureTable, TensorId, TensorSet};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, KnowledgeGraphPair, Side};
use crate::tensor::{dot, Matrix, Real};

/// Probability clamp for the edge cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Per-epoch (or per-batch) loss breakdown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_align: f64,
    pub l_ent: f64,
    pub l_rel: f64,
    pub l_topo: f64,
    pub l_mi: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l_align, self.l_ent, self.l_rel, self.l_topo, self.l_mi, self.total]
            .iter()
            .all(|x| x.is_finite())
    }
}

/// Combines the parts: `total = λ·l_align + (1 − λ)·(l_ent + l_rel + l_topo)`.
pub fn total_loss(l_align: f64, l_ent: f64, l_rel: f64, l_topo: f64, lambda: f64) -> Result<LossReport> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    let l_mi = l_ent + l_rel + l_topo;
    Ok(LossReport {
        l_align,
        l_ent,
        l_rel,
        l_topo,
        l_mi,
        total: lambda * l_align + (1.0 - lambda) * l_mi,
    })
}

/// `exp(e_aᵀ e_b / τ)`.
pub fn pair_score<F: Real>(e_a: &[F], e_b: &[F], tau: F) -> Result<F> {
    Ok(log_pair_score(e_a, e_b, tau)?.exp())
}

/// `e_aᵀ e_b / τ`, the log of [`pair_score`].
pub fn log_pair_score<F: Real>(e_a: &[F], e_b: &[F], tau: F) -> Result<F> {
    if !(tau > F::zero()) {
        return Err(Error::Config(format!("temperature {} must be positive", tau.f64())));
    }
    if e_a.len() != e_b.len() {
        return Err(Error::Shape("score operands differ in dimension".into()));
    }
    Ok(dot(e_a, e_b) / tau)
}

/// `σ(e_iᵀ W_n e_j)`.
pub fn edge_weight<F: Real>(e_i: &[F], e_j: &[F], w_n: &Matrix<F>) -> Result<F> {
    if w_n.shape() != (e_i.len(), e_j.len()) {
        return Err(Error::Shape(format!(
            "edge matrix {:?} vs vectors {} and {}",
            w_n.shape(),
            e_i.len(),
            e_j.len()
        )));
    }
    Ok(sigmoid(dot(e_i, &w_n.mul_vec(e_j))))
}

/// Up to `k` distinct ids from `0..n`, never `exclude`.
pub fn sample_excluding<R: Rng + ?Sized>(rng: &mut R, n: usize, exclude: usize, k: usize) -> Vec<usize> {
    if n <= 1 {
        return Vec::new();
    }
    let k = k.min(n - 1);
    index::sample(rng, n - 1, k)
        .into_iter()
        .map(|x| if x >= exclude { x + 1 } else { x })
        .collect()
}

/// Hyperparameters the objective needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: f64,
    pub n_neg: usize,
    pub neg_edge_ratio: f64,
}

/// One anchor of a bidirectional InfoNCE term with its two negative lists.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastItem {
    pub left: usize,
    pub right: usize,
    /// Negatives for the right-hand slot, anchor fixed on the left.
    pub right_negatives: Vec<usize>,
    /// Negatives for the left-hand slot, anchor fixed on the right.
    pub left_negatives: Vec<usize>,
}

/// An edge or sampled non-edge of one graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSample {
    pub head: usize,
    pub tail: usize,
    pub present: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiPlan {
    pub entities: [Vec<ContrastItem>; 2],
    pub relations: [Vec<ContrastItem>; 2],
    pub edges: [Vec<EdgeSample>; 2],
}

/// Everything random about one optimization step, drawn ahead of time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchPlan {
    /// Pseudo-labels `(i1, j2)` with their cross-graph negatives.
    pub alignment: Vec<ContrastItem>,
    pub mi: Option<MiPlan>,
}

impl BatchPlan {
    /// Draws negatives for `pairs`. MI terms are planned only if `with_mi`.
    pub fn sample<R: Rng + ?Sized>(
        pair: &KnowledgeGraphPair,
        pairs: &[(usize, usize)],
        cfg: &LossConfig,
        with_mi: bool,
        rng: &mut R,
    ) -> Self {
        let (n1, n2) = (pair.g1.entity_count(), pair.g2.entity_count());
        let alignment: Vec<ContrastItem> = pairs
            .iter()
            .map(|&(i, j)| ContrastItem {
                left: i,
                right: j,
                right_negatives: sample_excluding(rng, n2, j, cfg.n_neg),
                left_negatives: sample_excluding(rng, n1, i, cfg.n_neg),
            })
            .collect();
        let mut plan = BatchPlan { alignment, mi: None };
        if !with_mi {
            return plan;
        }
        let mut mi = MiPlan::default();
        for side in Side::BOTH {
            let kg = pair.graph(side);
            let anchors: BTreeSet<usize> = pairs
                .iter()
                .map(|&(i, j)| if side == Side::Left { i } else { j })
                .collect();
            mi.entities[side.index()] = anchors
                .into_iter()
                .map(|e| self_contrast(rng, kg.entity_count(), e, cfg.n_neg))
                .collect();
            mi.relations[side.index()] = (0..kg.relation_count())
                .map(|k| self_contrast(rng, kg.relation_count(), k, cfg.n_neg))
                .collect();
        }
        plan.mi = Some(mi);
        // Edge samples are restricted to entities the step encodes anyway.
        let encoded = plan.encoded_entities();
        let mi = plan.mi.as_mut().expect("just set");
        for side in Side::BOTH {
            mi.edges[side.index()] =
                sample_edges(pair.graph(side), &encoded[side.index()], cfg.neg_edge_ratio, rng);
        }
        plan
    }

    /// Entities whose encoder output the objective reads, per side.
    pub fn encoded_entities(&self) -> [BTreeSet<usize>; 2] {
        let mut sets = [BTreeSet::new(), BTreeSet::new()];
        for item in &self.alignment {
            sets[0].insert(item.left);
            sets[1].insert(item.right);
            sets[1].extend(&item.right_negatives);
            sets[0].extend(&item.left_negatives);
        }
        if let Some(mi) = &self.mi {
            for side in 0..2 {
                for item in &mi.entities[side] {
                    sets[side].insert(item.left);
                    sets[side].extend(&item.left_negatives);
                }
                for e in &mi.edges[side] {
                    sets[side].insert(e.head);
                    sets[side].insert(e.tail);
                }
            }
        }
        sets
    }
}

fn self_contrast<R: Rng + ?Sized>(rng: &mut R, n: usize, id: usize, n_neg: usize) -> ContrastItem {
    ContrastItem {
        left: id,
        right: id,
        right_negatives: sample_excluding(rng, n, id, n_neg),
        left_negatives: sample_excluding(rng, n, id, n_neg),
    }
}

/// Every triple with both ends in `within`, plus `ratio` times as many
/// uniformly drawn non-adjacent pairs from `within`.
pub fn sample_edges<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    within: &BTreeSet<usize>,
    ratio: f64,
    rng: &mut R,
) -> Vec<EdgeSample> {
    let mut out: Vec<EdgeSample> = kg
        .triples()
        .iter()
        .filter(|t| within.contains(&t.head) && within.contains(&t.tail))
        .map(|t| EdgeSample {
            head: t.head,
            tail: t.tail,
            present: true,
        })
        .collect();
    let want = (out.len() as f64 * ratio).round() as usize;
    let pool: Vec<usize> = within.iter().copied().collect();
    if pool.len() < 2 {
        return out;
    }
    let mut drawn = 0;
    let mut attempts = 0;
    while drawn < want && attempts < 100 * want.max(1) {
        attempts += 1;
        let u = pool[rng.random_range(0..pool.len())];
        let v = pool[rng.random_range(0..pool.len())];
        if u == v || kg.is_adjacent(u, v) {
            continue;
        }
        out.push(EdgeSample {
            head: u,
            tail: v,
            present: false,
        });
        drawn += 1;
    }
    out
}

/// Bidirectional InfoNCE between two aligned families of unit vectors:
/// for an item `(l, r)`, `left[l]` scores `right[r]` against
/// `right[right_negatives]`, and `right[r]` scores `left[l]` against
/// `left[left_negatives]`. Returns the mean over `2·items` sub-losses.
fn contrast_on_tape<F: Real>(
    tape: &mut Tape<'_, F>,
    items: &[ContrastItem],
    left: &BTreeMap<usize, Var>,
    right: &BTreeMap<usize, Var>,
    inv_tau: F,
) -> Option<Var> {
    if items.is_empty() {
        return None;
    }
    let mut terms = Vec::with_capacity(2 * items.len());
    for item in items {
        let (a, b) = (left[&item.left], right[&item.right]);
        for (anchor, partner, negs, pool) in [
            (a, b, &item.right_negatives, right),
            (b, a, &item.left_negatives, left),
        ] {
            let negs: Vec<Var> = negs.iter().map(|n| pool[n]).collect();
            terms.push(tape.info_nce(anchor, partner, &negs, inv_tau));
        }
    }
    let s = tape.sum(&terms);
    Some(tape.scale(s, F::one() / F::of(terms.len() as f64)))
}

fn mean_of<F: Real>(tape: &mut Tape<'_, F>, parts: &[Option<Var>]) -> Option<Var> {
    let present: Vec<Var> = parts.iter().flatten().copied().collect();
    if present.is_empty() {
        return None;
    }
    let s = tape.sum(&present);
    Some(tape.scale(s, F::one() / F::of(present.len() as f64)))
}

/// Vars making up the objective on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub total: Var,
    pub l_align: Option<Var>,
    pub l_ent: Option<Var>,
    pub l_rel: Option<Var>,
    pub l_topo: Option<Var>,
}

impl ObjectiveVars {
    pub fn report<F: Real>(&self, tape: &Tape<'_, F>, lambda: f64) -> LossReport {
        let v = |x: Option<Var>| x.map_or(0.0, |x| tape.scalar(x).f64());
        let mut r = total_loss(v(self.l_align), v(self.l_ent), v(self.l_rel), v(self.l_topo), lambda)
            .expect("lambda validated by config");
        r.total = tape.scalar(self.total).f64();
        r
    }
}

fn feature_row<F: Real>(t: &FeatureTable, i: usize) -> Vec<F> {
    t.row(i).iter().map(|x| F::of(*x as f64)).collect()
}

/// Normalized `f_i · P` for every id in `ids`.
fn projected_features<F: Real>(
    tape: &mut Tape<'_, F>,
    table: &FeatureTable,
    ids: impl IntoIterator<Item = usize>,
) -> BTreeMap<usize, Var> {
    let mut out = BTreeMap::new();
    for i in ids {
        out.entry(i).or_insert_with(|| {
            let p = tape.project(TensorId::Projection, feature_row(table, i));
            tape.normalize(p)
        });
    }
    out
}

fn right_ids(items: &[ContrastItem]) -> BTreeSet<usize> {
    items
        .iter()
        .flat_map(|it| std::iter::once(it.right).chain(it.right_negatives.iter().copied()))
        .collect()
}

/// Records the full objective for `plan`. `outputs[side]` maps an entity to
/// the tape var holding its (unnormalized) encoder output.
pub fn objective_on_tape<F: Real>(
    tape: &mut Tape<'_, F>,
    outputs: &[BTreeMap<usize, Var>; 2],
    plan: &BatchPlan,
    features: &FeatureSet,
    cfg: &LossConfig,
) -> Result<ObjectiveVars> {
    let inv_tau = F::one() / F::of(cfg.tau);
    let needed = plan.encoded_entities();
    let mut unit: [BTreeMap<usize, Var>; 2] = Default::default();
    for s in 0..2 {
        for &e in &needed[s] {
            let raw = *outputs[s]
                .get(&e)
                .ok_or_else(|| Error::Shape(format!("no encoder output for entity {e}")))?;
            unit[s].insert(e, tape.normalize(raw));
        }
    }

    let l_align = contrast_on_tape(tape, &plan.alignment, &unit[0], &unit[1], inv_tau);

    let (mut l_ent, mut l_rel, mut l_topo) = (None, None, None);
    if let Some(mi) = &plan.mi {
        let mut ent_parts = Vec::new();
        let mut rel_parts = Vec::new();
        let mut topo_parts = Vec::new();
        for side in Side::BOTH {
            let s = side.index();
            let feats = projected_features(tape, features.entity(side), right_ids(&mi.entities[s]));
            ent_parts.push(contrast_on_tape(tape, &mi.entities[s], &unit[s], &feats, inv_tau));

            let rel_items = &mi.relations[s];
            let mut rels = BTreeMap::new();
            for k in rel_items.iter().flat_map(|it| std::iter::once(it.left).chain(it.left_negatives.iter().copied())) {
                rels.entry(k).or_insert_with(|| {
                    let r = tape.param(TensorId::Relations(side), k);
                    tape.normalize(r)
                });
            }
            let rel_feats = projected_features(tape, features.relation(side), right_ids(rel_items));
            rel_parts.push(contrast_on_tape(tape, rel_items, &rels, &rel_feats, inv_tau));

            if !mi.edges[s].is_empty() {
                let eps = F::of(BCE_EPS);
                let mut terms = Vec::with_capacity(mi.edges[s].len());
                // W_n u is shared by every edge with the same tail
                let mut scored = BTreeMap::new();
                for e in &mi.edges[s] {
                    let wv = *scored
                        .entry(e.tail)
                        .or_insert_with(|| tape.mat_vec(TensorId::EdgeScore, unit[s][&e.tail]));
                    let logit = tape.dot(unit[s][&e.head], wv);
                    terms.push(tape.bce(logit, e.present, eps));
                }
                let sum = tape.sum(&terms);
                topo_parts.push(Some(tape.scale(sum, F::one() / F::of(terms.len() as f64))));
            }
        }
        l_ent = mean_of(tape, &ent_parts);
        l_rel = mean_of(tape, &rel_parts);
        l_topo = mean_of(tape, &topo_parts);
    }

    let lambda = F::of(cfg.lambda);
    let mut terms = Vec::new();
    if let Some(a) = l_align {
        terms.push(tape.scale(a, lambda));
    }
    for part in [l_ent, l_rel, l_topo].into_iter().flatten() {
        terms.push(tape.scale(part, F::one() - lambda));
    }
    let total = if terms.is_empty() {
        tape.constant(F::zero())
    } else {
        tape.sum(&terms)
    };
    Ok(ObjectiveVars {
        total,
        l_align,
        l_ent,
        l_rel,
        l_topo,
    })
}

fn value_params<F: Real>(projection: Option<&Matrix<F>>, edge: Option<&Matrix<F>>) -> TensorSet<F> {
    let empty = || Matrix::zeros(0, 0);
    TensorSet::from_tensors(vec![
        empty(),
        empty(),
        empty(),
        empty(),
        projection.cloned().unwrap_or_else(empty),
        empty(),
        edge.cloned().unwrap_or_else(empty),
    ])
}

fn output_inputs<F: Real>(tape: &mut Tape<'_, F>, m: &Matrix<F>) -> BTreeMap<usize, Var> {
    (0..m.rows()).map(|i| (i, tape.input(m.row(i).to_vec()))).collect()
}

/// Alignment loss over `pseudo` with freshly sampled negatives.
pub fn alignment_loss<F: Real, R: Rng + ?Sized>(
    pseudo: &PseudoLabelSet,
    left_out: &Matrix<F>,
    right_out: &Matrix<F>,
    tau: F,
    n_neg: usize,
    rng: &mut R,
) -> Result<F> {
    if pseudo.is_empty() {
        return Err(Error::EmptyPseudoLabels("alignment loss needs at least one pair".into()));
    }
    if !(tau > F::zero()) || n_neg == 0 {
        return Err(Error::Config("alignment loss needs tau > 0 and n_neg >= 1".into()));
    }
    let alignment = pseudo
        .pairs()
        .iter()
        .map(|&(i, j)| ContrastItem {
            left: i,
            right: j,
            right_negatives: sample_excluding(rng, right_out.rows(), j, n_neg),
            left_negatives: sample_excluding(rng, left_out.rows(), i, n_neg),
        })
        .collect::<Vec<_>>();
    let params = value_params(None, None);
    let mut tape = Tape::new(&params);
    let outs = [output_inputs(&mut tape, left_out), output_inputs(&mut tape, right_out)];
    let mut unit: [BTreeMap<usize, Var>; 2] = Default::default();
    for s in 0..2 {
        for (&e, &v) in &outs[s] {
            unit[s].insert(e, tape.normalize(v));
        }
    }
    let v = contrast_on_tape(&mut tape, &alignment, &unit[0], &unit[1], F::one() / tau).expect("nonempty");
    Ok(tape.scalar(v))
}

/// InfoNCE between every output row and its own projected feature row.
pub fn feature_mi_loss<F: Real, R: Rng + ?Sized>(
    outputs: &Matrix<F>,
    features: &FeatureTable,
    projection: &Matrix<F>,
    tau: F,
    n_neg: usize,
    rng: &mut R,
) -> Result<F> {
    if outputs.rows() != features.count() || projection.rows() != features.feature_dim() {
        return Err(Error::Shape("outputs, features and projection disagree".into()));
    }
    if outputs.cols() != projection.cols() {
        return Err(Error::Shape("output dim differs from projection dim".into()));
    }
    if !(tau > F::zero()) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let items: Vec<ContrastItem> = (0..outputs.rows())
        .map(|i| self_contrast(rng, outputs.rows(), i, n_neg))
        .collect();
    let params = value_params(Some(projection), None);
    let mut tape = Tape::new(&params);
    let outs = output_inputs(&mut tape, outputs);
    let unit: BTreeMap<usize, Var> = outs.iter().map(|(&e, &v)| (e, tape.normalize(v))).collect();
    let mut feats = BTreeMap::new();
    for i in 0..features.count() {
        let p = tape.project(TensorId::Projection, feature_row(features, i));
        feats.insert(i, tape.normalize(p));
    }
    let v = contrast_on_tape(&mut tape, &items, &unit, &feats, F::one() / tau);
    Ok(v.map_or(F::zero(), |v| tape.scalar(v)))
}

/// Edge cross-entropy over all triples and `ratio`·|triples| sampled
/// non-edges, on normalized outputs.
pub fn topology_mi_loss<F: Real, R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    outputs: &Matrix<F>,
    w_n: &Matrix<F>,
    ratio: f64,
    rng: &mut R,
) -> Result<F> {
    if outputs.rows() != kg.entity_count() || w_n.shape() != (outputs.cols(), outputs.cols()) {
        return Err(Error::Shape("outputs or edge matrix do not match the graph".into()));
    }
    let all: BTreeSet<usize> = (0..kg.entity_count()).collect();
    let edges = sample_edges(kg, &all, ratio, rng);
    if edges.is_empty() {
        return Ok(F::zero());
    }
    let params = value_params(None, Some(w_n));
    let mut tape = Tape::new(&params);
    let outs = output_inputs(&mut tape, outputs);
    let unit: BTreeMap<usize, Var> = outs.iter().map(|(&e, &v)| (e, tape.normalize(v))).collect();
    let mut terms = Vec::new();
    for e in &edges {
        let wv = tape.mat_vec(TensorId::EdgeScore, unit[&e.tail]);
        let logit = tape.dot(unit[&e.head], wv);
        terms.push(tape.bce(logit, e.present, F::of(BCE_EPS)));
    }
    let s = tape.sum(&terms);
    let m = tape.scale(s, F::one() / F::of(terms.len() as f64));
    Ok(tape.scalar(m))
}
