//! Personalized rooted-tree sampling from frozen momentum tables.
//!
//! Children of a node `x` are drawn from a softmax over the logits
//!
//! ```text
//! LeakyReLU(e_rootᵀ W_p e_y + e_xᵀ W_k e_y) / ln(1 + deg(y))
//! ```
//!
//! where `k` is the relation of the edge `x → y` and `p` is the composed
//! relation of the path `root → … → x → y`. The edge back to `x`'s own parent
//! is never a candidate.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{compose_relation, reflect, UnitRelationVector};
use crate::kg::{KnowledgeGraph, KnowledgeGraphPair, Side};
use crate::tensor::{dot, leaky_relu, Matrix, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode<F> {
    pub entity: usize,
    /// Relation id of the edge from the parent (inverse ids included).
    pub relation_from_parent: Option<usize>,
    /// Composed relation from the root, as seen by the sampler.
    pub path_relation: Option<UnitRelationVector<F>>,
    pub depth: usize,
    pub children: Vec<TreeNode<F>>,
}

impl<F> TreeNode<F> {
    pub fn leaf(entity: usize) -> Self {
        Self {
            entity,
            relation_from_parent: None,
            path_relation: None,
            depth: 0,
            children: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(TreeNode::node_count).sum::<usize>()
    }

    pub fn height(&self) -> usize {
        self.children.iter().map(|c| 1 + c.height()).max().unwrap_or(0)
    }

    /// Entities in pre-order.
    pub fn entities(&self) -> Vec<usize> {
        let mut out = vec![self.entity];
        for c in &self.children {
            out.extend(c.entities());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootedTree<F> {
    pub root: TreeNode<F>,
    pub side: Side,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub depth: usize,
    pub fanout: usize,
    pub leaky_slope: f64,
    /// Replace the attention distribution by a uniform one.
    pub uniform: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            fanout: 8,
            leaky_slope: 0.01,
            uniform: false,
        }
    }
}

/// Read-only view of the momentum tables of one graph, relation rows
/// normalized once up front.
#[derive(Debug, Clone)]
pub struct FrozenTables<F> {
    entities: Matrix<F>,
    relations: Vec<UnitRelationVector<F>>,
}

impl<F: Real> FrozenTables<F> {
    pub fn new(entities: &Matrix<F>, relations: &Matrix<F>) -> Result<Self> {
        let relations = relations
            .iter_rows()
            .enumerate()
            .map(|(k, r)| {
                UnitRelationVector::new(r)
                    .ok_or_else(|| Error::NonFinite(format!("relation {k} has zero norm")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entities: entities.clone(),
            relations,
        })
    }

    pub fn entity(&self, i: usize) -> &[F] {
        self.entities.row(i)
    }

    pub fn relation(&self, k: usize) -> &UnitRelationVector<F> {
        &self.relations[k]
    }
}

/// Unnormalized sampling score of candidate `y` under parent `x`.
pub fn sampling_logit<F: Real>(
    e_root: &[F],
    e_parent: &[F],
    e_cand: &[F],
    r_path: &UnitRelationVector<F>,
    r_edge: &UnitRelationVector<F>,
    deg_cand: usize,
    leaky_slope: F,
) -> Result<F> {
    if deg_cand == 0 {
        return Err(Error::Config("candidate with degree 0 cannot be sampled".into()));
    }
    let d = e_cand.len();
    if [e_root.len(), e_parent.len(), r_path.dim(), r_edge.dim()].iter().any(|&n| n != d) {
        return Err(Error::Shape("sampling logit operands differ in dimension".into()));
    }
    let bilinear = dot(e_root, &reflect(r_path.as_slice(), e_cand))
        + dot(e_parent, &reflect(r_edge.as_slice(), e_cand));
    Ok(leaky_relu(bilinear, leaky_slope) / F::of(deg_cand as f64).ln_1p())
}

/// A candidate child with its path relation and sampling probability.
#[derive(Debug, Clone)]
pub struct Candidate<F> {
    pub relation: usize,
    pub entity: usize,
    pub path_relation: UnitRelationVector<F>,
    pub probability: F,
}

/// Softmax distribution over the admissible children of `node`.
pub fn child_distribution<F: Real>(
    kg: &KnowledgeGraph,
    node: &TreeNode<F>,
    parent: Option<usize>,
    root_entity: usize,
    frozen: &FrozenTables<F>,
    cfg: &SamplerConfig,
) -> Result<Vec<Candidate<F>>> {
    let slope = F::of(cfg.leaky_slope);
    let mut cands = Vec::new();
    let mut logits = Vec::new();
    for &(rel, ent) in kg.neighbors(node.entity)? {
        if Some(ent) == parent {
            continue;
        }
        let r_edge = frozen.relation(rel);
        let r_path = match &node.path_relation {
            Some(p) => compose_relation(p.as_slice(), r_edge.as_slice())?,
            None => r_edge.clone(),
        };
        let logit = if cfg.uniform {
            F::zero()
        } else {
            sampling_logit(
                frozen.entity(root_entity),
                frozen.entity(node.entity),
                frozen.entity(ent),
                &r_path,
                r_edge,
                kg.adjacency(ent).len(),
                slope,
            )?
        };
        logits.push(logit);
        cands.push(Candidate {
            relation: rel,
            entity: ent,
            path_relation: r_path,
            probability: F::zero(),
        });
    }
    for (c, p) in cands.iter_mut().zip(crate::tensor::softmax(&logits)) {
        c.probability = p;
    }
    Ok(cands)
}

/// Draws up to `fanout` distinct children of `node`. With no more candidates
/// than the fanout all are taken, in adjacency order.
pub fn sample_children<F: Real, R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    node: &TreeNode<F>,
    parent: Option<usize>,
    root_entity: usize,
    frozen: &FrozenTables<F>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<TreeNode<F>>> {
    if node.depth >= cfg.depth {
        return Err(Error::Config(format!(
            "cannot expand a node at depth {} with depth limit {}",
            node.depth, cfg.depth
        )));
    }
    let cands = child_distribution(kg, node, parent, root_entity, frozen, cfg)?;
    let chosen: Vec<usize> = if cands.len() <= cfg.fanout {
        (0..cands.len()).collect()
    } else {
        let mut weights: Vec<f64> = cands.iter().map(|c| c.probability.f64()).collect();
        let mut picked = Vec::with_capacity(cfg.fanout);
        for _ in 0..cfg.fanout {
            // Renormalize against the largest remaining weight so tiny
            // probabilities never underflow to an all-zero set.
            let max = weights.iter().copied().fold(0.0, f64::max);
            let scaled: Vec<f64> = weights.iter().map(|w| w / max).collect();
            let idx = WeightedIndex::new(&scaled)
                .map_err(|e| Error::NonFinite(format!("sampling weights: {e}")))?
                .sample(rng);
            picked.push(idx);
            weights[idx] = 0.0;
        }
        picked.sort_unstable();
        picked
    };
    Ok(chosen
        .into_iter()
        .map(|i| {
            let c = &cands[i];
            TreeNode {
                entity: c.entity,
                relation_from_parent: Some(c.relation),
                path_relation: Some(c.path_relation.clone()),
                depth: node.depth + 1,
                children: Vec::new(),
            }
        })
        .collect())
}

/// Breadth-first expansion from `root` to the configured depth.
pub fn sample_tree<F: Real, R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    side: Side,
    root: usize,
    frozen: &FrozenTables<F>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<RootedTree<F>> {
    kg.neighbors(root)?;
    // Arena of (node, parent index); children linked up afterwards.
    let mut arena: Vec<(TreeNode<F>, Option<usize>)> = vec![(TreeNode::leaf(root), None)];
    let mut head = 0;
    while head < arena.len() {
        if arena[head].0.depth < cfg.depth {
            let parent_entity = arena[head].1.map(|p| arena[p].0.entity);
            let kids = sample_children(kg, &arena[head].0, parent_entity, root, frozen, cfg, rng)?;
            arena.extend(kids.into_iter().map(|k| (k, Some(head))));
        }
        head += 1;
    }
    while arena.len() > 1 {
        let (node, parent) = arena.pop().expect("nonempty");
        let parent = parent.expect("only the root has no parent");
        arena[parent].0.children.insert(0, node);
    }
    Ok(RootedTree {
        root: arena.pop().expect("root").0,
        side,
    })
}

/// One-hop tree holding every neighbor of `root`; the plain-GNN ablation
/// encodes these instead of sampled trees.
pub fn full_neighborhood_tree<F: Real>(
    kg: &KnowledgeGraph,
    side: Side,
    root: usize,
    frozen: &FrozenTables<F>,
) -> Result<RootedTree<F>> {
    let children = kg
        .neighbors(root)?
        .iter()
        .map(|&(rel, ent)| TreeNode {
            entity: ent,
            relation_from_parent: Some(rel),
            path_relation: Some(frozen.relation(rel).clone()),
            depth: 1,
            children: Vec::new(),
        })
        .collect();
    Ok(RootedTree {
        root: TreeNode {
            children,
            ..TreeNode::leaf(root)
        },
        side,
    })
}

/// Independent random stream for one root, so trees can be sampled in any
/// order or in parallel with identical results.
pub fn root_rng(seed: u64, tag: u64, side: Side, entity: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(((side.index() as u64) << 48) | entity as u64);
    rng
}

/// Samples a tree for every entity of both graphs.
pub fn sample_all_trees<F: Real>(
    pair: &KnowledgeGraphPair,
    frozen: &[FrozenTables<F>; 2],
    cfg: &SamplerConfig,
    full_neighborhood: bool,
    seed: u64,
    tag: u64,
) -> Result<[Vec<RootedTree<F>>; 2]> {
    let per_side = |side: Side| -> Result<Vec<RootedTree<F>>> {
        let kg = pair.graph(side);
        let tables = &frozen[side.index()];
        (0..kg.entity_count())
            .into_par_iter()
            .map(|e| {
                if full_neighborhood {
                    full_neighborhood_tree(kg, side, e, tables)
                } else {
                    sample_tree(kg, side, e, tables, cfg, &mut root_rng(seed, tag, side, e))
                }
            })
            .collect()
    };
    Ok([per_side(Side::Left)?, per_side(Side::Right)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triple;

    fn unit(v: &[f64]) -> UnitRelationVector<f64> {
        UnitRelationVector::new(v).unwrap()
    }

    #[test]
    fn zero_embeddings_give_zero_logit() {
        let z = [0.0; 3];
        let r = unit(&[0.0, 1.0, 0.0]);
        assert_eq!(sampling_logit(&z, &z, &z, &r, &r, 5, 0.01).unwrap(), 0.0);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn diagonal_reflection_logit() {
        let r = unit(&[0.0, 1.0]);
        let v = sampling_logit(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &r, &r, 1, 0.01).unwrap();
        assert!((v - 1.0 / 2f64.ln()).abs() < 1e-12);
        assert!((v - 1.4427).abs() < 1e-4);
    }

    #[test]
    fn zero_degree_is_rejected() {
        let r = unit(&[1.0]);
        assert!(sampling_logit(&[1.0], &[1.0], &[1.0], &r, &r, 0, 0.01).is_err());
    }

    fn frozen(n: usize, r: usize, d: usize) -> FrozenTables<f64> {
        let e = Matrix::from_vec(n, d, (0..n * d).map(|i| ((i * 7) as f64).sin()).collect());
        let rel = Matrix::from_vec(2 * r, d, (0..2 * r * d).map(|i| ((i * 3 + 1) as f64).cos()).collect());
        FrozenTables::new(&e, &rel).unwrap()
    }

    #[test]
    fn path_graph_is_forced_chain() {
        let kg = KnowledgeGraph::new(3, 1, vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2)]).unwrap();
        let cfg = SamplerConfig {
            depth: 2,
            fanout: 1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_tree(&kg, Side::Left, 0, &frozen(3, 1, 4), &cfg, &mut rng).unwrap();
        assert_eq!(t.root.entities(), vec![0, 1, 2]);
        assert_eq!(t.root.height(), 2);
    }

    #[test]
    fn isolated_root_is_single_node() {
        let kg = KnowledgeGraph::new(3, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_tree(&kg, Side::Left, 2, &frozen(3, 1, 4), &SamplerConfig::default(), &mut rng)
            .unwrap();
        assert_eq!(t.root.node_count(), 1);
        assert!(sample_tree(&kg, Side::Left, 3, &frozen(3, 1, 4), &SamplerConfig::default(), &mut rng)
            .is_err());
    }

    #[test]
    fn small_neighborhood_taken_whole() {
        let kg = KnowledgeGraph::new(3, 1, vec![Triple::new(0, 0, 1), Triple::new(2, 0, 0)]).unwrap();
        let f = frozen(3, 1, 4);
        let cfg = SamplerConfig::default();
        let root = TreeNode::leaf(0);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kids = sample_children(&kg, &root, None, 0, &f, &cfg, &mut rng).unwrap();
            let ids: Vec<_> = kids.iter().map(|k| (k.relation_from_parent, k.entity)).collect();
            assert_eq!(ids, vec![(Some(0), 1), (Some(1), 2)]);
            // depth-1 path relation is the edge relation itself
            assert_eq!(kids[0].path_relation.as_ref().unwrap(), f.relation(0));
        }
    }

    #[test]
    fn depth_cap_forbids_expansion() {
        let kg = KnowledgeGraph::new(2, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        let node = TreeNode {
            depth: 2,
            ..TreeNode::leaf(0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_children(&kg, &node, None, 0, &frozen(2, 1, 3), &SamplerConfig::default(), &mut rng)
            .is_err());
    }

    #[test]
    fn same_stream_same_tree() {
        let triples = (1..12).map(|i| Triple::new(0, i % 2, i)).collect();
        let kg = KnowledgeGraph::new(12, 2, triples).unwrap();
        let f = frozen(12, 2, 5);
        let cfg = SamplerConfig {
            fanout: 3,
            ..Default::default()
        };
        let a = sample_tree(&kg, Side::Left, 0, &f, &cfg, &mut root_rng(1, 2, Side::Left, 0)).unwrap();
        let b = sample_tree(&kg, Side::Left, 0, &f, &cfg, &mut root_rng(1, 2, Side::Left, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.root.children.len(), 3);
    }
}
