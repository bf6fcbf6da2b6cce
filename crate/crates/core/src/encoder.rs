//! Tree attention encoding, leaves to root.
//!
//! For a node `x` with children `y` reached through relation `k`, where `p` is
//! the composed relation of the path from the root `i` to `y`:
//!
//! ```text
//! b_y  = LeakyReLU(w_attᵀ [W_pᵀ e_i ‖ W_kᵀ e_x ‖ e'_y])
//! a_y  = softmax_y(b_y)
//! e'_x = LeakyReLU(e_x + Σ_y a_y W_kᵀ e'_y)
//! ```
//!
//! Leaves map to `LeakyReLU(e_x)`. At depth one the parent is the root and
//! `p = k`. Relation rows are normalized on use.

use crate::autodiff::{Tape, Var};
use crate::embed::{TensorId, TensorSet};
use crate::error::{Error, Result};
use crate::geometry::{compose_relation, reflect, UnitRelationVector, COMPOSE_EPS};
use crate::kg::Side;
use crate::sampler::{RootedTree, TreeNode};
use crate::tensor::{axpy, dot, leaky_relu, norm, softmax, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRoot<F> {
    pub entity: usize,
    pub embedding: Vec<F>,
}

/// Unnormalized attention of a child on its parent.
pub fn branch_attention<F: Real>(
    e_root: &[F],
    e_parent: &[F],
    e_child: &[F],
    r_path: &UnitRelationVector<F>,
    r_edge: &UnitRelationVector<F>,
    w_att: &[F],
    leaky_slope: F,
) -> Result<F> {
    let d = e_child.len();
    if w_att.len() != 3 * d {
        return Err(Error::Shape(format!(
            "attention vector has length {}, expected {}",
            w_att.len(),
            3 * d
        )));
    }
    if [e_root.len(), e_parent.len(), r_path.dim(), r_edge.dim()].iter().any(|&n| n != d) {
        return Err(Error::Shape("branch attention operands differ in dimension".into()));
    }
    let s = dot(&w_att[..d], &reflect(r_path.as_slice(), e_root))
        + dot(&w_att[d..2 * d], &reflect(r_edge.as_slice(), e_parent))
        + dot(&w_att[2 * d..], e_child);
    Ok(leaky_relu(s, leaky_slope))
}

/// Inputs describing one already-encoded child.
#[derive(Debug, Clone)]
pub struct ChildMessage<'a, F> {
    pub embedding: &'a [F],
    pub r_edge: &'a UnitRelationVector<F>,
    pub r_path: &'a UnitRelationVector<F>,
}

/// Aggregates encoded children into `e_node`. Returns the new embedding and
/// the attention weight of every child.
pub fn aggregate_node<F: Real>(
    e_node: &[F],
    e_root: &[F],
    children: &[ChildMessage<'_, F>],
    w_att: &[F],
    leaky_slope: F,
) -> Result<(Vec<F>, Vec<F>)> {
    let scores = children
        .iter()
        .map(|c| branch_attention(e_root, e_node, c.embedding, c.r_path, c.r_edge, w_att, leaky_slope))
        .collect::<Result<Vec<_>>>()?;
    let weights = if scores.is_empty() { Vec::new() } else { softmax(&scores) };
    let mut acc = e_node.to_vec();
    for (c, a) in children.iter().zip(&weights) {
        axpy(*a, &reflect(c.r_edge.as_slice(), c.embedding), &mut acc);
    }
    Ok((acc.into_iter().map(|x| leaky_relu(x, leaky_slope)).collect(), weights))
}

/// Per-node trace of a value-level encoding, for inspection.
#[derive(Debug, Clone)]
pub struct NodeTrace<F> {
    pub entity: usize,
    pub relation_from_parent: Option<usize>,
    /// Attention weight this node received from its parent.
    pub weight: Option<F>,
    pub embedding: Vec<F>,
    pub children: Vec<NodeTrace<F>>,
}

fn unit_relation<F: Real>(params: &TensorSet<F>, side: Side, k: usize) -> Result<UnitRelationVector<F>> {
    UnitRelationVector::new(params.get(TensorId::Relations(side)).row(k))
        .ok_or_else(|| Error::NonFinite(format!("relation {k} has zero norm")))
}

fn trace_node<F: Real>(
    params: &TensorSet<F>,
    side: Side,
    node: &TreeNode<F>,
    e_root: &[F],
    path: Option<&UnitRelationVector<F>>,
    slope: F,
) -> Result<NodeTrace<F>> {
    let e_x = params.get(TensorId::Entities(side)).row(node.entity);
    let w_att = params.get(TensorId::Attention).as_slice();
    let mut kids = Vec::new();
    let mut rels = Vec::new();
    for child in &node.children {
        let k = child.relation_from_parent.expect("child carries its edge relation");
        let r_k = unit_relation(params, side, k)?;
        let r_p = match path {
            Some(p) => compose_relation(p.as_slice(), r_k.as_slice())?,
            None => r_k.clone(),
        };
        kids.push(trace_node(params, side, child, e_root, Some(&r_p), slope)?);
        rels.push((r_k, r_p));
    }
    let messages: Vec<ChildMessage<'_, F>> = kids
        .iter()
        .zip(&rels)
        .map(|(t, (r_k, r_p))| ChildMessage {
            embedding: &t.embedding,
            r_edge: r_k,
            r_path: r_p,
        })
        .collect();
    let (embedding, weights) = aggregate_node(e_x, e_root, &messages, w_att, slope)?;
    for (t, w) in kids.iter_mut().zip(weights) {
        t.weight = Some(w);
    }
    Ok(NodeTrace {
        entity: node.entity,
        relation_from_parent: node.relation_from_parent,
        weight: None,
        embedding,
        children: kids,
    })
}

/// Value-level encoding that records every node's embedding and weight.
pub fn trace_tree<F: Real>(tree: &RootedTree<F>, params: &TensorSet<F>, leaky_slope: F) -> Result<NodeTrace<F>> {
    let e_root = params.get(TensorId::Entities(tree.side)).row(tree.root.entity);
    trace_node(params, tree.side, &tree.root, e_root, None, leaky_slope)
}

/// Records the encoding of `tree` on `tape`; returns the root embedding.
pub fn encode_on_tape<F: Real>(tape: &mut Tape<'_, F>, tree: &RootedTree<F>, leaky_slope: F) -> Var {
    let root = tape.param(TensorId::Entities(tree.side), tree.root.entity);
    let att = [
        tape.param(TensorId::Attention, 0),
        tape.param(TensorId::Attention, 1),
        tape.param(TensorId::Attention, 2),
    ];
    let ctx = Ctx {
        side: tree.side,
        root,
        att,
        slope: leaky_slope,
    };
    ctx.node(tape, &tree.root, root, None)
}

struct Ctx<F> {
    side: Side,
    root: Var,
    att: [Var; 3],
    slope: F,
}

impl<F: Real> Ctx<F> {
    fn node(&self, tape: &mut Tape<'_, F>, node: &TreeNode<F>, e_x: Var, path: Option<Var>) -> Var {
        if node.children.is_empty() {
            return tape.leaky_relu(e_x, self.slope);
        }
        let mut scores = Vec::with_capacity(node.children.len());
        let mut messages = Vec::with_capacity(node.children.len());
        for child in &node.children {
            let k = child.relation_from_parent.expect("child carries its edge relation");
            let raw = tape.param(TensorId::Relations(self.side), k);
            let r_k = tape.normalize(raw);
            let r_p = match path {
                None => r_k,
                Some(p) => {
                    let h = tape.mul(p, r_k);
                    if norm(tape.value(h)) >= F::of(COMPOSE_EPS) {
                        tape.normalize(h)
                    } else {
                        r_k
                    }
                }
            };
            let e_y = tape.param(TensorId::Entities(self.side), child.entity);
            let child_out = self.node(tape, child, e_y, Some(r_p));

            let from_root = tape.reflect(r_p, self.root);
            let from_parent = tape.reflect(r_k, e_x);
            let s0 = tape.dot(self.att[0], from_root);
            let s1 = tape.dot(self.att[1], from_parent);
            let s2 = tape.dot(self.att[2], child_out);
            let s = tape.sum(&[s0, s1, s2]);
            scores.push(tape.leaky_relu(s, self.slope));
            messages.push(tape.reflect(r_k, child_out));
        }
        let weights = tape.softmax(&scores);
        let mut terms = vec![e_x];
        for (a, m) in weights.into_iter().zip(messages) {
            terms.push(tape.scale_by(a, m));
        }
        let total = tape.sum(&terms);
        tape.leaky_relu(total, self.slope)
    }
}

/// Output embedding of the tree's root.
pub fn encode_root<F: Real>(tree: &RootedTree<F>, params: &TensorSet<F>, leaky_slope: F) -> EncodedRoot<F> {
    let mut tape = Tape::new(params);
    let out = encode_on_tape(&mut tape, tree, leaky_slope);
    EncodedRoot {
        entity: tree.root.entity,
        embedding: tape.value(out).to_vec(),
    }
}

/// Accumulates the gradient of `⟨seed, encode_root(tree)⟩` into `sink`.
pub fn backprop_tree<F: Real>(
    tree: &RootedTree<F>,
    params: &TensorSet<F>,
    leaky_slope: F,
    seed: &[F],
    sink: &mut impl FnMut(TensorId, usize, &[F]),
) {
    let mut tape = Tape::new(params);
    let out = encode_on_tape(&mut tape, tree, leaky_slope);
    tape.backward(&[(out, seed.to_vec())], sink);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn unit(v: &[f64]) -> UnitRelationVector<f64> {
        UnitRelationVector::new(v).unwrap()
    }

    #[test]
    fn zero_attention_vector() {
        let r = unit(&[0.6, 0.8]);
        let b = branch_attention(&[1.0, 2.0], &[3.0, -1.0], &[0.5, 0.5], &r, &r, &[0.0; 6], 0.01).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn scalar_branch_attention() {
        let r = unit(&[1.0]);
        let b = branch_attention(&[2.0], &[3.0], &[5.0], &r, &r, &[1.0, 1.0, 1.0], 0.01).unwrap();
        assert_eq!(b, 0.0);
        assert!(branch_attention(&[2.0], &[3.0], &[5.0], &r, &r, &[1.0, 1.0], 0.01).is_err());
    }

    #[test]
    fn leaf_and_single_child() {
        let (e, _) = aggregate_node(&[1.0, -2.0], &[1.0, -2.0], &[], &[0.0; 6], 0.01).unwrap();
        assert_eq!(e, vec![1.0, -0.02]);

        let r = unit(&[1.0, 0.0]);
        let child = [0.0, 1.0];
        let msg = ChildMessage {
            embedding: &child,
            r_edge: &r,
            r_path: &r,
        };
        let (e, w) = aggregate_node(&[1.0, 0.0], &[1.0, 0.0], &[msg], &[0.3; 6], 0.01).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(e, vec![1.0, 1.0]);
    }

    #[test]
    fn tape_and_value_routes_agree() {
        let d = 3;
        let mk = |r: usize, c: usize, s: f64| {
            Matrix::from_vec(r, c, (0..r * c).map(|i| ((i as f64 + s) * 1.3).sin()).collect())
        };
        let params = TensorSet::from_tensors(vec![
            mk(4, d, 0.0),
            mk(4, d, 1.0),
            mk(4, d, 2.0),
            mk(4, d, 3.0),
            mk(2, d, 4.0),
            mk(3, d, 5.0),
            Matrix::identity(d),
        ]);
        let leaf = |e, k| TreeNode {
            entity: e,
            relation_from_parent: Some(k),
            path_relation: None,
            depth: 2,
            children: vec![],
        };
        let tree = RootedTree {
            side: Side::Left,
            root: TreeNode {
                children: vec![
                    TreeNode {
                        entity: 1,
                        relation_from_parent: Some(0),
                        path_relation: None,
                        depth: 1,
                        children: vec![leaf(2, 1), leaf(3, 3)],
                    },
                    TreeNode {
                        entity: 3,
                        relation_from_parent: Some(2),
                        path_relation: None,
                        depth: 1,
                        children: vec![],
                    },
                ],
                ..TreeNode::leaf(0)
            },
        };
        let a = encode_root(&tree, &params, 0.01).embedding;
        let b = trace_tree(&tree, &params, 0.01).unwrap();
        for (x, y) in a.iter().zip(&b.embedding) {
            assert!((x - y).abs() < 1e-12);
        }
        let w: f64 = b.children.iter().map(|c| c.weight.unwrap()).sum();
        assert!((w - 1.0).abs() < 1e-12);
    }
}
