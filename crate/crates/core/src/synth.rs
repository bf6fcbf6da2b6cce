//! Synthetic twin benchmarks with a planted alignment.
//!
//! The left graph grows by preferential attachment, so a few hubs collect
//! many edges. The right graph is the same graph under a random entity
//! permutation with a fraction of its triples dropped. Both sides get noisy
//! copies of shared random name features.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{parse_kv, parse_value};
use crate::embed::{write_emb, FeatureSet, FeatureTable};
use crate::error::{Error, Result};
use crate::kg::{write_kg_pair, IdMap, KnowledgeGraph, KnowledgeGraphPair, Side, Triple};
use crate::tensor::Matrix;

/// Feature file names written next to the graph files.
pub const ENT_FEATURES: [&str; 2] = ["ent_feat_1.emb", "ent_feat_2.emb"];
pub const REL_FEATURES: [&str; 2] = ["rel_feat_1.emb", "rel_feat_2.emb"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_triples: usize,
    pub feature_dim: usize,
    /// Per-component standard deviation of the feature noise.
    pub feature_noise_sigma: f64,
    /// Fraction of right-graph triples removed.
    pub structure_dropout: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_entities: 200,
            n_relations: 10,
            n_triples: 800,
            feature_dim: 64,
            feature_noise_sigma: 0.1,
            structure_dropout: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_entities < 2 {
            return fail("n_entities must be at least 2");
        }
        if self.n_relations == 0 || self.feature_dim == 0 {
            return fail("n_relations and feature_dim must be positive");
        }
        if self.n_triples + 1 < self.n_entities {
            return fail("n_triples must be at least n_entities - 1");
        }
        let max_pairs = self.n_entities * (self.n_entities - 1);
        if self.n_triples > max_pairs {
            return fail("n_triples exceeds the number of distinct ordered pairs");
        }
        if !(0.0..1.0).contains(&self.structure_dropout) {
            return fail("structure_dropout must be in [0, 1)");
        }
        if !(self.feature_noise_sigma >= 0.0) || !self.feature_noise_sigma.is_finite() {
            return fail("feature_noise_sigma must be finite and non-negative");
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str, file: &str) -> Result<Self> {
        let mut s = Self::default();
        for (k, v) in parse_kv(text, file)? {
            match k.as_str() {
                "n_entities" => s.n_entities = parse_value(&k, &v)?,
                "n_relations" => s.n_relations = parse_value(&k, &v)?,
                "n_triples" => s.n_triples = parse_value(&k, &v)?,
                "feature_dim" => s.feature_dim = parse_value(&k, &v)?,
                "feature_noise_sigma" => s.feature_noise_sigma = parse_value(&k, &v)?,
                "structure_dropout" => s.structure_dropout = parse_value(&k, &v)?,
                "seed" => s.seed = parse_value(&k, &v)?,
                _ => return Err(Error::Config(format!("unknown synth key {k:?}"))),
            }
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub pair: KnowledgeGraphPair,
    pub features: FeatureSet,
    /// Planted alignment, dense ids `(left, right)`.
    pub ground_truth: Vec<(usize, usize)>,
}

/// Triples of a connected preferential-attachment graph.
fn attachment_triples(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Triple> {
    let n = spec.n_entities;
    // one entry per unit of (degree + 1), so draws are proportional to it
    let mut urn: Vec<usize> = vec![0];
    let mut seen = BTreeSet::new();
    let mut triples = Vec::with_capacity(spec.n_triples);
    let mut push = |h: usize, t: usize, rng: &mut ChaCha8Rng, urn: &mut Vec<usize>| {
        let r = rng.random_range(0..spec.n_relations);
        triples.push(Triple::new(h, r, t));
        urn.push(h);
        urn.push(t);
    };
    for new in 1..n {
        let old = urn[rng.random_range(0..urn.len())];
        urn.push(new);
        let (h, t) = if rng.random_bool(0.5) { (new, old) } else { (old, new) };
        seen.insert((h, t));
        push(h, t, rng, &mut urn);
    }
    let mut attempts = 0;
    while seen.len() < spec.n_triples && attempts < 1000 * spec.n_triples {
        attempts += 1;
        let h = urn[rng.random_range(0..urn.len())];
        let t = rng.random_range(0..n);
        if h == t || !seen.insert((h, t)) {
            continue;
        }
        push(h, t, rng, &mut urn);
    }
    triples
}

/// `count` rows of shared unit signal plus independent noise per side, each
/// row renormalized.
fn twin_features(
    count: usize,
    dim: usize,
    sigma: f64,
    perm: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<[FeatureTable; 2]> {
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut left = Matrix::<f32>::zeros(count, dim);
    let mut right = Matrix::<f32>::zeros(count, dim);
    for i in 0..count {
        let mut base: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = base.iter().map(|x| x * x).sum::<f64>().sqrt();
        base.iter_mut().for_each(|x| *x /= n);
        for (table, row) in [(&mut left, i), (&mut right, perm[i])] {
            let noisy: Vec<f64> = base.iter().map(|x| x + noise.sample(rng)).collect();
            let n = noisy.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (o, v) in table.row_mut(row).iter_mut().zip(&noisy) {
                *o = (v / n) as f32;
            }
        }
    }
    Ok([FeatureTable::new(left)?, FeatureTable::new(right)?])
}

fn names(prefix: &str, offset: u64, n: usize) -> IdMap {
    let entries = (0..n)
        .map(|i| (offset + i as u64, format!("{prefix}{i}")))
        .collect();
    IdMap::from_entries(entries, prefix).expect("distinct ids")
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_entities;
    let left_triples = attachment_triples(spec, &mut rng);

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut right_triples: Vec<Triple> = left_triples
        .iter()
        .map(|t| Triple::new(perm[t.head], t.relation, perm[t.tail]))
        .collect();
    right_triples.shuffle(&mut rng);
    let keep = right_triples.len() - (right_triples.len() as f64 * spec.structure_dropout).round() as usize;
    right_triples.truncate(keep);
    right_triples.sort_unstable();

    let g1 = KnowledgeGraph::with_ids(
        names("left_entity_", 0, n),
        names("left_relation_", 0, spec.n_relations),
        left_triples,
    )?;
    let g2 = KnowledgeGraph::with_ids(
        names("right_entity_", n as u64, n),
        names("right_relation_", spec.n_relations as u64, spec.n_relations),
        right_triples,
    )?;
    let ground_truth: Vec<(usize, usize)> = (0..n).map(|i| (i, perm[i])).collect();

    let [e1, e2] = twin_features(n, spec.feature_dim, spec.feature_noise_sigma, &perm, &mut rng)?;
    let rel_perm: Vec<usize> = (0..spec.n_relations).collect();
    let [r1, r2] = twin_features(
        spec.n_relations,
        spec.feature_dim,
        spec.feature_noise_sigma,
        &rel_perm,
        &mut rng,
    )?;
    Ok(SynthDataset {
        pair: KnowledgeGraphPair::new(g1, g2, ground_truth.clone())?,
        features: FeatureSet {
            entities: [e1, e2],
            relations: [r1, r2],
        },
        ground_truth,
    })
}

impl SynthDataset {
    /// Writes the dataset directory plus the four feature files.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_kg_pair(&self.pair, dir)?;
        for side in Side::BOTH {
            let i = side.index();
            write_emb(dir.join(ENT_FEATURES[i]), self.features.entity(side).rows())?;
            write_emb(dir.join(REL_FEATURES[i]), self.features.relation(side).rows())?;
        }
        Ok(())
    }
}

/// Loads the four feature files [`SynthDataset::write`] produces.
pub fn load_feature_dir(dir: impl AsRef<Path>) -> Result<FeatureSet> {
    let dir = dir.as_ref();
    let load = |emb: &str, ids: &str| crate::embed::load_features(dir.join(emb), dir.join(ids));
    Ok(FeatureSet {
        entities: [load(ENT_FEATURES[0], "ent_ids_1")?, load(ENT_FEATURES[1], "ent_ids_2")?],
        relations: [load(REL_FEATURES[0], "rel_ids_1")?, load(REL_FEATURES[1], "rel_ids_2")?],
    })
}

pub fn write_spec(spec: &SynthSpec, path: impl AsRef<Path>) -> Result<()> {
    let text = format!(
        "n_entities = {}\nn_relations = {}\nn_triples = {}\nfeature_dim = {}\n\
         feature_noise_sigma = {}\nstructure_dropout = {}\nseed = {}\n",
        spec.n_entities,
        spec.n_relations,
        spec.n_triples,
        spec.feature_dim,
        spec.feature_noise_sigma,
        spec.structure_dropout,
        spec.seed
    );
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
