//! Trainable parameter tables, name-feature files and momentum copies.
//!
//! Feature and checkpoint tensors use the UNEA-EMB v1 format: an ASCII header
//! line `UNEA-EMB 1 <count> <dim>\n` followed by `count·dim` little-endian
//! `f32` values in row-major order.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kg::{parse_ids, KnowledgeGraphPair, Side};
use crate::tensor::{norm, Matrix, Real};

const MAGIC: &str = "UNEA-EMB";
const VERSION: u32 = 1;
/// Longest header accepted before the newline.
const MAX_HEADER: usize = 128;

/// Name features for one table, one row per dense id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    rows: Matrix<f32>,
}

impl FeatureTable {
    pub fn new(rows: Matrix<f32>) -> Result<Self> {
        if !rows.is_finite() {
            return Err(Error::NonFinite("feature table".into()));
        }
        Ok(Self { rows })
    }

    pub fn count(&self) -> usize {
        self.rows.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn rows(&self) -> &Matrix<f32> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.rows.row(i)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::new(decode_emb(bytes)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_emb(&self.rows)
    }
}

/// Entity and relation features for both graphs.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub entities: [FeatureTable; 2],
    pub relations: [FeatureTable; 2],
}

impl FeatureSet {
    pub fn entity(&self, side: Side) -> &FeatureTable {
        &self.entities[side.index()]
    }

    pub fn relation(&self, side: Side) -> &FeatureTable {
        &self.relations[side.index()]
    }

    /// Checks row counts against the graphs and that all dims agree.
    pub fn validate(&self, pair: &KnowledgeGraphPair) -> Result<()> {
        let dim = self.entities[0].feature_dim();
        for side in Side::BOTH {
            let g = pair.graph(side);
            let checks = [
                ("entity", self.entity(side), g.entity_count()),
                ("relation", self.relation(side), g.relation_count()),
            ];
            for (what, table, count) in checks {
                if table.count() != count {
                    return Err(Error::Shape(format!(
                        "{what} features for graph {} have {} rows, graph has {count}",
                        side.number(),
                        table.count()
                    )));
                }
                if table.feature_dim() != dim {
                    return Err(Error::Shape(format!(
                        "{what} features for graph {} have dim {}, expected {dim}",
                        side.number(),
                        table.feature_dim()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn encode_emb<F: Real>(m: &Matrix<F>) -> Vec<u8> {
    let header = format!("{MAGIC} {VERSION} {} {}\n", m.rows(), m.cols());
    let mut out = Vec::with_capacity(header.len() + 4 * m.as_slice().len());
    out.extend_from_slice(header.as_bytes());
    for x in m.as_slice() {
        out.extend_from_slice(&(x.f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_emb(bytes: &[u8]) -> Result<Matrix<f32>> {
    let nl = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::BadHeader("no header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::BadHeader("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != MAGIC {
        return Err(Error::BadHeader(format!("{header:?}")));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::BadHeader(format!("bad number {s:?} in {header:?}")))
    };
    if num(fields[1])? != VERSION as usize {
        return Err(Error::BadHeader(format!("unsupported version {}", fields[1])));
    }
    let (count, dim) = (num(fields[2])?, num(fields[3])?);
    let body = &bytes[nl + 1..];
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::BadHeader(format!("{count}x{dim} overflows")))?;
    if body.len() != expected {
        return Err(Error::Shape(format!(
            "header declares {count}x{dim} floats ({expected} bytes), body has {} bytes",
            body.len()
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("row {} col {}", i / dim.max(1), i % dim.max(1))));
    }
    Ok(Matrix::from_vec(count, dim, data))
}

pub fn read_emb(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_emb(&bytes)
}

pub fn write_emb<F: Real>(path: impl AsRef<Path>, m: &Matrix<F>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_emb(m)).map_err(|e| Error::io(path, e))
}

/// Reads a feature file and checks its row count against the ids file.
pub fn load_features(emb_path: impl AsRef<Path>, ids_path: impl AsRef<Path>) -> Result<FeatureTable> {
    let (emb_path, ids_path) = (emb_path.as_ref(), ids_path.as_ref());
    if !ids_path.exists() {
        return Err(Error::MissingFile(ids_path.to_path_buf()));
    }
    let text = fs::read_to_string(ids_path).map_err(|e| Error::io(ids_path, e))?;
    let ids = parse_ids(&text, &ids_path.display().to_string())?;
    let table = FeatureTable::new(read_emb(emb_path)?)?;
    if table.count() != ids.len() {
        return Err(Error::Shape(format!(
            "{} has {} rows but {} lists {} ids",
            emb_path.display(),
            table.count(),
            ids_path.display(),
            ids.len()
        )));
    }
    Ok(table)
}

/// `D_f × d` projection with orthonormal columns when `D_f ≥ d`, orthonormal
/// rows otherwise, from the QR factorization of a seeded Gaussian matrix.
pub fn orthonormal_projection<F: Real>(feature_dim: usize, dim: usize, seed: u64) -> Matrix<F> {
    let (tall, short) = (feature_dim.max(dim), feature_dim.min(dim));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(tall, short, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    let mut p = Matrix::zeros(feature_dim, dim);
    for i in 0..feature_dim {
        for j in 0..dim {
            let v = if feature_dim >= dim { q[(i, j)] } else { q[(j, i)] };
            p[(i, j)] = F::of(v);
        }
    }
    p
}

/// Each output row is the L2-normalized projection `f_i · P`.
pub fn init_embeddings<F: Real>(features: &FeatureTable, p: &Matrix<F>) -> Result<Matrix<F>> {
    if p.rows() != features.feature_dim() {
        return Err(Error::Shape(format!(
            "projection has {} rows, features have dim {}",
            p.rows(),
            features.feature_dim()
        )));
    }
    let mut out = Matrix::zeros(features.count(), p.cols());
    for i in 0..features.count() {
        let f: Vec<F> = features.row(i).iter().map(|x| F::of(*x as f64)).collect();
        let y = p.vec_mul(&f);
        let n = norm(&y);
        if !(n > F::zero()) {
            return Err(Error::ZeroNorm { row: i });
        }
        for (o, v) in out.row_mut(i).iter_mut().zip(&y) {
            *o = *v / n;
        }
    }
    Ok(out)
}

/// `frozen ← mu·frozen + (1−mu)·live`, elementwise.
pub fn momentum_update<F: Real>(frozen: &mut Matrix<F>, live: &Matrix<F>, mu: F) -> Result<()> {
    if frozen.shape() != live.shape() {
        return Err(Error::Shape(format!(
            "momentum copy {:?} vs live table {:?}",
            frozen.shape(),
            live.shape()
        )));
    }
    if !(mu >= F::zero() && mu <= F::one()) {
        return Err(Error::Config(format!("momentum {} outside [0, 1]", mu.f64())));
    }
    let keep = F::one() - mu;
    for (f, l) in frozen.as_mut_slice().iter_mut().zip(live.as_slice()) {
        *f = mu * *f + keep * *l;
    }
    Ok(())
}

/// Trainable tensors, in the order gradients and optimizer moments use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TensorId {
    Entities(Side),
    Relations(Side),
    Projection,
    Attention,
    EdgeScore,
}

impl TensorId {
    pub const ALL: [TensorId; 7] = [
        TensorId::Entities(Side::Left),
        TensorId::Entities(Side::Right),
        TensorId::Relations(Side::Left),
        TensorId::Relations(Side::Right),
        TensorId::Projection,
        TensorId::Attention,
        TensorId::EdgeScore,
    ];

    pub fn slot(self) -> usize {
        match self {
            TensorId::Entities(s) => s.index(),
            TensorId::Relations(s) => 2 + s.index(),
            TensorId::Projection => 4,
            TensorId::Attention => 5,
            TensorId::EdgeScore => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TensorId::Entities(Side::Left) => "entities_1",
            TensorId::Entities(Side::Right) => "entities_2",
            TensorId::Relations(Side::Left) => "relations_1",
            TensorId::Relations(Side::Right) => "relations_2",
            TensorId::Projection => "projection",
            TensorId::Attention => "attention",
            TensorId::EdgeScore => "edge_score",
        }
    }
}

/// One matrix per [`TensorId`]; used for parameters, gradients and moments.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet<F> {
    tensors: Vec<Matrix<F>>,
}

impl<F: Real> TensorSet<F> {
    pub fn from_tensors(tensors: Vec<Matrix<F>>) -> Self {
        assert_eq!(tensors.len(), TensorId::ALL.len());
        Self { tensors }
    }

    pub fn zeros_like(other: &TensorSet<F>) -> Self {
        Self {
            tensors: other
                .tensors
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: TensorId) -> &Matrix<F> {
        &self.tensors[id.slot()]
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut Matrix<F> {
        &mut self.tensors[id.slot()]
    }

    pub fn add_row(&mut self, id: TensorId, row: usize, g: &[F]) {
        for (a, b) in self.tensors[id.slot()].row_mut(row).iter_mut().zip(g) {
            *a = *a + *b;
        }
    }

    pub fn add_assign(&mut self, other: &TensorSet<F>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x = *x + *y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (TensorId, &Matrix<F>)> {
        TensorId::ALL.into_iter().zip(&self.tensors)
    }

    pub fn cast<G: Real>(&self) -> TensorSet<G> {
        TensorSet {
            tensors: self.tensors.iter().map(Matrix::cast).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &TensorSet<F>) -> F {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .flat_map(|(a, b)| a.as_slice().iter().zip(b.as_slice()))
            .fold(F::zero(), |m, (x, y)| m.max((*x - *y).abs()))
    }
}

/// All model parameters plus the frozen momentum copies the sampler reads.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables<F> {
    pub params: TensorSet<F>,
    pub frozen_entities: [Matrix<F>; 2],
    pub frozen_relations: [Matrix<F>; 2],
}

impl<F: Real> EmbeddingTables<F> {
    /// Initializes entity and relation rows from projected name features.
    /// Inverse relation rows start as copies of their forward relation.
    pub fn initialize(
        pair: &KnowledgeGraphPair,
        features: &FeatureSet,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        features.validate(pair)?;
        let feature_dim = features.entities[0].feature_dim();
        let projection = orthonormal_projection::<F>(feature_dim, dim, seed);
        let mut entities = Vec::new();
        let mut relations = Vec::new();
        for side in Side::BOTH {
            entities.push(init_embeddings(features.entity(side), &projection)?);
            let forward = init_embeddings(features.relation(side), &projection)?;
            let r = forward.rows();
            let mut both = Matrix::zeros(2 * r, dim);
            for k in 0..r {
                both.row_mut(k).copy_from_slice(forward.row(k));
                both.row_mut(k + r).copy_from_slice(forward.row(k));
            }
            relations.push(both);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
        let scale = 1.0 / (dim as f64).sqrt();
        let attention = Matrix::from_vec(
            3,
            dim,
            (0..3 * dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    F::of(z * scale)
                })
                .collect(),
        );
        let [e1, e2]: [Matrix<F>; 2] = entities.try_into().expect("two sides");
        let [r1, r2]: [Matrix<F>; 2] = relations.try_into().expect("two sides");
        let params = TensorSet::from_tensors(vec![
            e1.clone(),
            e2.clone(),
            r1.clone(),
            r2.clone(),
            projection,
            attention,
            Matrix::identity(dim),
        ]);
        Ok(Self {
            params,
            frozen_entities: [e1, e2],
            frozen_relations: [r1, r2],
        })
    }

    pub fn dim(&self) -> usize {
        self.params.get(TensorId::EdgeScore).cols()
    }

    pub fn entities(&self, side: Side) -> &Matrix<F> {
        self.params.get(TensorId::Entities(side))
    }

    pub fn relations(&self, side: Side) -> &Matrix<F> {
        self.params.get(TensorId::Relations(side))
    }

    /// Moves every frozen table towards its live counterpart.
    pub fn momentum_step(&mut self, mu: F) -> Result<()> {
        for side in Side::BOTH {
            let i = side.index();
            momentum_update(&mut self.frozen_entities[i], self.params.get(TensorId::Entities(side)), mu)?;
            momentum_update(&mut self.frozen_relations[i], self.params.get(TensorId::Relations(side)), mu)?;
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> EmbeddingTables<G> {
        EmbeddingTables {
            params: self.params.cast(),
            frozen_entities: [self.frozen_entities[0].cast(), self.frozen_entities[1].cast()],
            frozen_relations: [self.frozen_relations[0].cast(), self.frozen_relations[1].cast()],
        }
    }
}
