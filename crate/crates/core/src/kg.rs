//! Knowledge-graph loading and indexing.
//!
//! A dataset directory follows the DBP15K layout:
//!
//! ```text
//! triples_1  triples_2     head_id \t relation_id \t tail_id
//! ent_ids_1  ent_ids_2     id \t name
//! rel_ids_1  rel_ids_2     id \t name
//! ref_ent_ids              id_in_g1 \t id_in_g2
//! ```
//!
//! File ids are remapped to dense 0-based ids per graph, in order of
//! appearance in the ids file. Every triple `(h, k, t)` is indexed twice: as
//! `(k, t)` at `h` and as the inverse edge `(k + relation_count, h)` at `t`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Bijection between the ids used in files and dense ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    file_ids: Vec<u64>,
    names: Vec<String>,
    dense: HashMap<u64, usize>,
}

impl IdMap {
    /// Identity map `0..n` with numeric names.
    pub fn identity(n: usize) -> Self {
        let entries = (0..n as u64).map(|i| (i, i.to_string())).collect::<Vec<_>>();
        Self::from_entries(entries, "<identity>").expect("identity ids are unique")
    }

    pub fn from_entries(entries: Vec<(u64, String)>, file: &str) -> Result<Self> {
        let mut map = IdMap::default();
        for (id, name) in entries {
            if map.dense.insert(id, map.file_ids.len()).is_some() {
                return Err(Error::DuplicateId {
                    file: file.to_string(),
                    id,
                });
            }
            map.file_ids.push(id);
            map.names.push(name);
        }
        Ok(map)
    }

    pub fn len(&self) -> usize {
        self.file_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.file_ids.is_empty()
    }

    pub fn dense(&self, file_id: u64) -> Option<usize> {
        self.dense.get(&file_id).copied()
    }

    pub fn file_id(&self, dense: usize) -> u64 {
        self.file_ids[dense]
    }

    pub fn name(&self, dense: usize) -> &str {
        &self.names[dense]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entity_count: usize,
    relation_count: usize,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<(usize, usize)>>,
    entity_ids: IdMap,
    relation_ids: IdMap,
}

impl KnowledgeGraph {
    /// Graph over dense ids with identity id maps.
    pub fn new(entity_count: usize, relation_count: usize, triples: Vec<Triple>) -> Result<Self> {
        Self::with_ids(
            IdMap::identity(entity_count),
            IdMap::identity(relation_count),
            triples,
        )
    }

    pub fn with_ids(entity_ids: IdMap, relation_ids: IdMap, triples: Vec<Triple>) -> Result<Self> {
        let entity_count = entity_ids.len();
        let relation_count = relation_ids.len();
        let mut adjacency = vec![Vec::new(); entity_count];
        for t in &triples {
            for (what, id, count) in [
                ("entity", t.head, entity_count),
                ("relation", t.relation, relation_count),
                ("entity", t.tail, entity_count),
            ] {
                if id >= count {
                    return Err(Error::InvalidId { what, id, count });
                }
            }
            adjacency[t.head].push((t.relation, t.tail));
            adjacency[t.tail].push((t.relation + relation_count, t.head));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(Self {
            entity_count,
            relation_count,
            triples,
            adjacency,
            entity_ids,
            relation_ids,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    /// Number of original relations. Relation tables hold twice as many rows.
    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_ids(&self) -> &IdMap {
        &self.entity_ids
    }

    pub fn relation_ids(&self) -> &IdMap {
        &self.relation_ids
    }

    /// Inverse relation id of an original relation.
    pub fn inverse(&self, relation: usize) -> usize {
        relation + self.relation_count
    }

    fn check(&self, entity: usize) -> Result<()> {
        if entity >= self.entity_count {
            return Err(Error::InvalidId {
                what: "entity",
                id: entity,
                count: self.entity_count,
            });
        }
        Ok(())
    }

    /// `(relation, neighbor)` pairs sorted by relation then neighbor,
    /// inverse edges included.
    pub fn neighbors(&self, entity: usize) -> Result<&[(usize, usize)]> {
        self.check(entity)?;
        Ok(&self.adjacency[entity])
    }

    /// In-degree plus out-degree.
    pub fn degree(&self, entity: usize) -> Result<usize> {
        self.check(entity)?;
        Ok(self.adjacency[entity].len())
    }

    pub(crate) fn adjacency(&self, entity: usize) -> &[(usize, usize)] {
        &self.adjacency[entity]
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].iter().any(|&(_, n)| n == b)
    }
}

/// The two graphs to align plus the reference alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraphPair {
    pub g1: KnowledgeGraph,
    pub g2: KnowledgeGraph,
    ref_pairs: Vec<(usize, usize)>,
}

impl KnowledgeGraphPair {
    pub fn new(g1: KnowledgeGraph, g2: KnowledgeGraph, ref_pairs: Vec<(usize, usize)>) -> Result<Self> {
        for &(a, b) in &ref_pairs {
            g1.check(a)?;
            g2.check(b)?;
        }
        Ok(Self { g1, g2, ref_pairs })
    }

    pub fn graph(&self, side: Side) -> &KnowledgeGraph {
        match side {
            Side::Left => &self.g1,
            Side::Right => &self.g2,
        }
    }

    /// Gold alignment. Only evaluation and export may read it; training is
    /// unsupervised.
    pub fn reference_pairs(&self) -> &[(usize, usize)] {
        &self.ref_pairs
    }
}

/// Which of the two graphs an entity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    /// File suffix used by the dataset layout (`_1` / `_2`).
    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }
}

fn columns<'a>(line: &'a str, n: usize, file: &str, lineno: usize) -> Result<Vec<&'a str>> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != n {
        return Err(Error::parse(
            file,
            lineno,
            format!("expected {n} tab-separated columns, found {}", cols.len()),
        ));
    }
    Ok(cols)
}

fn int(s: &str, file: &str, lineno: usize) -> Result<u64> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(file, lineno, format!("not a non-negative integer: {s:?}")))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses an `id \t name` file. Names may be empty but the tab is required.
pub fn parse_ids(text: &str, file: &str) -> Result<Vec<(u64, String)>> {
    content_lines(text)
        .map(|(n, line)| {
            let (id, name) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(file, n, "expected 2 tab-separated columns, found 1"))?;
            Ok((int(id, file, n)?, name.to_string()))
        })
        .collect()
}

pub fn parse_triples(text: &str, file: &str) -> Result<Vec<(u64, u64, u64)>> {
    content_lines(text)
        .map(|(n, line)| {
            let c = columns(line, 3, file, n)?;
            Ok((int(c[0], file, n)?, int(c[1], file, n)?, int(c[2], file, n)?))
        })
        .collect()
}

pub fn parse_pairs(text: &str, file: &str) -> Result<Vec<(u64, u64)>> {
    content_lines(text)
        .map(|(n, line)| {
            let c = columns(line, 2, file, n)?;
            Ok((int(c[0], file, n)?, int(c[1], file, n)?))
        })
        .collect()
}

/// Builds a graph from parsed file contents, remapping ids.
pub fn build_graph(
    entities: Vec<(u64, String)>,
    relations: Vec<(u64, String)>,
    triples: &[(u64, u64, u64)],
    names: [&str; 3],
) -> Result<KnowledgeGraph> {
    let [ent_file, rel_file, triple_file] = names;
    let entity_ids = IdMap::from_entries(entities, ent_file)?;
    let relation_ids = IdMap::from_entries(relations, rel_file)?;
    let dangling = |id, what| Error::DanglingId {
        file: triple_file.to_string(),
        id,
        what,
    };
    let dense = triples
        .iter()
        .map(|&(h, r, t)| {
            Ok(Triple::new(
                entity_ids.dense(h).ok_or_else(|| dangling(h, "entity"))?,
                relation_ids.dense(r).ok_or_else(|| dangling(r, "relation"))?,
                entity_ids.dense(t).ok_or_else(|| dangling(t, "entity"))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    KnowledgeGraph::with_ids(entity_ids, relation_ids, dense)
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn load_graph(dir: &Path, side: Side) -> Result<KnowledgeGraph> {
    let n = side.number();
    let (ent, rel, tri) = (format!("ent_ids_{n}"), format!("rel_ids_{n}"), format!("triples_{n}"));
    let entities = parse_ids(&read(dir, &ent)?, &ent)?;
    let relations = parse_ids(&read(dir, &rel)?, &rel)?;
    let triples = parse_triples(&read(dir, &tri)?, &tri)?;
    build_graph(entities, relations, &triples, [&ent, &rel, &tri])
}

/// Loads a dataset directory in the DBP15K layout.
pub fn load_kg_pair(dir: impl AsRef<Path>) -> Result<KnowledgeGraphPair> {
    let dir = dir.as_ref();
    let g1 = load_graph(dir, Side::Left)?;
    let g2 = load_graph(dir, Side::Right)?;
    let refs = parse_pairs(&read(dir, "ref_ent_ids")?, "ref_ent_ids")?;
    let dangling = |id| Error::DanglingId {
        file: "ref_ent_ids".into(),
        id,
        what: "entity",
    };
    let ref_pairs = refs
        .into_iter()
        .map(|(a, b)| {
            Ok((
                g1.entity_ids.dense(a).ok_or_else(|| dangling(a))?,
                g2.entity_ids.dense(b).ok_or_else(|| dangling(b))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    KnowledgeGraphPair::new(g1, g2, ref_pairs)
}

fn write(dir: &Path, name: &str, body: String) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(path, e))
}

fn ids_text(ids: &IdMap) -> String {
    let mut s = String::new();
    for i in 0..ids.len() {
        let _ = writeln!(s, "{}\t{}", ids.file_id(i), ids.name(i));
    }
    s
}

/// Writes a pair in the same layout [`load_kg_pair`] reads, using file ids.
pub fn write_kg_pair(pair: &KnowledgeGraphPair, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for side in Side::BOTH {
        let g = pair.graph(side);
        let n = side.number();
        write(dir, &format!("ent_ids_{n}"), ids_text(&g.entity_ids))?;
        write(dir, &format!("rel_ids_{n}"), ids_text(&g.relation_ids))?;
        let mut s = String::new();
        for t in &g.triples {
            let _ = writeln!(
                s,
                "{}\t{}\t{}",
                g.entity_ids.file_id(t.head),
                g.relation_ids.file_id(t.relation),
                g.entity_ids.file_id(t.tail)
            );
        }
        write(dir, &format!("triples_{n}"), s)?;
    }
    let mut s = String::new();
    for &(a, b) in &pair.ref_pairs {
        let _ = writeln!(s, "{}\t{}", pair.g1.entity_ids.file_id(a), pair.g2.entity_ids.file_id(b));
    }
    write(dir, "ref_ent_ids", s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triple_adjacency() {
        let g = KnowledgeGraph::new(2, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        assert_eq!(g.neighbors(0).unwrap(), &[(0, 1)]);
        assert_eq!(g.neighbors(1).unwrap(), &[(1, 0)]);
        assert_eq!(g.degree(0).unwrap(), 1);
        assert_eq!(g.degree(1).unwrap(), 1);
    }

    #[test]
    fn isolated_entity_and_invalid_ids() {
        let g = KnowledgeGraph::new(3, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        assert!(g.neighbors(2).unwrap().is_empty());
        assert_eq!(g.degree(2).unwrap(), 0);
        assert!(matches!(g.neighbors(3), Err(Error::InvalidId { .. })));
        assert!(matches!(g.degree(7), Err(Error::InvalidId { .. })));
    }

    #[test]
    fn hub_degree_counts_in_and_out() {
        let mut triples: Vec<_> = (1..=5).map(|t| Triple::new(0, 0, t)).collect();
        triples.extend((6..=8).map(|h| Triple::new(h, 1, 0)));
        let g = KnowledgeGraph::new(9, 2, triples).unwrap();
        assert_eq!(g.degree(0).unwrap(), 8);
    }

    #[test]
    fn neighbors_are_sorted() {
        let g = KnowledgeGraph::new(
            4,
            2,
            vec![Triple::new(0, 1, 3), Triple::new(0, 0, 2), Triple::new(1, 0, 0)],
        )
        .unwrap();
        assert_eq!(g.neighbors(0).unwrap(), &[(0, 2), (1, 3), (2, 1)]);
    }

    #[test]
    fn out_of_range_triple_is_rejected() {
        assert!(KnowledgeGraph::new(2, 1, vec![Triple::new(0, 1, 1)]).is_err());
    }

    #[test]
    fn parse_errors_report_line() {
        let err = parse_triples("1\t2\t3\n4\t5\n", "triples_1").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse_ids("7 name\n", "ent_ids_1").is_err());
        assert!(parse_pairs("1\tx\n", "ref_ent_ids").is_err());
        assert_eq!(parse_ids("3\t\r\n\n", "f").unwrap(), vec![(3, String::new())]);
    }

    #[test]
    fn duplicate_and_dangling_ids() {
        let ents = vec![(5, "a".into()), (5, "b".into())];
        let err = build_graph(ents, vec![(0, "r".into())], &[], ["e", "r", "t"]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { id: 5, .. }));

        let ents = vec![(5, "a".into()), (9, "b".into())];
        let err =
            build_graph(ents, vec![(0, "r".into())], &[(5, 0, 6)], ["e", "r", "t"]).unwrap_err();
        assert!(matches!(err, Error::DanglingId { id: 6, .. }));
    }
}
