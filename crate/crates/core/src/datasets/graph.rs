//! Undirected entity graphs and their edge-list text format.
//!
//! One edge per line as two whitespace-separated names. Blank lines and
//! lines starting with `#` are skipped.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Entity count of the built-in synthetic map.
pub const SYNTHETIC_ENTITIES: usize = 163;
/// Seed of the built-in synthetic map.
pub const SYNTHETIC_SEED: u64 = 163;
/// Expected neighbor count per region in the synthetic map, before
/// boundary effects.
const SYNTHETIC_MEAN_DEGREE: f64 = 3.8;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    names: Vec<String>,
    ids: HashMap<String, usize>,
    adjacency: Vec<BTreeSet<usize>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Id of `name`, registering it if new.
    pub fn add_entity(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        self.adjacency.push(BTreeSet::new());
        id
    }

    /// Adds the undirected edge `a - b`. Repeated edges are no-ops.
    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<()> {
        let n = self.names.len();
        if a >= n || b >= n {
            return Err(Error::invalid(format!("edge ({a}, {b}) references an unknown entity")));
        }
        if a == b {
            return Err(Error::invalid(format!("self-loop on {}", self.names[a])));
        }
        self.adjacency[a].insert(b);
        self.adjacency[b].insert(a);
        Ok(())
    }

    pub fn entity_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency.get(a).is_some_and(|s| s.contains(&b))
    }

    /// Neighbors in ascending id order.
    pub fn neighbors(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[id].iter().copied()
    }

    pub fn degree(&self, id: usize) -> usize {
        self.adjacency[id].len()
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut g = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let [a, b] = tokens[..] else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected two entity names, found {}", tokens.len()),
                });
            };
            if a == b {
                return Err(Error::Parse { line: line_no, message: format!("self-loop on {a}") });
            }
            let (a, b) = (g.add_entity(a), g.add_entity(b));
            g.add_edge(a, b)?;
        }
        Ok(g)
    }

    /// Each undirected edge once, lower id first, isolated entities omitted.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for a in 0..self.entity_count() {
            for b in self.neighbors(a).filter(|&b| b > a) {
                writeln!(out, "{} {}", self.names[a], self.names[b]).expect("string write");
            }
        }
        out
    }

    /// Random geometric graph: `entities` points uniform in the unit
    /// square, linked when closer than a radius chosen for a mean degree
    /// of about 3.8. Isolated points are linked to their nearest neighbor.
    /// Names are `r000`, `r001`, ...
    pub fn synthetic(entities: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<(f64, f64)> = (0..entities).map(|_| (rng.gen(), rng.gen())).collect();
        let radius = (SYNTHETIC_MEAN_DEGREE / (std::f64::consts::PI * entities.max(1) as f64)).sqrt();
        let mut g = Self::new();
        for i in 0..entities {
            g.add_entity(&format!("r{i:03}"));
        }
        for i in 0..entities {
            for j in i + 1..entities {
                let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
                if dx * dx + dy * dy < radius * radius {
                    g.add_edge(i, j).expect("distinct ids");
                }
            }
        }
        // isolated points join their nearest neighbor so every region
        // survives an edge-list round trip
        let dist = |i: usize, j: usize| (points[i].0 - points[j].0).hypot(points[i].1 - points[j].1);
        for i in 0..entities {
            if g.degree(i) == 0 {
                if let Some(j) = (0..entities).filter(|&j| j != i).min_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b))) {
                    g.add_edge(i, j).expect("distinct ids");
                }
            }
        }
        g
    }

    /// The bundled 163-region map.
    pub fn synthetic_default() -> Self {
        Self::synthetic(SYNTHETIC_ENTITIES, SYNTHETIC_SEED)
    }
}

pub fn load_edge_list(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    KnowledgeGraph::parse_edge_list(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line() {
        let g = KnowledgeGraph::parse_edge_list("austria germany\n").unwrap();
        assert_eq!(g.entity_count(), 2);
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
        assert_eq!(g.id("germany"), Some(1));
    }

    #[test]
    fn duplicates_comments_and_blanks() {
        let text = "# map\n\na b\nb a\na b\n  \nb c\n";
        let g = KnowledgeGraph::parse_edge_list(text).unwrap();
        assert_eq!((g.entity_count(), g.edge_count()), (3, 2));
        assert_eq!(KnowledgeGraph::parse_edge_list(&g.to_edge_list()).unwrap(), g);
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let err = KnowledgeGraph::parse_edge_list("a b\n\nc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = KnowledgeGraph::parse_edge_list("a b c\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = KnowledgeGraph::parse_edge_list("a b\nx x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn synthetic_map_is_deterministic_and_symmetric() {
        let g = KnowledgeGraph::synthetic_default();
        assert_eq!(g.entity_count(), 163);
        assert_eq!(g, KnowledgeGraph::synthetic_default());
        for a in 0..g.entity_count() {
            for b in g.neighbors(a) {
                assert!(g.has_edge(b, a));
            }
        }
        assert_ne!(g, KnowledgeGraph::synthetic(163, 1));
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.edges");
        std::fs::write(&path, KnowledgeGraph::synthetic_default().to_edge_list()).unwrap();
        let g = load_edge_list(&path).unwrap();
        assert_eq!(g.entity_count(), 163);
        assert!(load_edge_list(dir.path().join("missing")).is_err());
    }
}
