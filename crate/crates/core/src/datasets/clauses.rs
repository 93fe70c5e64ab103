//! n-hop neighbor clauses over a [`KnowledgeGraph`].
//!
//! The head `neighborN(e0, ..., en)` is encoded as a 2-way predicate
//! one-hot followed by `n + 1` entity one-hots. Each body term
//! `neighborOf(a, b)` is a 2-way predicate one-hot followed by one-hots
//! for `a` and `b`.

use std::collections::HashSet;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

use super::graph::KnowledgeGraph;

pub const PREDICATES: usize = 2;
/// Predicate category of body terms.
pub const NEIGHBOR_OF: usize = 0;
/// Predicate category of clause heads.
pub const NEIGHBOR_N: usize = 1;

/// Head vector width for `n` hops over `entities` entities.
pub fn head_width(n: usize, entities: usize) -> usize {
    PREDICATES + entities * (n + 1)
}

/// Body term width over `entities` entities.
pub fn term_width(entities: usize) -> usize {
    PREDICATES + 2 * entities
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term {
    pub predicate: usize,
    pub from: usize,
    pub to: usize,
}

impl Term {
    pub fn encode(&self, entities: usize) -> Vec<f64> {
        let mut v = vec![0.0; term_width(entities)];
        v[self.predicate] = 1.0;
        v[PREDICATES + self.from] = 1.0;
        v[PREDICATES + entities + self.to] = 1.0;
        v
    }

    /// Argmax decoding of each block.
    pub fn decode(row: &[f64], entities: usize) -> Result<Self> {
        if row.len() != term_width(entities) {
            return Err(Error::shape("Term::decode", format!("{} values for {entities} entities", row.len())));
        }
        Ok(Self {
            predicate: argmax(&row[..PREDICATES]),
            from: argmax(&row[PREDICATES..PREDICATES + entities]),
            to: argmax(&row[PREDICATES + entities..]),
        })
    }
}

/// Lowest index of the largest value.
fn argmax(block: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in block.iter().enumerate() {
        if v > block[best] {
            best = i;
        }
    }
    best
}

/// Row order of the encoded body.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BodyOrder {
    /// Along the walk: `(e0, e1), (e1, e2), ...`.
    Chain,
    /// Terms sorted by `(from, to)` entity id.
    Canonical,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClauseExample {
    /// The walk `e0, ..., en`.
    pub entities: Vec<usize>,
}

impl ClauseExample {
    pub fn from_walk(walk: &[usize]) -> Result<Self> {
        if walk.len() < 2 {
            return Err(Error::invalid("a clause needs at least one hop"));
        }
        Ok(Self { entities: walk.to_vec() })
    }

    pub fn hops(&self) -> usize {
        self.entities.len() - 1
    }

    /// Body terms in walk order.
    pub fn body(&self) -> Vec<Term> {
        self.entities
            .windows(2)
            .map(|w| Term { predicate: NEIGHBOR_OF, from: w[0], to: w[1] })
            .collect()
    }

    pub fn head_vector(&self, entities: usize) -> Vec<f64> {
        let mut v = vec![0.0; head_width(self.hops(), entities)];
        v[NEIGHBOR_N] = 1.0;
        for (slot, &e) in self.entities.iter().enumerate() {
            v[PREDICATES + slot * entities + e] = 1.0;
        }
        v
    }

    pub fn head_matrix(&self, entities: usize) -> Matrix {
        Matrix::row_vector(&self.head_vector(entities))
    }

    /// `n x (2 + 2E)` body encoding.
    pub fn body_matrix(&self, entities: usize, order: BodyOrder) -> Matrix {
        let mut terms = self.body();
        if order == BodyOrder::Canonical {
            terms.sort();
        }
        let rows: Vec<Vec<f64>> = terms.iter().map(|t| t.encode(entities)).collect();
        Matrix::from_rows(&rows).expect("equal widths")
    }

    /// Argmax decoding of a head vector with `n` hops.
    pub fn decode_head(v: &[f64], n: usize, entities: usize) -> Result<Self> {
        if v.len() != head_width(n, entities) {
            return Err(Error::shape("decode_head", format!("{} values for n = {n}", v.len())));
        }
        let walk: Vec<usize> = v[PREDICATES..].chunks(entities).map(argmax).collect();
        Self::from_walk(&walk)
    }

    /// Argmax decoding of each body row.
    pub fn decode_body(m: &Matrix, entities: usize) -> Result<Vec<Term>> {
        m.row_iter().map(|r| Term::decode(r, entities)).collect()
    }
}

/// All simple walks with `n` hops, by start entity then neighbor id.
pub fn enumerate_clauses(g: &KnowledgeGraph, n: usize) -> Result<Vec<ClauseExample>> {
    if g.is_empty() {
        return Err(Error::invalid("graph has no entities"));
    }
    if n < 2 {
        return Err(Error::invalid(format!("hop count must be at least 2, got {n}")));
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut walk = Vec::with_capacity(n + 1);
    for start in 0..g.entity_count() {
        walk.push(start);
        extend(g, n, &mut walk, &mut |w| {
            if seen.insert(w.to_vec()) {
                out.push(ClauseExample { entities: w.to_vec() });
            }
        });
        walk.pop();
    }
    Ok(out)
}

fn extend(g: &KnowledgeGraph, n: usize, walk: &mut Vec<usize>, emit: &mut impl FnMut(&[usize])) {
    if walk.len() == n + 1 {
        emit(walk);
        return;
    }
    let last = *walk.last().expect("walk starts non-empty");
    for next in g.neighbors(last) {
        if !walk.contains(&next) {
            walk.push(next);
            extend(g, n, walk, emit);
            walk.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn countries() -> KnowledgeGraph {
        KnowledgeGraph::parse_edge_list("austria germany\ngermany belgium\nbelgium france\nfrance germany\n").unwrap()
    }

    #[test]
    fn two_hop_body_chains() {
        let g = countries();
        let (a, ge, b) = (g.id("austria").unwrap(), g.id("germany").unwrap(), g.id("belgium").unwrap());
        let clauses = enumerate_clauses(&g, 2).unwrap();
        let c = clauses.iter().find(|c| c.entities == [a, ge, b]).expect("walk exists");
        assert_eq!(
            c.body(),
            [
                Term { predicate: NEIGHBOR_OF, from: a, to: ge },
                Term { predicate: NEIGHBOR_OF, from: ge, to: b },
            ]
        );
    }

    #[test]
    fn path_graph_walks_both_ways() {
        let g = KnowledgeGraph::parse_edge_list("a b\nb c\n").unwrap();
        let walks: Vec<Vec<usize>> = enumerate_clauses(&g, 2).unwrap().into_iter().map(|c| c.entities).collect();
        assert_eq!(walks, [vec![0, 1, 2], vec![2, 1, 0]]);
    }

    #[test]
    fn encodings_have_the_expected_layout() {
        let e = 163;
        let c = ClauseExample::from_walk(&[5, 7, 9]).unwrap();
        let head = c.head_vector(e);
        assert_eq!(head.len(), 2 + 163 * 3);
        assert_eq!(head.iter().sum::<f64>(), 4.0);
        assert_eq!(head[NEIGHBOR_N], 1.0);
        let body = c.body_matrix(e, BodyOrder::Chain);
        assert_eq!(body.shape(), (2, 328));
        for r in body.row_iter() {
            assert_eq!(r[NEIGHBOR_OF], 1.0);
            assert_eq!(r.iter().sum::<f64>(), 3.0);
        }
    }

    #[test]
    fn canonical_order_sorts_terms() {
        let c = ClauseExample::from_walk(&[9, 4, 1]).unwrap();
        let chain = ClauseExample::decode_body(&c.body_matrix(10, BodyOrder::Chain), 10).unwrap();
        let canon = ClauseExample::decode_body(&c.body_matrix(10, BodyOrder::Canonical), 10).unwrap();
        assert_eq!((chain[0].from, canon[0].from), (9, 4));
    }

    #[test]
    fn round_trips_on_the_synthetic_map() {
        let g = KnowledgeGraph::synthetic_default();
        let e = g.entity_count();
        for c in enumerate_clauses(&g, 3).unwrap().iter().step_by(97) {
            assert_eq!(&ClauseExample::decode_head(&c.head_vector(e), 3, e).unwrap(), c);
            assert_eq!(ClauseExample::decode_body(&c.body_matrix(e, BodyOrder::Chain), e).unwrap(), c.body());
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(enumerate_clauses(&KnowledgeGraph::new(), 2).is_err());
        assert!(enumerate_clauses(&countries(), 1).is_err());
    }
}
