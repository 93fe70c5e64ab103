//! 8-puzzle states and their object-set encoding.
//!
//! A state is encoded as 9 rows, one per tile in tile-id order. Each row
//! holds a 9-way one-hot tile id followed by one-hot x and y coordinates.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::losses::ObjectSet;

pub const TILES: usize = 9;
pub const SIDE: usize = 3;
pub const PUZZLE_FEATURES: usize = TILES + 2 * SIDE;
/// `9!`.
pub const STATE_COUNT: usize = 362_880;

/// Tile at each board position, positions in row-major order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PuzzleState([u8; TILES]);

impl PuzzleState {
    pub fn new(tiles: [u8; TILES]) -> Result<Self> {
        let mut seen = [false; TILES];
        for &t in &tiles {
            let t = t as usize;
            if t >= TILES || seen[t] {
                return Err(Error::invalid(format!("{tiles:?} is not a permutation of 0..9")));
            }
            seen[t] = true;
        }
        Ok(Self(tiles))
    }

    pub fn solved() -> Self {
        Self([0, 1, 2, 3, 4, 5, 6, 7, 8])
    }

    pub fn tiles(&self) -> &[u8; TILES] {
        &self.0
    }

    pub fn position_of(&self, tile: u8) -> usize {
        self.0.iter().position(|&t| t == tile).expect("valid state holds every tile")
    }

    /// State with lexicographic rank `rank` among all permutations.
    pub fn from_rank(rank: usize) -> Result<Self> {
        if rank >= STATE_COUNT {
            return Err(Error::invalid(format!("rank {rank} >= {STATE_COUNT}")));
        }
        let mut pool: Vec<u8> = (0..TILES as u8).collect();
        let mut rest = rank;
        let mut tiles = [0u8; TILES];
        for (i, slot) in tiles.iter_mut().enumerate() {
            let f = factorial(TILES - 1 - i);
            *slot = pool.remove(rest / f);
            rest %= f;
        }
        Ok(Self(tiles))
    }

    pub fn rank(&self) -> usize {
        let mut rank = 0;
        for i in 0..TILES {
            let smaller_after = self.0[i + 1..].iter().filter(|&&t| t < self.0[i]).count();
            rank += smaller_after * factorial(TILES - 1 - i);
        }
        rank
    }

    /// Reachable from the solved state (blank = tile 0) by sliding moves.
    pub fn is_solvable(&self) -> bool {
        let tiles: Vec<u8> = self.0.iter().copied().filter(|&t| t != 0).collect();
        let inversions = (0..tiles.len())
            .flat_map(|i| (i + 1..tiles.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| tiles[i] > tiles[j])
            .count();
        inversions % 2 == 0
    }

    pub fn encode(&self) -> ObjectSet {
        encode_puzzle_state(self)
    }
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// `9 x 15` binary encoding; row `t` describes tile `t`.
pub fn encode_puzzle_state(state: &PuzzleState) -> ObjectSet {
    let mut m = Matrix::zeros(TILES, PUZZLE_FEATURES);
    for (pos, &tile) in state.tiles().iter().enumerate() {
        let row = m.row_mut(tile as usize);
        row[tile as usize] = 1.0;
        row[TILES + pos % SIDE] = 1.0;
        row[TILES + SIDE + pos / SIDE] = 1.0;
    }
    ObjectSet::new(m).expect("binary encoding")
}

/// Inverse of [`encode_puzzle_state`] for exact binary encodings.
pub fn decode_puzzle_state(set: &ObjectSet) -> Result<PuzzleState> {
    let m = set.values();
    if m.shape() != (TILES, PUZZLE_FEATURES) {
        return Err(Error::shape("decode_puzzle_state", format!("{:?}", m.shape())));
    }
    let mut tiles = [u8::MAX; TILES];
    for row in m.row_iter() {
        let one_hot = |s: &[f64]| {
            let hot: Vec<usize> = s.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
            (hot.len() == 1).then(|| hot[0])
        };
        let bad = || Error::invalid("row is not a valid tile encoding");
        let tile = one_hot(&row[..TILES]).ok_or_else(bad)?;
        let x = one_hot(&row[TILES..TILES + SIDE]).ok_or_else(bad)?;
        let y = one_hot(&row[TILES + SIDE..]).ok_or_else(bad)?;
        tiles[y * SIDE + x] = tile as u8;
    }
    PuzzleState::new(tiles)
}

/// Every state, in rank order.
pub fn all_states() -> impl Iterator<Item = PuzzleState> {
    (0..STATE_COUNT).map(|r| PuzzleState::from_rank(r).expect("rank in range"))
}

/// Distinct states drawn uniformly without replacement.
pub fn sample_states(count: usize, seed: u64, solvable_only: bool) -> Result<Vec<PuzzleState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if solvable_only {
        let pool: Vec<PuzzleState> = all_states().filter(PuzzleState::is_solvable).collect();
        if count > pool.len() {
            return Err(Error::invalid(format!("{count} states requested, {} solvable", pool.len())));
        }
        return Ok(index::sample(&mut rng, pool.len(), count).iter().map(|i| pool[i]).collect());
    }
    if count > STATE_COUNT {
        return Err(Error::invalid(format!("{count} states requested, only {STATE_COUNT} exist")));
    }
    index::sample(&mut rng, STATE_COUNT, count)
        .iter()
        .map(PuzzleState::from_rank)
        .collect()
}
