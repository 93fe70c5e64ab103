//! Input/target orderings for the reconstruction experiments.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::losses::ObjectSet;

/// Repetition used whenever any side is shuffled.
pub const SHUFFLED_REPETITION: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowOrder {
    Fixed,
    Random,
}

impl fmt::Display for RowOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowOrder::Fixed => "fixed",
            RowOrder::Random => "random",
        })
    }
}

impl FromStr for RowOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(RowOrder::Fixed),
            "random" => Ok(RowOrder::Random),
            _ => Err(Error::invalid(format!("unknown ordering {s:?}, expected fixed or random"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub input_order: RowOrder,
    pub target_order: RowOrder,
    pub repetition: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Repetition follows the orders: 1 when both are fixed, 5 otherwise.
    pub fn new(input_order: RowOrder, target_order: RowOrder, seed: u64) -> Self {
        let repetition = if input_order == RowOrder::Fixed && target_order == RowOrder::Fixed {
            1
        } else {
            SHUFFLED_REPETITION
        };
        Self { input_order, target_order, repetition, seed }
    }

    /// Numbered scenarios 1 to 4: identity, shuffled inputs, shuffled
    /// targets, both shuffled.
    pub fn numbered(index: u8, seed: u64) -> Result<Self> {
        use RowOrder::*;
        let (i, t) = match index {
            1 => (Fixed, Fixed),
            2 => (Random, Fixed),
            3 => (Fixed, Random),
            4 => (Random, Random),
            _ => return Err(Error::invalid(format!("scenario must be 1..=4, got {index}"))),
        };
        Ok(Self::new(i, t, seed))
    }

    pub fn index(&self) -> u8 {
        match (self.input_order, self.target_order) {
            (RowOrder::Fixed, RowOrder::Fixed) => 1,
            (RowOrder::Random, RowOrder::Fixed) => 2,
            (RowOrder::Fixed, RowOrder::Random) => 3,
            (RowOrder::Random, RowOrder::Random) => 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetition == 0 {
            return Err(Error::invalid("repetition must be at least 1"));
        }
        let both_fixed = self.input_order == RowOrder::Fixed && self.target_order == RowOrder::Fixed;
        if both_fixed && self.repetition != 1 {
            return Err(Error::invalid("repetition must be 1 when nothing is shuffled"));
        }
        Ok(())
    }

    /// Epoch budget after accounting for repetition.
    pub fn scaled_epochs(&self, epochs: usize) -> usize {
        (epochs / self.repetition).max(1)
    }
}

/// Aligned input and target matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pairs {
    pub inputs: Vec<Matrix>,
    pub targets: Vec<Matrix>,
}

impl Pairs {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn shuffled(m: &Matrix, rng: &mut ChaCha8Rng) -> Matrix {
    let mut order: Vec<usize> = (0..m.rows()).collect();
    order.shuffle(rng);
    m.permute_rows(&order)
}

/// Expands `(input, target)` pairs by the repetition count, shuffling rows
/// on the randomized sides with fresh permutations each time.
pub fn arrange_pairs(inputs: &[Matrix], targets: &[Matrix], cfg: &ScenarioConfig) -> Result<Pairs> {
    cfg.validate()?;
    if inputs.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Pairs::default();
    for _ in 0..cfg.repetition {
        for (x, y) in inputs.iter().zip(targets) {
            out.inputs.push(match cfg.input_order {
                RowOrder::Fixed => x.clone(),
                RowOrder::Random => shuffled(x, &mut rng),
            });
            out.targets.push(match cfg.target_order {
                RowOrder::Fixed => y.clone(),
                RowOrder::Random => shuffled(y, &mut rng),
            });
        }
    }
    Ok(out)
}

/// Autoencoding pairs: every set is both input and target.
pub fn make_scenario(dataset: &[ObjectSet], cfg: &ScenarioConfig) -> Result<Pairs> {
    let sets: Vec<Matrix> = dataset.iter().map(|s| s.values().clone()).collect();
    arrange_pairs(&sets, &sets, cfg)
}

/// Splits off the trailing `test_fraction` of the items.
pub fn split_train_test<T: Clone>(items: &[T], test_fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let test = (items.len() as f64 * test_fraction).round() as usize;
    let cut = items.len() - test;
    Ok((items[..cut].to_vec(), items[cut..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::puzzle::sample_states;

    fn sets(n: usize) -> Vec<ObjectSet> {
        sample_states(n, 2, false).unwrap().iter().map(|s| s.encode()).collect()
    }

    fn sorted_rows(m: &Matrix) -> Vec<Vec<u64>> {
        let mut rows: Vec<Vec<u64>> = m.row_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        rows
    }

    #[test]
    fn identity_scenario() {
        let data = sets(20);
        let p = make_scenario(&data, &ScenarioConfig::numbered(1, 0).unwrap()).unwrap();
        assert_eq!(p.len(), 20);
        assert_eq!(p.inputs, p.targets);
        assert_eq!(p.inputs[3], *data[3].values());
    }

    #[test]
    fn shuffled_targets_keep_content() {
        let data = sets(30);
        let p = make_scenario(&data, &ScenarioConfig::numbered(3, 4).unwrap()).unwrap();
        assert_eq!(p.len(), 150);
        let mut differ = 0;
        for (x, y) in p.inputs.iter().zip(&p.targets) {
            assert_eq!(sorted_rows(x), sorted_rows(y));
            differ += usize::from(x != y);
        }
        assert_eq!(differ, 150);
        assert_eq!(p.inputs[0], *data[0].values());
    }

    #[test]
    fn repetition_rules() {
        let data = sets(7);
        for k in 2..=4 {
            let cfg = ScenarioConfig::numbered(k, 1).unwrap();
            assert_eq!(cfg.index(), k);
            assert_eq!(make_scenario(&data, &cfg).unwrap().len(), 35);
            assert_eq!(cfg.scaled_epochs(100), 20);
        }
        let mut bad = ScenarioConfig::numbered(1, 0).unwrap();
        bad.repetition = 5;
        assert!(make_scenario(&data, &bad).is_err());
        bad.repetition = 0;
        assert!(bad.validate().is_err());
        assert!(ScenarioConfig::numbered(5, 0).is_err());
    }

    #[test]
    fn split_is_ninety_ten() {
        let items: Vec<usize> = (0..5000).collect();
        let (train, test) = split_train_test(&items, 0.1).unwrap();
        assert_eq!((train.len(), test.len()), (4500, 500));
        assert_eq!(test[0], 4500);
    }
}
