//! Variable-size sets: element dropping and dummy padding.
//!
//! Padded sets gain one trailing flag column. Real rows carry flag 0.
//! Dummy `k` carries flag 1 and the binary counter `k` over the original
//! `F` feature columns, most significant bit first. Written flag first,
//! the dummies for `F = 5` read `100000`, `100001`, `100010`, ...

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::losses::ObjectSet;

/// Features of dummy number `k` for sets with `features` original columns.
pub fn dummy_row(k: usize, features: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..features)
        .map(|bit| ((k >> (features - 1 - bit)) & 1) as f64)
        .collect();
    row.push(1.0);
    row
}

/// Pads a `k x F` set to `n x (F + 1)`.
pub fn pad_with_dummies(set: &ObjectSet, n: usize) -> Result<ObjectSet> {
    let (k, f) = set.values().shape();
    if k > n {
        return Err(Error::invalid(format!("set has {k} elements, more than the target {n}")));
    }
    let needed = n - k;
    let fits = f >= usize::BITS as usize || needed <= 1usize << f;
    if !fits {
        return Err(Error::DummySpaceExhausted { needed, features: f });
    }
    let mut rows: Vec<Vec<f64>> = set
        .values()
        .row_iter()
        .map(|r| {
            let mut v = r.to_vec();
            v.push(0.0);
            v
        })
        .collect();
    rows.extend((0..needed).map(|d| dummy_row(d, f)));
    let m = if rows.is_empty() {
        Matrix::zeros(0, f + 1)
    } else {
        Matrix::from_rows(&rows)?
    };
    ObjectSet::new(m)
}

/// Removes flagged rows and the flag column; flags are read with threshold 0.5.
pub fn strip_dummies(set: &ObjectSet) -> Result<ObjectSet> {
    let f = set.n_features();
    if f == 0 {
        return Err(Error::invalid("padded sets need a flag column"));
    }
    let rows: Vec<Vec<f64>> = set
        .values()
        .row_iter()
        .filter(|r| r[f - 1] < 0.5)
        .map(|r| r[..f - 1].to_vec())
        .collect();
    let m = if rows.is_empty() {
        Matrix::zeros(0, f - 1)
    } else {
        Matrix::from_rows(&rows)?
    };
    ObjectSet::new(m)
}

/// Row rendered as bits, flag column first.
pub fn flag_first_bits(row: &[f64]) -> String {
    let bit = |v: &f64| if *v >= 0.5 { '1' } else { '0' };
    let (flag, rest) = row.split_last().expect("non-empty row");
    std::iter::once(bit(flag)).chain(rest.iter().map(bit)).collect()
}

/// Number of elements dropped for each set, by geometric buckets.
///
/// Half the sets keep every element, a quarter drop one, an eighth drop
/// two, a sixteenth drop three and the residual mass drops four.
pub fn drop_plan(count: usize, seed: u64) -> Vec<usize> {
    let share = |d: usize| ((count as f64) / (1usize << (d + 1)) as f64).round() as usize;
    let mut plan = Vec::with_capacity(count);
    for d in 0..4 {
        let take = share(d).min(count - plan.len());
        plan.extend(std::iter::repeat(d).take(take));
    }
    plan.resize(count, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    plan.shuffle(&mut rng);
    plan
}

/// Drops uniformly chosen elements from each set following [`drop_plan`].
/// Surviving rows keep their relative order.
pub fn drop_elements(sets: &[ObjectSet], seed: u64) -> Result<Vec<ObjectSet>> {
    let plan = drop_plan(sets.len(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    sets.iter()
        .zip(plan)
        .map(|(set, drop)| {
            let n = set.n_elements();
            let keep = n.saturating_sub(drop);
            let mut kept = index::sample(&mut rng, n, keep).into_vec();
            kept.sort_unstable();
            ObjectSet::new(set.values().select_rows(&kept))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::puzzle::sample_states;

    #[test]
    fn dummy_bit_patterns_follow_the_counter() {
        let set = ObjectSet::new(Matrix::zeros(0, 5)).unwrap();
        let padded = pad_with_dummies(&set, 4).unwrap();
        let bits: Vec<String> = padded.values().row_iter().map(flag_first_bits).collect();
        assert_eq!(bits, ["100000", "100001", "100010", "100011"]);

        let set = ObjectSet::new(Matrix::zeros(0, 2)).unwrap();
        let padded = pad_with_dummies(&set, 3).unwrap();
        let bits: Vec<String> = padded.values().row_iter().map(flag_first_bits).collect();
        assert_eq!(bits, ["100", "101", "110"]);
    }

    #[test]
    fn full_set_only_gains_a_zero_flag() {
        let set = ObjectSet::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let padded = pad_with_dummies(&set, 2).unwrap();
        assert_eq!(padded.values().data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(strip_dummies(&padded).unwrap(), set);
    }

    #[test]
    fn padding_errors() {
        let set = ObjectSet::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(pad_with_dummies(&set, 1).is_err());
        let one = ObjectSet::from_rows(&[[1.0, 0.0]]).unwrap();
        // 2 feature bits give 4 distinct dummies
        assert!(pad_with_dummies(&one, 5).is_ok());
        assert!(matches!(
            pad_with_dummies(&one, 6),
            Err(Error::DummySpaceExhausted { needed: 5, features: 2 })
        ));
    }

    #[test]
    fn drop_plan_proportions() {
        let plan = drop_plan(5000, 3);
        let count = |d| plan.iter().filter(|&&p| p == d).count();
        assert_eq!(count(0), 2500);
        assert_eq!(count(1), 1250);
        assert_eq!(count(2), 625);
        assert_eq!(count(3), 313);
        assert_eq!(count(4), 312);
    }

    #[test]
    fn dropped_then_padded_sets_are_distinct_9x16() {
        let sets: Vec<ObjectSet> = sample_states(400, 5, false).unwrap().iter().map(|s| s.encode()).collect();
        let dropped = drop_elements(&sets, 11).unwrap();
        assert_eq!(dropped, drop_elements(&sets, 11).unwrap());
        for (orig, d) in sets.iter().zip(&dropped) {
            assert!((5..=9).contains(&d.n_elements()));
            assert!(d.is_duplicate_free());
            for r in d.values().row_iter() {
                assert!(orig.values().row_iter().any(|o| o == r));
            }
            let p = pad_with_dummies(d, 9).unwrap();
            assert_eq!(p.values().shape(), (9, 16));
            assert!(p.is_duplicate_free());
            assert_eq!(&strip_dummies(&p).unwrap(), d);
        }
    }
}
