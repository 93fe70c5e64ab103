//! Gumbel-Softmax relaxation of categorical sampling.

use rand::Rng;

use super::matrix::Matrix;
use super::tape::{sigmoid, softmax_axis, Axis, NodeId, Tape};
use crate::error::{Error, Result};

/// Standard Gumbel draw `-ln(-ln u)`, `u` uniform on the open interval.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    Ok(())
}

fn check_groups(logits: &Matrix, group: usize) -> Result<()> {
    if group == 0 || logits.cols() % group != 0 {
        return Err(Error::shape(
            "gumbel_softmax",
            format!("{} columns do not split into groups of {group}", logits.cols()),
        ));
    }
    Ok(())
}

/// Samples `softmax((logits + g) / temperature)` independently for every
/// consecutive block of `group` columns in every row.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    logits: &Matrix,
    temperature: f64,
    group: usize,
    rng: &mut R,
) -> Result<Matrix> {
    check_temperature(temperature)?;
    check_groups(logits, group)?;
    let perturbed: Vec<f64> = logits
        .data()
        .iter()
        .map(|l| (l + gumbel_noise(rng)) / temperature)
        .collect();
    let blocks = Matrix::from_vec(logits.len() / group, group, perturbed)?;
    softmax_axis(&blocks, Axis::Row)?.reshape(logits.rows(), logits.cols())
}

/// Differentiable Gumbel-Softmax on the tape.
///
/// With `noisy == false` the Gumbel noise is omitted, which is what
/// evaluation mode uses.
pub fn gumbel_softmax<R: Rng + ?Sized>(
    tape: &mut Tape,
    logits: NodeId,
    temperature: f64,
    group: usize,
    noisy: bool,
    rng: &mut R,
) -> Result<NodeId> {
    check_temperature(temperature)?;
    let (rows, cols) = tape.value(logits).shape();
    check_groups(tape.value(logits), group)?;
    let perturbed = if noisy {
        let noise = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| gumbel_noise(rng)).collect())?;
        let noise = tape.constant(noise);
        tape.add(logits, noise)?
    } else {
        logits
    };
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    let blocks = tape.reshape(scaled, rows * cols / group, group)?;
    let probs = tape.softmax(blocks, Axis::Row)?;
    tape.reshape(probs, rows, cols)
}

/// Two-way Gumbel-Softmax with the second logit pinned at zero, keeping
/// the first output: `sigmoid((l + g1 - g2) / temperature)`.
pub fn binary_concrete<R: Rng + ?Sized>(
    tape: &mut Tape,
    logits: NodeId,
    temperature: f64,
    noisy: bool,
    rng: &mut R,
) -> Result<NodeId> {
    check_temperature(temperature)?;
    let (rows, cols) = tape.value(logits).shape();
    let perturbed = if noisy {
        let noise: Vec<f64> = (0..rows * cols)
            .map(|_| gumbel_noise(rng) - gumbel_noise(rng))
            .collect();
        let noise = tape.constant(Matrix::from_vec(rows, cols, noise)?);
        tape.add(logits, noise)?
    } else {
        logits
    };
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    Ok(tape.sigmoid(scaled))
}

/// Plain-value counterpart of [`binary_concrete`] without noise.
pub fn binary_concrete_mean(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    Ok(logits.map(|l| sigmoid(l / temperature)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn low_temperature_approaches_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = Matrix::row_vector(&[10.0, 0.0]);
        // over many draws the noise gap rarely exceeds 10
        let mut hits = 0;
        for _ in 0..200 {
            let y = gumbel_softmax_sample(&logits, 1e-3, 2, &mut rng).unwrap();
            if (y.get(0, 0) - 1.0).abs() < 1e-9 && y.get(0, 1) < 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 195, "{hits}");
    }

    #[test]
    fn groups_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = Matrix::from_rows(&[[0.3, -2.0, 5.0, 1.0, 1.0, 0.0], [9.0, 8.0, -7.0, 0.0, 0.1, 0.2]])
            .unwrap();
        for &t in &[0.1, 1.0, 7.0] {
            let y = gumbel_softmax_sample(&logits, t, 3, &mut rng).unwrap();
            for r in y.row_iter() {
                for g in r.chunks(3) {
                    assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let logits = Matrix::row_vector(&[0.0, 0.0]);
        let a = gumbel_softmax_sample(&logits, 1.0, 2, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = gumbel_softmax_sample(&logits, 1.0, 2, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_positive_temperature_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = Matrix::row_vector(&[1.0, 0.0]);
        assert!(gumbel_softmax_sample(&logits, 0.0, 2, &mut rng).is_err());
        assert!(gumbel_softmax_sample(&logits, -1.0, 2, &mut rng).is_err());
    }

    #[test]
    fn tape_version_matches_plain_sampler_and_binary_form() {
        let logits = Matrix::from_rows(&[[0.4, -1.2, 2.0, 0.0]]).unwrap();
        let plain = gumbel_softmax_sample(&logits, 0.7, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut tape = Tape::new();
        let l = tape.param(logits.clone());
        let y = gumbel_softmax(&mut tape, l, 0.7, 2, true, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(tape.value(y).max_abs_diff(&plain) < 1e-12);

        // noise-free two-way softmax over [l, 0] equals sigmoid(l / t)
        let pair = Matrix::row_vector(&[0.4, 0.0]);
        let mut tape = Tape::new();
        let p = tape.constant(pair);
        let y = gumbel_softmax(&mut tape, p, 0.7, 2, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let s = binary_concrete_mean(&Matrix::scalar(0.4), 0.7).unwrap();
        assert!((tape.value(y).get(0, 0) - s.item()).abs() < 1e-12);
    }
}
