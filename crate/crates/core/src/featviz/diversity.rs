//! Batch diversity penalty: one plus the mean pairwise cosine similarity of
//! the flattened per-image activations at the unit's layer. Values lie in
//! `[0, 2]`; a batch of one has no pairs and a penalty of zero.

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; a zero-norm vector gives 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

pub fn diversity_penalty(batch: &[&[f64]]) -> f64 {
    let n = batch.len();
    if n < 2 {
        return 0.0;
    }
    let norms: Vec<f64> = batch.iter().map(|v| norm(v)).collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if norms[i] > 0.0 && norms[j] > 0.0 {
                total += dot(batch[i], batch[j]) / (norms[i] * norms[j]);
            }
        }
    }
    1.0 + total / (n * (n - 1) / 2) as f64
}

/// Gradient of [`diversity_penalty`] with respect to each vector.
pub fn diversity_gradient(batch: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = batch.len();
    let mut grads: Vec<Vec<f64>> = batch.iter().map(|v| vec![0.0; v.len()]).collect();
    if n < 2 {
        return grads;
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let norms: Vec<f64> = batch.iter().map(|v| norm(v)).collect();
    for i in 0..n {
        if norms[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if i == j || norms[j] == 0.0 {
                continue;
            }
            let cos = dot(batch[i], batch[j]) / (norms[i] * norms[j]);
            let a = 1.0 / (norms[i] * norms[j] * pairs);
            let b = cos / (norms[i] * norms[i] * pairs);
            for ((g, u), v) in grads[i].iter_mut().zip(batch[i]).zip(batch[j]) {
                *g += a * v - b * u;
            }
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_maps_give_two() {
        let v = [1.0, -2.0, 0.5];
        assert!((diversity_penalty(&[&v, &v]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_maps_give_one() {
        assert_eq!(diversity_penalty(&[&[1.0, 0.0], &[0.0, 3.0]]), 1.0);
    }

    #[test]
    fn single_image_has_no_penalty() {
        assert_eq!(diversity_penalty(&[&[1.0, 2.0]]), 0.0);
    }

    #[test]
    fn zero_vector_pairs_count_as_zero_similarity() {
        let z = [0.0, 0.0];
        let v = [1.0, 1.0];
        assert_eq!(diversity_penalty(&[&z, &v]), 1.0);
        assert!(diversity_gradient(&[&z, &v]).iter().flatten().all(|g| *g == 0.0));
    }

    #[test]
    fn matches_double_loop_on_random_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let maps: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = maps.iter().map(|m| m.as_slice()).collect();
        // Independent oracle: ordered double loop over all i != j.
        let mut acc = 0.0;
        let mut count = 0;
        for i in 0..9 {
            for j in 0..9 {
                if i != j {
                    let d: f64 = maps[i].iter().zip(&maps[j]).map(|(a, b)| a * b).sum();
                    let ni: f64 = maps[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                    let nj: f64 = maps[j].iter().map(|a| a * a).sum::<f64>().sqrt();
                    acc += d / (ni * nj);
                    count += 1;
                }
            }
        }
        let expected = 1.0 + acc / count as f64;
        assert!((diversity_penalty(&refs) - expected).abs() <= 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut maps: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let grads = {
            let refs: Vec<&[f64]> = maps.iter().map(|m| m.as_slice()).collect();
            diversity_gradient(&refs)
        };
        let h = 1e-6;
        for i in 0..4 {
            for k in 0..6 {
                let orig = maps[i][k];
                maps[i][k] = orig + h;
                let up = diversity_penalty(&maps.iter().map(|m| m.as_slice()).collect::<Vec<_>>());
                maps[i][k] = orig - h;
                let down =
                    diversity_penalty(&maps.iter().map(|m| m.as_slice()).collect::<Vec<_>>());
                maps[i][k] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grads[i][k]).abs() < 1e-8, "{fd} vs {}", grads[i][k]);
            }
        }
    }
}
