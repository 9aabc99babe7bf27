use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// Center of class `k` (zero-based): unit vector along axis `k mod P`, scaled
/// by `1 + floor(k / P)`. With `K <= P` the centers are orthonormal.
pub fn class_center(dim: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    c[k % dim] = 1.0 + (k / dim) as f64;
    c
}

/// Isotropic Gaussian blobs, `n_per_class` samples around each class
/// center with standard deviation `spread`. Samples are ordered by class.
pub fn synth_clusters(
    dim: usize,
    num_classes: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if dim == 0 || num_classes < 2 || n_per_class == 0 {
        return Err(Error::config(
            "synthetic data needs dim >= 1, classes >= 2, n_per_class >= 1",
        ));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::config(format!(
            "spread must be positive, got {spread}"
        )));
    }
    let mut rng = seed::stream(seed, seed::tags::SYNTH, &[]);
    let mut features = Vec::with_capacity(dim * num_classes * n_per_class);
    let mut labels = Vec::with_capacity(num_classes * n_per_class);
    for k in 0..num_classes {
        let center = class_center(dim, k);
        for _ in 0..n_per_class {
            for c in &center {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(c + spread * z);
            }
            labels.push(k as u32 + 1);
        }
    }
    Dataset::new(features, labels, dim, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = synth_clusters(3, 4, 10, 0.5, 42).unwrap();
        assert_eq!(a, synth_clusters(3, 4, 10, 0.5, 42).unwrap());
        assert_ne!(a, synth_clusters(3, 4, 10, 0.5, 43).unwrap());
        assert_eq!(a.class_counts(), vec![10; 4]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(synth_clusters(0, 2, 1, 1.0, 0).is_err());
        assert!(synth_clusters(2, 1, 1, 1.0, 0).is_err());
        assert!(synth_clusters(2, 2, 0, 1.0, 0).is_err());
        assert!(synth_clusters(2, 2, 1, 0.0, 0).is_err());
    }

    #[test]
    fn centers_wrap_around_axes() {
        assert_eq!(class_center(2, 0), vec![1.0, 0.0]);
        assert_eq!(class_center(2, 3), vec![0.0, 2.0]);
    }
}
