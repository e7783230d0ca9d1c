use ndarray::Array1;
use rand::Rng;

/// Inverted dropout: kept units are scaled by 1 / (1 - rate) during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Dropout { rate }
    }

    /// Returns the mask (already scaled). Multiply both activations and
    /// incoming gradients by it.
    pub fn mask<R: Rng>(&self, rng: &mut R, n: usize) -> Array1<f64> {
        if self.rate == 0.0 {
            return Array1::ones(n);
        }
        let keep = 1.0 / (1.0 - self.rate);
        Array1::from_shape_fn(n, |_| if rng.random::<f64>() < self.rate { 0.0 } else { keep })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(Dropout::new(0.0).mask(&mut rng, 10).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mask_values_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Dropout::new(0.2).mask(&mut rng, 20_000);
        assert!(m.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
        assert!((m.mean().unwrap() - 1.0).abs() < 0.03);
    }

    #[test]
    fn seeded_masks_repeat() {
        let a = Dropout::new(0.5).mask(&mut ChaCha8Rng::seed_from_u64(9), 64);
        let b = Dropout::new(0.5).mask(&mut ChaCha8Rng::seed_from_u64(9), 64);
        assert_eq!(a, b);
    }
}
