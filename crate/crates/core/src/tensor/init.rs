//! Parameter initializers.

use rand::Rng;

use super::Tensor;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))` for a `[rows, cols]` weight,
/// where `cols` is the fan-in.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("glorot shape")
}

pub fn zeros(len: usize) -> Tensor {
    Tensor::zeros(&[len])
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = glorot_uniform(&mut rng, 10, 14);
        let bound = 0.5;
        assert_eq!(t.shape(), &[10, 14]);
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        assert!(t.data().iter().any(|v| v.abs() > bound / 2.0));
    }
}
