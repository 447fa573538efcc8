use rand::Rng;

use super::Array;

/// Glorot/Xavier uniform: `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Array {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, -limit, limit)
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], low: f64, high: f64) -> Array {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(low..high)).collect();
    Array::new(shape.to_vec(), data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = glorot_uniform(&mut rng, &[20, 30], 30, 20);
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= limit));
        let b = glorot_uniform(&mut ChaCha8Rng::seed_from_u64(3), &[20, 30], 30, 20);
        assert_eq!(a, b);
    }
}
