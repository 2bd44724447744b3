//! Plain dense tensor value type.

use rand_chacha::rand_core::RngCore;

/// Dense row-major f64 tensor with an optional gradient accumulator.
///
/// Parameters carry a gradient buffer; constants and snapshots do not.
/// Invariant: `product(shape) == data.len()`, and the gradient, when
/// present, has the same length as `data`.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    /// Gaussian init, Box-Muller over the given RNG stream.
    pub fn randn<R: RngCore>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        while data.len() < numel {
            let u1 = 1.0 - uniform01(rng); // in (0, 1]
            let u2 = uniform01(rng);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            data.push(std * r * theta.cos());
            if data.len() < numel {
                data.push(std * r * theta.sin());
            }
        }
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Allocates the gradient buffer (zeroed) if absent, then returns it.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Deep copy with the gradient buffer dropped.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn uniform01<R: RngCore>(rng: &mut R) -> f64 {
    // 53 random mantissa bits, uniform in [0, 1).
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    #[should_panic(expected = "does not match data length")]
    fn shape_mismatch_panics() {
        Tensor::new(vec![2, 3], vec![0.0; 5]);
    }

    #[test]
    fn grad_buffer_lifecycle() {
        let mut t = Tensor::zeros(vec![3]);
        assert!(t.grad().is_none());
        t.grad_mut()[1] = 2.0;
        assert_eq!(t.grad().unwrap(), &[0.0, 2.0, 0.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0, 0.0]);
        let d = t.detached();
        assert!(d.grad().is_none());
    }

    #[test]
    fn randn_is_seeded_and_roughly_scaled() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::randn(vec![1000], 0.5, &mut r1);
        let b = Tensor::randn(vec![1000], 0.5, &mut r2);
        assert_eq!(a.data(), b.data());
        let var: f64 = a.data().iter().map(|v| v * v).sum::<f64>() / 1000.0;
        assert!((var.sqrt() - 0.5).abs() < 0.08);
    }
}
