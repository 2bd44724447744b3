//! Dense 64-bit tensor arithmetic with reverse-mode differentiation and an
//! AdamW optimizer.
//!
//! One training thread owns a [`Tape`] and an [`OptimizerState`]; tensors
//! recorded on the tape are immutable afterwards. Values and gradients are
//! plain `f64` throughout.

pub mod adamw;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use adamw::{adamw_step, OptimizerState};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite difference of a scalar function of a flat vector.
    fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
        let h = 1e-6 * x[i].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    /// Checks the tape gradient of `build` (a scalar-rooted graph over one
    /// leaf) against central finite differences at every coordinate.
    fn check_grad(build: &dyn Fn(&mut Tape, Var) -> Var, x0: &[f64], shape: &[usize], tol: f64) {
        let t0 = Tensor::new(shape.to_vec(), x0.to_vec());
        let mut tape = Tape::new();
        let leaf = tape.leaf(&t0);
        let root = build(&mut tape, leaf);
        tape.backward(root);
        let analytic = tape.grad(leaf).to_vec();

        let eval = |x: &[f64]| {
            let t = Tensor::new(shape.to_vec(), x.to_vec());
            let mut tape = Tape::new();
            let leaf = tape.leaf(&t);
            let root = build(&mut tape, leaf);
            tape.scalar_value(root)
        };
        for i in 0..x0.len() {
            let numeric = central_diff(&eval, x0, i);
            assert!(
                rel_err(analytic[i], numeric) <= tol,
                "grad mismatch at {}: analytic {} vs numeric {}",
                i,
                analytic[i],
                numeric
            );
        }
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(vec![n], 1.0, &mut rng).data().to_vec()
    }

    #[test]
    fn exp_identity_and_softmax_symmetry_and_clip() {
        let mut tape = Tape::new();
        let z = tape.constant(vec![1], vec![0.0]);
        let e = tape.exp(z);
        assert_eq!(tape.value(e), &[1.0]);

        let two = tape.constant(vec![2], vec![0.0, 0.0]);
        let sm = tape.softmax(two);
        assert_eq!(tape.value(sm), &[0.5, 0.5]);

        let c = tape.constant(vec![1], vec![1.5]);
        let clipped = tape.clip(c, 0.8, 1.2);
        assert_eq!(tape.value(clipped), &[1.2]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let t = Tensor::new(vec![4], vec![0.3, -1.0, 2.0, 5.5]);
        let mut tape = Tape::new();
        let leaf = tape.leaf(&t);
        let root = tape.sum(leaf);
        tape.backward(root);
        assert_eq!(tape.grad(leaf), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_grad_at_zero_is_quarter() {
        // sigma'(0) = sigma(0) * (1 - sigma(0)) = 0.25
        let t = Tensor::new(vec![1], vec![0.0]);
        let mut tape = Tape::new();
        let leaf = tape.leaf(&t);
        let s = tape.sigmoid(leaf);
        let root = tape.sum(s);
        tape.backward(root);
        assert!((tape.grad(leaf)[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_twice_doubles_grads() {
        let t = Tensor::new(vec![3], vec![0.4, 1.1, -0.7]);
        let mut tape = Tape::new();
        let leaf = tape.leaf(&t);
        let s = tape.sigmoid(leaf);
        let root = tape.mean(s);
        tape.backward(root);
        let once = tape.grad(leaf).to_vec();
        tape.backward(root);
        let twice = tape.grad(leaf).to_vec();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    #[should_panic(expected = "backward root must be scalar")]
    fn backward_from_non_scalar_panics() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let leaf = tape.leaf(&t);
        tape.backward(leaf);
    }

    #[test]
    fn softmax_rows_sum_to_one_tightly() {
        let x = rand_vec(40, 3);
        let t = Tensor::new(vec![4, 10], x);
        let mut tape = Tape::new();
        let leaf = tape.leaf(&t);
        let sm = tape.softmax(leaf);
        for row in tape.value(sm).chunks_exact(10) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_op_grads_match_finite_differences() {
        let x = rand_vec(6, 11);
        check_grad(
            &|t, v| {
                let e = t.exp(v);
                let s = t.sigmoid(e);
                t.mean(s)
            },
            &x,
            &[6],
            1e-6,
        );
        let pos: Vec<f64> = x.iter().map(|v| v.abs() + 0.5).collect();
        check_grad(
            &|t, v| {
                let l = t.log(v);
                t.sum(l)
            },
            &pos,
            &[6],
            1e-6,
        );
    }

    #[test]
    fn matmul_and_bias_grads_match_finite_differences() {
        let x = rand_vec(6, 21);
        check_grad(
            &|t, v| {
                let w = t.constant(vec![3, 2], vec![0.3, -0.8, 1.2, 0.1, -0.4, 0.9]);
                let y = t.matmul(v, w);
                let b = t.constant(vec![2], vec![0.25, -0.5]);
                let y = t.add_bias(y, b);
                let s = t.sigmoid(y);
                t.mean(s)
            },
            &x,
            &[2, 3],
            1e-6,
        );
        // gradient w.r.t. the right-hand operand
        let w = rand_vec(6, 22);
        check_grad(
            &|t, v| {
                let a = t.constant(vec![2, 3], vec![0.3, -0.8, 1.2, 0.1, -0.4, 0.9]);
                let y = t.matmul(a, v);
                t.mean(y)
            },
            &w,
            &[3, 2],
            1e-6,
        );
    }

    #[test]
    fn softmax_log_softmax_grads_match_finite_differences() {
        let x = rand_vec(8, 31);
        check_grad(
            &|t, v| {
                let sm = t.softmax(v);
                let picked = t.gather_pairs(sm, &[(0, 1), (1, 3)]);
                let l = t.log(picked);
                t.mean(l)
            },
            &x,
            &[2, 4],
            1e-6,
        );
        check_grad(
            &|t, v| {
                let lsm = t.log_softmax(v);
                let picked = t.gather_pairs(lsm, &[(0, 0), (1, 2)]);
                t.sum(picked)
            },
            &x,
            &[2, 4],
            1e-6,
        );
    }

    #[test]
    fn gather_prefix_shift_grads_match_finite_differences() {
        let x = rand_vec(12, 41);
        check_grad(
            &|t, v| {
                let rows = t.gather_rows(v, &[2, 0, 2]);
                let s = t.sigmoid(rows);
                t.mean(s)
            },
            &x,
            &[4, 3],
            1e-6,
        );
        check_grad(
            &|t, v| {
                let pm = t.prefix_mean(v);
                let sh = t.shift_down(v);
                let y = t.add(pm, sh);
                let s = t.sigmoid(y);
                t.mean(s)
            },
            &x,
            &[4, 3],
            1e-6,
        );
    }

    #[test]
    fn clip_and_min_grads_match_away_from_kinks() {
        // Inputs chosen away from the clip boundaries and min ties.
        let x = vec![0.2, 1.9, -0.6, 0.95];
        check_grad(
            &|t, v| {
                let c = t.clip(v, 0.5, 1.5);
                let s = t.sum(c);
                t.scalar_mul(s, 0.7)
            },
            &x,
            &[4],
            1e-4,
        );
        let y = vec![0.4, -1.2, 2.0, 0.1];
        check_grad(
            &|t, v| {
                let other = t.constant(vec![4], vec![1.0, -0.5, 0.3, 0.6]);
                let m = t.min(v, other);
                t.sum(m)
            },
            &y,
            &[4],
            1e-4,
        );
    }

    #[test]
    fn composed_graph_grad_matches_finite_differences() {
        let x = rand_vec(9, 51);
        check_grad(
            &|t, v| {
                let pm = t.prefix_mean(v);
                let w = t.constant(vec![3, 3], rand_vec(9, 52));
                let h = t.matmul(pm, w);
                let a = t.sigmoid(h);
                let lsm = t.log_softmax(a);
                let picked = t.gather_pairs(lsm, &[(0, 2), (1, 0), (2, 1)]);
                let m = t.mean(picked);
                let e = t.exp(m);
                t.scalar_add(e, -0.5)
            },
            &x,
            &[3, 3],
            1e-6,
        );
    }

    #[test]
    fn min_tie_sends_gradient_to_first_argument() {
        let a = Tensor::new(vec![1], vec![0.7]);
        let b = Tensor::new(vec![1], vec![0.7]);
        let mut tape = Tape::new();
        let va = tape.leaf(&a);
        let vb = tape.leaf(&b);
        let m = tape.min(va, vb);
        let root = tape.sum(m);
        tape.backward(root);
        assert_eq!(tape.grad(va), &[1.0]);
        assert_eq!(tape.grad(vb), &[0.0]);
    }
}
