//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! The primitive set is deliberately small: same-size convolution, pixel
//! shuffle, elementwise arithmetic with scalar broadcast, reductions,
//! channel slicing/padding, and a hook ([`LocalJacobian`]) for the simplex
//! normalizers. A [`Graph`] is rebuilt for every optimization step.

mod conv;
mod graph;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, LocalJacobian, Var};
pub use params::{Adam, Binder, ParamId, ParamStore};
pub use tensor::{space_to_depth, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central differences of a scalar function of one tensor.
    fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }

    #[test]
    fn conv_all_ones_window() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, Some(b), 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[4.0; 4]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random(&[2, 1, 3, 5], &mut rng);
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let k = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, Some(b), 0, 1).unwrap();
        assert_eq!(g.value(y), &input);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let k = g.constant(Tensor::zeros(&[2, 2, 3, 3]));
        let err = g.conv2d(x, k, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("Cin"), "{err}");
        let k2 = g.constant(Tensor::zeros(&[2, 3, 2, 2]));
        assert!(g.conv2d(x, k2, None, 0, 1).unwrap_err().to_string().contains("kernel size"));
        let k3 = g.constant(Tensor::zeros(&[2, 3, 3, 3]));
        assert!(g.conv2d(x, k3, None, 0, 1).unwrap_err().to_string().contains("padding"));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(g.conv2d(x, k3, Some(b), 1, 1).unwrap_err().to_string().contains("bias"));
    }

    #[test]
    fn conv_kernel_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random(&[1, 2, 4, 4], &mut rng);
        let kernel = random(&[3, 2, 3, 3], &mut rng);
        let f = |k: &Tensor| {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let kv = g.constant(k.clone());
            let y = g.conv2d(x, kv, None, 1, 1).unwrap();
            g.value(y).data().iter().sum::<f64>()
        };
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let kv = g.leaf(kernel.clone());
        let y = g.conv2d(x, kv, None, 1, 1).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        let analytic = grads.get(kv);
        assert!(rel_err(analytic.data(), &numeric_grad(&kernel, &f)) <= 1e-4);
    }

    #[test]
    fn pixel_shuffle_definition_and_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.pixel_shuffle(x, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random(&[2, 3, 2, 3], &mut rng);
        let z = g.constant(t.clone());
        let same = g.pixel_shuffle(z, 1).unwrap();
        assert_eq!(g.value(same), &t);

        let bad = g.constant(Tensor::zeros(&[1, 6, 2, 2]));
        assert!(g.pixel_shuffle(bad, 2).is_err());
    }

    #[test]
    fn space_to_depth_inverts_pixel_shuffle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random(&[1, 8, 3, 3], &mut rng);
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let y = g.pixel_shuffle(x, 2).unwrap();
        assert_eq!(space_to_depth(g.value(y), 2).unwrap(), t);
    }

    #[test]
    fn elementwise_basics() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let zero = g.constant(Tensor::scalar(0.0));
        let s = g.add(x, zero).unwrap();
        assert_eq!(g.value(s), g.value(x));
        let other = g.constant(Tensor::zeros(&[2]));
        assert!(g.add(x, other).is_err());
    }

    #[test]
    fn leaky_relu_gradient_at_zero_is_slope() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![0.0, 1.0, -1.0]));
        let y = g.leaky_relu(x, 0.2);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[0.2, 1.0, 0.2]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random(&[6], &mut rng);
        let mut g = Graph::new();
        let x = g.leaf(t.clone());
        let sq = g.square(x);
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        let num = numeric_grad(&t, &|v: &Tensor| v.data().iter().map(|a| a * a).sum());
        let doubled: Vec<f64> = t.data().iter().map(|v| 2.0 * v).collect();
        assert!(rel_err(grads.get(x).data(), &num) <= 1e-4);
        assert!(rel_err(grads.get(x).data(), &doubled) <= 1e-12);
    }

    #[test]
    fn backward_contracts() {
        // Constant loss: every leaf gets zeros.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let c = g.constant(Tensor::scalar(3.0));
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.get(x).data(), &[0.0, 0.0]);

        // sum(x) gives ones.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[1.0; 3]);
        assert!(grads.is_leaf(x));

        // A second backward without reset is rejected.
        assert!(matches!(g.backward(s), Err(crate::Error::BackwardTwice)));
        g.reset();
        assert!(g.is_empty());

        // Non-scalar loss is rejected.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(crate::Error::NonScalarLoss(_))));
    }

    #[test]
    fn conv_relu_sum_full_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let input = random(&[2, 2, 5, 4], &mut rng);
        let kernel = random(&[3, 2, 3, 3], &mut rng);
        let bias = random(&[3], &mut rng);
        let forward = |x: &Tensor, k: &Tensor, b: &Tensor, g: &mut Graph, learn: bool| {
            let xv = if learn { g.leaf(x.clone()) } else { g.constant(x.clone()) };
            let kv = if learn { g.leaf(k.clone()) } else { g.constant(k.clone()) };
            let bv = if learn { g.leaf(b.clone()) } else { g.constant(b.clone()) };
            let y = g.conv2d(xv, kv, Some(bv), 1, 1).unwrap();
            let r = g.relu(y);
            (xv, kv, bv, g.sum(r))
        };
        let mut g = Graph::new();
        let (xv, kv, bv, loss) = forward(&input, &kernel, &bias, &mut g, true);
        // No pre-activation sits within finite-difference reach of the kink.
        let mut probe = Graph::new();
        let xs = probe.constant(input.clone());
        let ks = probe.constant(kernel.clone());
        let bs = probe.constant(bias.clone());
        let pre = probe.conv2d(xs, ks, Some(bs), 1, 1).unwrap();
        assert!(probe.value(pre).data().iter().all(|v| v.abs() > 1e-4));

        let grads = g.backward(loss).unwrap();
        let eval = |x: &Tensor, k: &Tensor, b: &Tensor| {
            let mut g = Graph::new();
            let (_, _, _, l) = forward(x, k, b, &mut g, false);
            g.value(l).data()[0]
        };
        let nx = numeric_grad(&input, &|x| eval(x, &kernel, &bias));
        let nk = numeric_grad(&kernel, &|k| eval(&input, k, &bias));
        let nb = numeric_grad(&bias, &|b| eval(&input, &kernel, b));
        assert!(rel_err(grads.get(xv).data(), &nx) <= 1e-4);
        assert!(rel_err(grads.get(kv).data(), &nk) <= 1e-4);
        assert!(rel_err(grads.get(bv).data(), &nb) <= 1e-4);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = random(&[2, 4, 6, 6], &mut rng);
        let kernel = random(&[4, 1, 3, 3], &mut rng);
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let k = g.constant(kernel.clone());
            let y = g.conv2d(x, k, None, 1, 4).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run().checksum(), run().checksum());
    }

    #[test]
    fn narrow_and_pad_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random(&[2, 5, 2, 2], &mut rng);
        let mut g = Graph::new();
        let x = g.leaf(t.clone());
        let n = g.narrow(x, 1, 1, 3).unwrap();
        let p = g.pad_axis(n, 1, 6).unwrap();
        assert_eq!(g.value(p).shape(), &[2, 6, 2, 2]);
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        let gx = grads.get(x);
        for b in 0..2 {
            for c in 0..5 {
                let expect = if (1..4).contains(&c) { 1.0 } else { 0.0 };
                assert!(gx.data()[(b * 5 + c) * 4..][..4].iter().all(|&v| v == expect));
            }
        }
    }
}
