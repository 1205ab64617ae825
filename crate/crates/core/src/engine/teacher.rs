use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::bicubic_upsample;
use crate::error::{Error, Result};
use crate::ndgraph::{Graph, Tensor};

/// Fixed upsampler the student is distilled from: bicubic interpolation
/// followed by a frozen 3x3 conv close to the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    pub scale: usize,
    /// `[3, 3, 3, 3]`.
    pub kernel: Tensor,
}

/// Spread of the off-centre taps around the identity kernel.
const NOISE: f64 = 0.02;

impl TeacherModel {
    pub fn new(seed: u64, scale: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x7eac);
        let mut data = vec![0.0; 81];
        for (i, v) in data.iter_mut().enumerate() {
            let (co, ci, tap) = (i / 27, (i / 9) % 3, i % 9);
            let identity = if co == ci && tap == 4 { 1.0 } else { 0.0 };
            *v = identity + rng.gen_range(-NOISE..NOISE);
        }
        TeacherModel {
            scale,
            kernel: Tensor::new(&[3, 3, 3, 3], data).expect("static shape"),
        }
    }

    /// Teacher output for `[3, h, w]` or `[N, 3, h, w]`, clamped to `[0, 1]`.
    pub fn apply(&self, lr: &Tensor) -> Result<Tensor> {
        let single = lr.rank() == 3;
        let batched = if single {
            let s = lr.shape();
            lr.clone().reshape(&[1, s[0], s[1], s[2]])?
        } else {
            lr.clone()
        };
        if batched.rank() != 4 || batched.dim(1) != 3 {
            return Err(Error::shape("teacher", "input", format!("{:?}", lr.shape())));
        }
        let up = bicubic_upsample(&batched, self.scale)?;
        let mut g = Graph::new();
        let x = g.constant(up);
        let k = g.constant(self.kernel.clone());
        let y = g.conv2d(x, k, None, 1, 1)?;
        let out = g.value(y).map(|v| v.clamp(0.0, 1.0));
        if single {
            let s = out.shape().to_vec();
            out.reshape(&s[1..])
        } else {
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_identity_dominant() {
        let a = TeacherModel::new(4, 2);
        assert_eq!(a, TeacherModel::new(4, 2));
        assert_ne!(a, TeacherModel::new(5, 2));
        for c in 0..3 {
            assert!(a.kernel.data()[c * 27 + c * 9 + 4] > 0.9);
        }
    }

    #[test]
    fn output_shape_and_range() {
        let t = TeacherModel::new(1, 2);
        let lr = Tensor::full(&[3, 4, 5], 0.5);
        let out = t.apply(&lr).unwrap();
        assert_eq!(out.shape(), &[3, 8, 10]);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let batch = Tensor::full(&[2, 3, 4, 5], 0.5);
        assert_eq!(t.apply(&batch).unwrap().shape(), &[2, 3, 8, 10]);
        assert_eq!(t.apply(&batch).unwrap().data()[..240], out.data()[..]);
    }
}
