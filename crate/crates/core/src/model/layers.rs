//! Dense layers with explicit backward passes.

use crate::error::{Error, Result};
use crate::numkernel::{Matrix, SeedRng};
use crate::scalar::Scalar;

/// Affine map `y = W x + b` applied to every row of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// out × in
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    /// He-style initialization, N(0, 2/in) weights and zero bias.
    pub fn random(input: usize, output: usize, rng: &mut SeedRng) -> Self {
        let scale = (T::lit(2.0) / T::from_count(input.max(1))).sqrt();
        Self {
            weight: Matrix::random_normal(output, input, scale, rng),
            bias: vec![T::zero(); output],
        }
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::Length {
                what: "linear layer input width",
                expected: self.input_dim(),
                actual: x.cols(),
            });
        }
        let mut y = x.matmul_t(&self.weight)?;
        for i in 0..y.rows() {
            for (v, &b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Returns the input gradient and the parameter gradients for upstream `dy`.
    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>) -> Result<(Matrix<T>, Linear<T>)> {
        let dx = dy.matmul(&self.weight)?;
        let dw = dy.t_matmul(x)?;
        let mut db = vec![T::zero(); self.output_dim()];
        for row in dy.row_iter() {
            for (b, &g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        Ok((dx, Linear { weight: dw, bias: db }))
    }
}

/// Two-layer perceptron `W₂·relu(W₁x + b₁) + b₂`.
///
/// The rectifier's derivative at exactly zero is taken to be 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    input: Matrix<T>,
    pre_activation: Matrix<T>,
    activation: Matrix<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn random(input: usize, hidden: usize, output: usize, rng: &mut SeedRng) -> Self {
        Self {
            hidden: Linear::random(input, hidden, rng),
            output: Linear::random(hidden, output, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Linear::zeros(input, hidden),
            output: Linear::zeros(hidden, output),
        }
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, MlpCache<T>)> {
        let pre = self.hidden.forward(x)?;
        let mut act = pre.clone();
        act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(T::zero()));
        let out = self.output.forward(&act)?;
        Ok((
            out,
            MlpCache {
                input: x.clone(),
                pre_activation: pre,
                activation: act,
            },
        ))
    }

    pub fn backward(&self, cache: &MlpCache<T>, dy: &Matrix<T>) -> Result<(Matrix<T>, Mlp<T>)> {
        let (mut d_act, d_out) = self.output.backward(&cache.activation, dy)?;
        for (g, &p) in d_act.as_mut_slice().iter_mut().zip(cache.pre_activation.as_slice()) {
            if p <= T::zero() {
                *g = T::zero();
            }
        }
        let (dx, d_hidden) = self.hidden.backward(&cache.input, &d_act)?;
        Ok((
            dx,
            Mlp {
                hidden: d_hidden,
                output: d_out,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{check_gradient, seeded_rng};
    use crate::scalar::dot;

    #[test]
    fn mlp_backward_matches_fd() {
        let mut rng = seeded_rng(31);
        let mlp = Mlp::<f64>::random(3, 5, 2, &mut rng);
        let x = Matrix::random_normal(4, 3, 1.0, &mut rng);
        let g = Matrix::random_normal(4, 2, 1.0, &mut rng);
        let (_, cache) = mlp.forward(&x).unwrap();
        let (dx, _) = mlp.backward(&cache, &g).unwrap();
        let f = |xs: &[f64]| {
            let (y, _) = mlp.forward(&Matrix::new(4, 3, xs.to_vec()).unwrap()).unwrap();
            dot(y.as_slice(), g.as_slice())
        };
        let r = check_gradient(f, x.as_slice(), dx.as_slice(), 1e-5).unwrap();
        assert!(r.passes(1e-6), "{r}");
    }

    #[test]
    fn linear_rejects_width_mismatch() {
        let l = Linear::<f64>::zeros(3, 2);
        assert!(l.forward(&Matrix::zeros(1, 4)).is_err());
    }
}
