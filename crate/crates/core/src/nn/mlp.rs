use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::activation::tanh_in_place;
use super::tape::{Tape, Var};
use super::tensor::{affine_bt, Tensor};
use crate::error::{Error, Result};

/// Affine layer, `y = x W^T + b` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
        Linear {
            weight: Tensor {
                shape: vec![n_out, n_in],
                data: (0..n_in * n_out).map(|_| dist.sample(rng)).collect(),
            },
            bias: Tensor::zeros(&[n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward_into(&self, x: &[f64], rows: usize, out: &mut [f64]) {
        affine_bt(rows, self.n_in(), self.n_out(), x, &self.weight.data, &self.bias.data, out);
    }
}

/// Multilayer perceptron with `tanh` between layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("mlp widths {widths:?} need at least two positive entries")));
        }
        Ok(Mlp {
            layers: widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
        })
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map(Linear::n_out).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter tensors in a fixed order: weight then bias, per layer.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    /// Records the forward pass. Parameters are registered with ids starting at `first_id`.
    pub fn trace(&self, tape: &mut Tape, x: Var, first_id: usize) -> Result<Var> {
        if tape.value(x).cols() != self.n_in() {
            return Err(Error::ShapeMismatch {
                expected: vec![tape.value(x).rows(), self.n_in()],
                actual: tape.value(x).shape.clone(),
            });
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(first_id + 2 * i, &layer.weight);
            let b = tape.param(first_id + 2 * i + 1, &layer.bias);
            h = tape.linear(h, w, b)?;
            if i + 1 < self.layers.len() {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Untraced batched forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.n_in() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.rows(), self.n_in()],
                actual: x.shape.clone(),
            });
        }
        let rows = x.rows();
        let mut h = x.data.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; rows * layer.n_out()];
            layer.forward_into(&h, rows, &mut out);
            if i + 1 < self.layers.len() {
                tanh_in_place(&mut out);
            }
            h = out;
        }
        Ok(Tensor {
            shape: vec![rows, self.n_out()],
            data: h,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn traced_matches_untraced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[3, 5, 2], &mut rng).unwrap();
        let x = Tensor::from_rows(&[[0.1, -0.2, 0.3], [1.0, 0.5, -0.5]]);
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = mlp.trace(&mut tape, xv, 0).unwrap();
        assert_eq!(tape.value(y), &mlp.forward(&x).unwrap());
        assert_eq!(mlp.n_params(), 3 * 5 + 5 + 5 * 2 + 2);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        let x = Tensor::from_rows(&[[0.1, -0.2, 0.3], [0.7, 0.4, -0.9]]);
        let loss = |m: &Mlp| -> f64 { m.forward(&x).unwrap().data.iter().map(|v| v * v).sum() };
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = mlp.trace(&mut tape, xv, 0).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let s = tape.sum(sq);
        let grads = tape.backward(s, Tensor::scalar(1.0)).unwrap();
        let h = 1e-6;
        for id in 0..4 {
            let g = grads.param(id).unwrap();
            for k in 0..g.len() {
                let mut plus = mlp.clone();
                plus.params_mut()[id].data[k] += h;
                let mut minus = mlp.clone();
                minus.params_mut()[id].data[k] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - g.data[k]).abs() < 1e-6 * (1.0 + fd.abs()), "param {id}[{k}]: {fd} vs {}", g.data[k]);
            }
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        assert!(matches!(mlp.forward(&Tensor::zeros(&[2, 4])), Err(Error::ShapeMismatch { .. })));
        assert!(Mlp::new(&[3], &mut rng).is_err());
    }
}
