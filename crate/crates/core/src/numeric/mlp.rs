//! Three-layer fully connected network (input → ReLU hidden → linear output)
//! with hand-written backpropagation over a flat parameter vector.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm_nn, gemm_nt, gemm_tn};
use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    input: usize,
    hidden: usize,
    output: usize,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hidden: Matrix,
    pub output: Matrix,
}

impl Mlp {
    /// He-uniform first layer, Glorot-uniform second layer, zero biases.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::InvalidInput(format!(
                "network widths must be >= 1, got {input}/{hidden}/{output}"
            )));
        }
        let mut params = vec![0.0; Self::param_count(input, hidden, output)];
        let a1 = (6.0 / input as f64).sqrt();
        for p in &mut params[..input * hidden] {
            *p = rng.random_range(-a1..a1);
        }
        let a2 = (6.0 / (hidden + output) as f64).sqrt();
        let w2 = input * hidden + hidden;
        for p in &mut params[w2..w2 + hidden * output] {
            *p = rng.random_range(-a2..a2);
        }
        Ok(Self {
            input,
            hidden,
            output,
            params,
        })
    }

    pub fn param_count(input: usize, hidden: usize, output: usize) -> usize {
        input * hidden + hidden + hidden * output + output
    }

    pub fn from_params(
        input: usize,
        hidden: usize,
        output: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        if params.len() != Self::param_count(input, hidden, output) {
            return Err(Error::Shape(format!(
                "{} parameters for a {input}/{hidden}/{output} network",
                params.len()
            )));
        }
        Ok(Self {
            input,
            hidden,
            output,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.input * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden * self.output;
        (b1, w2, b2)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Forward {
        assert_eq!(x.cols(), self.input, "network input width mismatch");
        let n = x.rows();
        let (b1, w2, b2) = self.offsets();
        let mut h = Matrix::zeros(n, self.hidden);
        gemm_nn(
            x.as_slice(),
            &self.params[..b1],
            h.as_mut_slice(),
            n,
            self.input,
            self.hidden,
        );
        let bias1 = &self.params[b1..w2];
        for r in 0..n {
            for (v, b) in h.row_mut(r).iter_mut().zip(bias1) {
                *v = (*v + b).max(0.0);
            }
        }
        let mut out = Matrix::zeros(n, self.output);
        gemm_nn(
            h.as_slice(),
            &self.params[w2..b2],
            out.as_mut_slice(),
            n,
            self.hidden,
            self.output,
        );
        let bias2 = &self.params[b2..];
        for r in 0..n {
            for (v, b) in out.row_mut(r).iter_mut().zip(bias2) {
                *v += b;
            }
        }
        Forward {
            hidden: h,
            output: out,
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        self.forward_cached(x).output
    }

    /// Gradient of a loss with respect to all parameters, given the
    /// gradient of that loss with respect to the outputs.
    pub fn backward(&self, x: &Matrix, fwd: &Forward, d_out: &Matrix) -> Vec<f64> {
        let n = x.rows();
        assert_eq!(
            d_out.shape(),
            (n, self.output),
            "output gradient shape mismatch"
        );
        let (b1, w2, b2) = self.offsets();
        let mut grads = vec![0.0; self.params.len()];

        gemm_tn(
            fwd.hidden.as_slice(),
            d_out.as_slice(),
            &mut grads[w2..b2],
            n,
            self.hidden,
            self.output,
        );
        for r in 0..n {
            for (g, d) in grads[b2..].iter_mut().zip(d_out.row(r)) {
                *g += d;
            }
        }

        let mut dh = Matrix::zeros(n, self.hidden);
        gemm_nt(
            d_out.as_slice(),
            &self.params[w2..b2],
            dh.as_mut_slice(),
            n,
            self.output,
            self.hidden,
        );
        for r in 0..n {
            let act = fwd.hidden.row(r);
            for (d, &a) in dh.row_mut(r).iter_mut().zip(act) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        gemm_tn(
            x.as_slice(),
            dh.as_slice(),
            &mut grads[..b1],
            n,
            self.input,
            self.hidden,
        );
        for r in 0..n {
            for (g, d) in grads[b1..w2].iter_mut().zip(dh.row(r)) {
                *g += d;
            }
        }
        grads
    }
}

/// Shuffled mini-batches of row indices covering `0..n` once.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}
