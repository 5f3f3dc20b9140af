use super::Op;
use crate::error::{mismatch, Result};
use crate::tape::{accumulate, Node, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.1,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// Normalized with the statistics of the batch itself.
    Batch,
    /// Normalized with fixed statistics (eval mode, or a train batch too
    /// small to have a variance); the input gradient is a plain scaling.
    Fixed,
}

pub(crate) struct BatchNorm {
    x: Var,
    gamma: Var,
    beta: Var,
    kind: Kind,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    rows: usize,
    features: usize,
}

impl Tape {
    /// Batch normalization over the rows of `x: [N, C]`.
    ///
    /// In train mode with `N >= 2` the batch mean and biased variance are
    /// used and the running statistics are updated (with the unbiased
    /// variance). A train batch with fewer than two rows skips
    /// normalization and applies only the affine part. Eval mode uses the
    /// running statistics.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, state: &mut BatchNormState, mode: NormMode, eps: f64) -> Result<Var> {
        let (xs, gs, bs) = (self.shape(x), self.shape(gamma), self.shape(beta));
        let &[rows, features] = xs else {
            return Err(mismatch("batchnorm", "input [N, C]", xs));
        };
        if gs != [features] || bs != [features] {
            return Err(mismatch("batchnorm", format!("gamma and beta [{features}]"), gs));
        }
        if state.running_mean.len() != features || state.running_var.len() != features {
            return Err(mismatch("batchnorm", format!("running stats [{features}]"), &[state.running_mean.len()]));
        }
        let xv = self.data(x);
        let (kind, mean, inv_std) = match mode {
            NormMode::Train if rows >= 2 => {
                let n = rows as f64;
                let mut mean = vec![0.0; features];
                for row in xv.chunks(features) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; features];
                for row in xv.chunks(features) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n);
                let mom = state.momentum;
                for c in 0..features {
                    state.running_mean[c] = (1.0 - mom) * state.running_mean[c] + mom * mean[c];
                    state.running_var[c] = (1.0 - mom) * state.running_var[c] + mom * var[c] * n / (n - 1.0);
                }
                let inv = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                (Kind::Batch, mean, inv)
            }
            NormMode::Train => (Kind::Fixed, vec![0.0; features], vec![1.0; features]),
            NormMode::Eval => {
                let inv = state.running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                (Kind::Fixed, state.running_mean.clone(), inv)
            }
        };
        let (gv, bv) = (self.data(gamma), self.data(beta));
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(features) {
            for c in 0..features {
                let h = (row[c] - mean[c]) * inv_std[c];
                xhat.push(h);
                out.push(gv[c] * h + bv[c]);
            }
        }
        let t = Tensor::from_vec(vec![rows, features], out)?;
        let op = Op::BatchNorm(Box::new(BatchNorm {
            x,
            gamma,
            beta,
            kind,
            xhat,
            inv_std,
            rows,
            features,
        }));
        Ok(self.record(t, op, &[x, gamma, beta]))
    }
}

impl BatchNorm {
    pub(crate) fn backward(&self, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        let f = self.features;
        let mut sum_g = vec![0.0; f];
        let mut sum_gx = vec![0.0; f];
        for (gr, hr) in g.chunks(f).zip(self.xhat.chunks(f)) {
            for c in 0..f {
                sum_g[c] += gr[c];
                sum_gx[c] += gr[c] * hr[c];
            }
        }
        accumulate(nodes, grads, self.beta, |gb| {
            for (a, b) in gb.iter_mut().zip(&sum_g) {
                *a += b;
            }
        });
        accumulate(nodes, grads, self.gamma, |gg| {
            for (a, b) in gg.iter_mut().zip(&sum_gx) {
                *a += b;
            }
        });
        let gamma = nodes[self.gamma.0].value.data();
        let n = self.rows as f64;
        accumulate(nodes, grads, self.x, |gx| {
            for ((dst, gr), hr) in gx.chunks_mut(f).zip(g.chunks(f)).zip(self.xhat.chunks(f)) {
                for c in 0..f {
                    let scale = gamma[c] * self.inv_std[c];
                    dst[c] += match self.kind {
                        Kind::Fixed => scale * gr[c],
                        Kind::Batch => scale * (gr[c] - sum_g[c] / n - hr[c] * sum_gx[c] / n),
                    };
                }
            }
        });
    }
}
