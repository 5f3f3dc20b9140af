use super::Op;
use crate::error::{mismatch, Result};
use crate::tape::{accumulate, Node, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct Bce {
    p: Var,
    y: Var,
    eps: f64,
}

pub(crate) struct MaskedMse {
    pred: Var,
    target: Var,
    mask: Vec<bool>,
    components: usize,
    count: usize,
}

impl Tape {
    /// Mean binary cross-entropy between probabilities `p` and labels `y`
    /// of the same shape. `p` is clamped to `[eps, 1 − eps]`; the clamped
    /// region passes no gradient to `p`. An empty input gives zero.
    pub fn bce_loss(&mut self, p: Var, y: Var, eps: f64) -> Result<Var> {
        let (ps, ys) = (self.shape(p), self.shape(y));
        if ps != ys {
            return Err(mismatch("bce_loss", format!("labels {ps:?}"), ys));
        }
        let (pv, yv) = (self.data(p), self.data(y));
        let n = pv.len();
        let total: f64 = pv
            .iter()
            .zip(yv)
            .map(|(&pi, &yi)| {
                let q = pi.clamp(eps, 1.0 - eps);
                -(yi * q.ln() + (1.0 - yi) * (1.0 - q).ln())
            })
            .sum();
        let loss = if n == 0 { 0.0 } else { total / n as f64 };
        Ok(self.record(Tensor::scalar(loss), Op::Bce(Bce { p, y, eps }), &[p, y]))
    }

    /// Masked squared error: `pred` and `target` are `[..., K]`, `mask` has
    /// one entry per group of `K` components. Squared errors are summed over
    /// the components of each masked cell and averaged over masked cells;
    /// an empty mask gives zero.
    pub fn masked_mse(&mut self, pred: Var, target: Var, mask: &[bool]) -> Result<Var> {
        let (ps, ts) = (self.shape(pred), self.shape(target));
        if ps != ts {
            return Err(mismatch("masked_mse", format!("target {ps:?}"), ts));
        }
        let len = self.value(pred).len();
        if mask.is_empty() || len % mask.len() != 0 {
            return Err(mismatch("masked_mse", format!("mask dividing {len} elements"), &[mask.len()]));
        }
        let k = len / mask.len();
        let (pv, tv) = (self.data(pred), self.data(target));
        let count = mask.iter().filter(|&&m| m).count();
        let mut total = 0.0;
        for (cell, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for c in cell * k..(cell + 1) * k {
                let d = pv[c] - tv[c];
                total += d * d;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let op = Op::MaskedMse(MaskedMse {
            pred,
            target,
            mask: mask.to_vec(),
            components: k,
            count,
        });
        Ok(self.record(Tensor::scalar(loss), op, &[pred, target]))
    }
}

impl Bce {
    pub(crate) fn backward(&self, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        let (pv, yv) = (nodes[self.p.0].value.data(), nodes[self.y.0].value.data());
        let n = pv.len() as f64;
        let eps = self.eps;
        accumulate(nodes, grads, self.p, |gp| {
            for ((a, &pi), &yi) in gp.iter_mut().zip(pv).zip(yv) {
                if pi > eps && pi < 1.0 - eps {
                    *a += g[0] * (-yi / pi + (1.0 - yi) / (1.0 - pi)) / n;
                }
            }
        });
        accumulate(nodes, grads, self.y, |gy| {
            for (a, &pi) in gy.iter_mut().zip(pv) {
                let q = pi.clamp(eps, 1.0 - eps);
                *a += g[0] * ((1.0 - q).ln() - q.ln()) / n;
            }
        });
    }
}

impl MaskedMse {
    pub(crate) fn backward(&self, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        if self.count == 0 {
            return;
        }
        let (pv, tv) = (nodes[self.pred.0].value.data(), nodes[self.target.0].value.data());
        let k = self.components;
        let scale = 2.0 * g[0] / self.count as f64;
        let diff = |c: usize| pv[c] - tv[c];
        accumulate(nodes, grads, self.pred, |gp| {
            for (cell, _) in self.mask.iter().enumerate().filter(|(_, &m)| m) {
                for c in cell * k..(cell + 1) * k {
                    gp[c] += scale * diff(c);
                }
            }
        });
        accumulate(nodes, grads, self.target, |gt| {
            for (cell, _) in self.mask.iter().enumerate().filter(|(_, &m)| m) {
                for c in cell * k..(cell + 1) * k {
                    gt[c] -= scale * diff(c);
                }
            }
        });
    }
}
