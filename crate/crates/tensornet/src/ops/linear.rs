use super::Op;
use crate::error::{mismatch, Result};
use crate::gemm::{gemm, Layout};
use crate::tape::{accumulate, Node, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct Linear {
    x: Var,
    weight: Var,
    bias: Var,
    rows: usize,
    d_in: usize,
    d_out: usize,
}

impl Tape {
    /// `y = x · W + b` for `x: [N, D]`, `W: [D, O]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        let &[rows, d_in] = xs else {
            return Err(mismatch("linear", "input [N, D]", xs));
        };
        let &[wd, d_out] = ws else {
            return Err(mismatch("linear", "weight [D, O]", ws));
        };
        if wd != d_in {
            return Err(mismatch("linear", format!("weight [{d_in}, O]"), ws));
        }
        if bs != [d_out] {
            return Err(mismatch("linear", format!("bias [{d_out}]"), bs));
        }
        let mut out = Vec::with_capacity(rows * d_out);
        for _ in 0..rows {
            out.extend_from_slice(self.data(bias));
        }
        gemm(rows, d_in, d_out, self.data(x), Layout::Normal, self.data(weight), Layout::Normal, 1.0, &mut out);
        let t = Tensor::from_vec(vec![rows, d_out], out)?;
        let op = Op::Linear(Linear {
            x,
            weight,
            bias,
            rows,
            d_in,
            d_out,
        });
        Ok(self.record(t, op, &[x, weight, bias]))
    }
}

impl Linear {
    pub(crate) fn backward(&self, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        let (n, d, o) = (self.rows, self.d_in, self.d_out);
        accumulate(nodes, grads, self.bias, |gb| {
            for row in g.chunks(o) {
                for (a, b) in gb.iter_mut().zip(row) {
                    *a += b;
                }
            }
        });
        let x = nodes[self.x.0].value.data();
        accumulate(nodes, grads, self.weight, |gw| {
            gemm(d, n, o, x, Layout::Transposed, g, Layout::Normal, 1.0, gw);
        });
        let w = nodes[self.weight.0].value.data();
        accumulate(nodes, grads, self.x, |gx| {
            gemm(n, o, d, g, Layout::Normal, w, Layout::Transposed, 1.0, gx);
        });
    }
}
