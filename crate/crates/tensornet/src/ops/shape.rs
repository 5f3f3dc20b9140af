use super::Op;
use crate::error::{mismatch, Result, TensorError};
use crate::tape::{accumulate, Node, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct ChannelsLast {
    x: Var,
    c: usize,
    hw: usize,
}

pub(crate) struct GatherRows {
    x: Var,
    cols: usize,
    rows: Vec<usize>,
}

pub(crate) struct ConcatCols {
    a: Var,
    b: Var,
    ca: usize,
    cb: usize,
}

impl Tape {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.record(out, Op::Reshape(x), &[x]))
    }

    /// `[C, H, W]` → `[H, W, C]`.
    pub fn channels_last(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let &[c, h, w] = t.shape() else {
            return Err(mismatch("channels_last", "[C, H, W]", t.shape()));
        };
        let hw = h * w;
        let src = t.data();
        let mut data = vec![0.0; src.len()];
        for ch in 0..c {
            for p in 0..hw {
                data[p * c + ch] = src[ch * hw + p];
            }
        }
        let out = Tensor::from_vec(vec![h, w, c], data)?;
        Ok(self.record(out, Op::ChannelsLast(ChannelsLast { x, c, hw }), &[x]))
    }

    /// Selects rows of a `[N, D]` tensor; rows may repeat.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let &[n, d] = t.shape() else {
            return Err(mismatch("gather_rows", "[N, D]", t.shape()));
        };
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    extent: n,
                });
            }
            data.extend_from_slice(&t.data()[r * d..(r + 1) * d]);
        }
        let out = Tensor::from_vec(vec![rows.len(), d], data)?;
        let op = Op::GatherRows(GatherRows {
            x,
            cols: d,
            rows: rows.to_vec(),
        });
        Ok(self.record(out, op, &[x]))
    }

    /// `[N, P]` ‖ `[N, Q]` → `[N, P + Q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (&[na, ca], &[nb, cb]) = (ta.shape(), tb.shape()) else {
            return Err(mismatch("concat_cols", "two [N, D] tensors", tb.shape()));
        };
        if na != nb {
            return Err(mismatch("concat_cols", format!("[{na}, _]"), tb.shape()));
        }
        let mut data = Vec::with_capacity(na * (ca + cb));
        for r in 0..na {
            data.extend_from_slice(&ta.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&tb.data()[r * cb..(r + 1) * cb]);
        }
        let out = Tensor::from_vec(vec![na, ca + cb], data)?;
        Ok(self.record(out, Op::ConcatCols(ConcatCols { a, b, ca, cb }), &[a, b]))
    }

    /// Averages the two halves of a flat tensor of even length:
    /// `out[p] = (x[p] + x[P + p]) / 2`.
    pub fn half_mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.len() % 2 != 0 {
            return Err(mismatch("half_mean", "even number of elements", t.shape()));
        }
        let p = t.len() / 2;
        let (lo, hi) = t.data().split_at(p);
        let data = lo.iter().zip(hi).map(|(a, b)| (a + b) / 2.0).collect();
        let out = Tensor::from_vec(vec![p], data)?;
        Ok(self.record(out, Op::HalfMean(x), &[x]))
    }
}

pub(crate) fn reshape_backward(x: Var, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    accumulate(nodes, grads, x, |gx| {
        for (a, b) in gx.iter_mut().zip(g) {
            *a += b;
        }
    });
}

pub(crate) fn half_mean_backward(x: Var, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    accumulate(nodes, grads, x, |gx| {
        let p = g.len();
        for (k, &v) in g.iter().enumerate() {
            gx[k] += v / 2.0;
            gx[p + k] += v / 2.0;
        }
    });
}

impl ChannelsLast {
    pub(crate) fn backward(&self, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        let (c, hw) = (self.c, self.hw);
        accumulate(nodes, grads, self.x, |gx| {
            for ch in 0..c {
                for p in 0..hw {
                    gx[ch * hw + p] += g[p * c + ch];
                }
            }
        });
    }
}

impl GatherRows {
    pub(crate) fn backward(&self, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        let d = self.cols;
        accumulate(nodes, grads, self.x, |gx| {
            for (k, &r) in self.rows.iter().enumerate() {
                for (a, b) in gx[r * d..(r + 1) * d].iter_mut().zip(&g[k * d..(k + 1) * d]) {
                    *a += b;
                }
            }
        });
    }
}

impl ConcatCols {
    pub(crate) fn backward(&self, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        let (ca, cb) = (self.ca, self.cb);
        let w = ca + cb;
        let rows = if w == 0 { 0 } else { g.len() / w };
        accumulate(nodes, grads, self.a, |ga| {
            for r in 0..rows {
                for (a, b) in ga[r * ca..(r + 1) * ca].iter_mut().zip(&g[r * w..r * w + ca]) {
                    *a += b;
                }
            }
        });
        accumulate(nodes, grads, self.b, |gb| {
            for r in 0..rows {
                for (a, b) in gb[r * cb..(r + 1) * cb].iter_mut().zip(&g[r * w + ca..(r + 1) * w]) {
                    *a += b;
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channels_last_permutes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 1, 3], |i| i as f64));
        let y = tape.channels_last(x).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 2]);
        assert_eq!(tape.data(y), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn gather_rows_rejects_bad_index() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(tape.gather_rows(x, &[0, 2]).is_err());
        let y = tape.gather_rows(x, &[1, 1, 0]).unwrap();
        assert_eq!(tape.shape(y), &[3, 3]);
    }

    #[test]
    fn half_mean_folds_halves() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![4], vec![1.0, 2.0, 3.0, 6.0]).unwrap());
        let y = tape.half_mean(x).unwrap();
        assert_eq!(tape.data(y), &[2.0, 4.0]);
    }
}
