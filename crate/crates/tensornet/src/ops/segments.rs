use super::Op;
use crate::error::{mismatch, Result, TensorError};
use crate::tape::{accumulate, Node, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct MaxSegments {
    x: Var,
    /// Source element index for every output element.
    argmax: Vec<usize>,
}

impl Tape {
    /// Column-wise maximum over contiguous row segments of `x: [E, D]`.
    /// Segment `s` spans rows `offsets[s]..offsets[s + 1]`; the output is
    /// `[S, D]`. Gradient flows to the first maximal row of each column.
    pub fn max_reduce_segments(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let &[e, d] = t.shape() else {
            return Err(mismatch("max_reduce_segments", "[E, D]", t.shape()));
        };
        if offsets.first() != Some(&0) || offsets.last() != Some(&e) || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(TensorError::InvalidArgument(format!(
                "segment offsets must rise monotonically from 0 to {e}"
            )));
        }
        let s = offsets.len() - 1;
        let src = t.data();
        let mut out = Vec::with_capacity(s * d);
        let mut argmax = Vec::with_capacity(s * d);
        for seg in 0..s {
            let (lo, hi) = (offsets[seg], offsets[seg + 1]);
            if lo == hi {
                return Err(TensorError::EmptySegment(seg));
            }
            for c in 0..d {
                let mut best = lo * d + c;
                for r in lo + 1..hi {
                    if src[r * d + c] > src[best] {
                        best = r * d + c;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
        let t = Tensor::from_vec(vec![s, d], out)?;
        Ok(self.record(t, Op::MaxSegments(MaxSegments { x, argmax }), &[x]))
    }
}

impl MaxSegments {
    pub(crate) fn backward(&self, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        accumulate(nodes, grads, self.x, |gx| {
            for (&src, &v) in self.argmax.iter().zip(g) {
                gx[src] += v;
            }
        });
    }
}
