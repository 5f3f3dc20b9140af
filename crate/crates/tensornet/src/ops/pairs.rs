//! Operations over (i, j) row pairs of a node-feature matrix.

use super::Op;
use crate::error::{mismatch, Result, TensorError};
use crate::gemm::{gemm, Layout};
use crate::tape::{accumulate, Node, Tape, Var};
use crate::tensor::Tensor;

/// How the two rows of a pair are combined before the affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairInput {
    /// `[x_i ‖ x_j]`
    Concat,
    /// `[x_i ‖ x_j − x_i]`, the EdgeConv input.
    Difference,
}

pub(crate) struct PairAffine {
    x: Var,
    weight: Var,
    bias: Var,
    pairs: Vec<(usize, usize)>,
    mode: PairInput,
    n: usize,
    d: usize,
    o: usize,
}

pub(crate) struct Bilinear {
    x: Var,
    weight: Var,
    pairs: Vec<(usize, usize)>,
    /// `x · W`, reused by the backward pass.
    xw: Vec<f64>,
    n: usize,
    d: usize,
}

fn check_pairs(op: &'static str, pairs: &[(usize, usize)], n: usize) -> Result<()> {
    for &(i, j) in pairs {
        let bad = i.max(j);
        if bad >= n {
            return Err(TensorError::IndexOutOfRange { op, index: bad, extent: n });
        }
    }
    Ok(())
}

impl Tape {
    /// For each pair `(i, j)` computes `Θᵀ z_ij + b`, where `z_ij` is built
    /// from rows `i` and `j` of `x: [N, D]` according to `mode`, with
    /// `Θ: [2D, O]` and `b: [O]`. Output is `[P, O]`.
    ///
    /// The product is split as `Θ_topᵀ x_i + Θ_botᵀ (·)` so the matrix work
    /// is done once per node rather than once per pair.
    pub fn pair_affine(&mut self, x: Var, weight: Var, bias: Var, pairs: &[(usize, usize)], mode: PairInput) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        let &[n, d] = xs else {
            return Err(mismatch("pair_affine", "input [N, D]", xs));
        };
        let &[wd, o] = ws else {
            return Err(mismatch("pair_affine", "weight [2D, O]", ws));
        };
        if wd != 2 * d {
            return Err(mismatch("pair_affine", format!("weight [{}, O]", 2 * d), ws));
        }
        if bs != [o] {
            return Err(mismatch("pair_affine", format!("bias [{o}]"), bs));
        }
        check_pairs("pair_affine", pairs, n)?;
        let (top, bot) = self.data(weight).split_at(d * o);
        let mut a = vec![0.0; n * o];
        let mut b = vec![0.0; n * o];
        gemm(n, d, o, self.data(x), Layout::Normal, top, Layout::Normal, 0.0, &mut a);
        gemm(n, d, o, self.data(x), Layout::Normal, bot, Layout::Normal, 0.0, &mut b);
        let bias_v = self.data(bias);
        let mut out = Vec::with_capacity(pairs.len() * o);
        for &(i, j) in pairs {
            let (ai, bi, bj) = (&a[i * o..(i + 1) * o], &b[i * o..(i + 1) * o], &b[j * o..(j + 1) * o]);
            match mode {
                PairInput::Concat => {
                    out.extend((0..o).map(|c| ai[c] + bj[c] + bias_v[c]));
                }
                PairInput::Difference => {
                    out.extend((0..o).map(|c| ai[c] + (bj[c] - bi[c]) + bias_v[c]));
                }
            }
        }
        let t = Tensor::from_vec(vec![pairs.len(), o], out)?;
        let op = Op::PairAffine(Box::new(PairAffine {
            x,
            weight,
            bias,
            pairs: pairs.to_vec(),
            mode,
            n,
            d,
            o,
        }));
        Ok(self.record(t, op, &[x, weight, bias]))
    }

    /// `out[p] = x_iᵀ W x_j` for each pair `(i, j)`, with `x: [N, D]` and
    /// `W: [D, D]`. Output is `[P]`.
    pub fn bilinear_form(&mut self, x: Var, weight: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(weight));
        let &[n, d] = xs else {
            return Err(mismatch("bilinear_form", "input [N, D]", xs));
        };
        if ws != [d, d] {
            return Err(mismatch("bilinear_form", format!("weight [{d}, {d}]"), ws));
        }
        check_pairs("bilinear_form", pairs, n)?;
        let xv = self.data(x);
        let mut xw = vec![0.0; n * d];
        gemm(n, d, d, xv, Layout::Normal, self.data(weight), Layout::Normal, 0.0, &mut xw);
        let out = pairs
            .iter()
            .map(|&(i, j)| dot(&xw[i * d..(i + 1) * d], &xv[j * d..(j + 1) * d]))
            .collect();
        let t = Tensor::from_vec(vec![pairs.len()], out)?;
        let op = Op::Bilinear(Box::new(Bilinear {
            x,
            weight,
            pairs: pairs.to_vec(),
            xw,
            n,
            d,
        }));
        Ok(self.record(t, op, &[x, weight]))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += scale * b;
    }
}

impl PairAffine {
    pub(crate) fn backward(&self, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        let (n, d, o) = (self.n, self.d, self.o);
        let mut da = vec![0.0; n * o];
        let mut db = vec![0.0; n * o];
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let gp = &g[p * o..(p + 1) * o];
            add_into(&mut da[i * o..(i + 1) * o], gp, 1.0);
            add_into(&mut db[j * o..(j + 1) * o], gp, 1.0);
            if self.mode == PairInput::Difference {
                add_into(&mut db[i * o..(i + 1) * o], gp, -1.0);
            }
        }
        accumulate(nodes, grads, self.bias, |gb| {
            for row in g.chunks(o) {
                add_into(gb, row, 1.0);
            }
        });
        let x = nodes[self.x.0].value.data();
        accumulate(nodes, grads, self.weight, |gw| {
            let (top, bot) = gw.split_at_mut(d * o);
            gemm(d, n, o, x, Layout::Transposed, &da, Layout::Normal, 1.0, top);
            gemm(d, n, o, x, Layout::Transposed, &db, Layout::Normal, 1.0, bot);
        });
        let (top, bot) = nodes[self.weight.0].value.data().split_at(d * o);
        accumulate(nodes, grads, self.x, |gx| {
            gemm(n, o, d, &da, Layout::Normal, top, Layout::Transposed, 1.0, gx);
            gemm(n, o, d, &db, Layout::Normal, bot, Layout::Transposed, 1.0, gx);
        });
    }
}

impl Bilinear {
    pub(crate) fn backward(&self, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        let (n, d) = (self.n, self.d);
        let x = nodes[self.x.0].value.data();
        // d(out_p)/d(xw_i) = x_j and d(out_p)/d(x_j) = xw_i directly.
        let mut dxw = vec![0.0; n * d];
        let mut dx_direct = vec![0.0; n * d];
        for (&(i, j), &gp) in self.pairs.iter().zip(g) {
            add_into(&mut dxw[i * d..(i + 1) * d], &x[j * d..(j + 1) * d], gp);
            add_into(&mut dx_direct[j * d..(j + 1) * d], &self.xw[i * d..(i + 1) * d], gp);
        }
        accumulate(nodes, grads, self.weight, |gw| {
            gemm(d, n, d, x, Layout::Transposed, &dxw, Layout::Normal, 1.0, gw);
        });
        let w = nodes[self.weight.0].value.data();
        accumulate(nodes, grads, self.x, |gx| {
            add_into(gx, &dx_direct, 1.0);
            gemm(n, d, d, &dxw, Layout::Normal, w, Layout::Transposed, 1.0, gx);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_bilinear_weight_scores_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[4, 3], |i| i as f64 - 5.0));
        let w = tape.constant(Tensor::zeros(&[3, 3]));
        let s = tape.bilinear_form(x, w, &[(0, 1), (2, 3), (3, 0)]).unwrap();
        assert_eq!(tape.data(s), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_bilinear_weight_is_dot_product() {
        let mut tape = Tape::new();
        let xs = Tensor::from_fn(&[3, 2], |i| (i as f64).sqrt());
        let x = tape.constant(xs.clone());
        let w = tape.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let s = tape.bilinear_form(x, w, &[(0, 2), (1, 2)]).unwrap();
        let r = |k: usize| &xs.data()[k * 2..k * 2 + 2];
        let want = [dot(r(0), r(2)), dot(r(1), r(2))];
        assert_eq!(tape.data(s), &want);
    }

    #[test]
    fn difference_mode_matches_explicit_concat() {
        let mut tape = Tape::new();
        let xs = Tensor::from_fn(&[3, 2], |i| (i as f64 * 1.3).cos());
        let ws = Tensor::from_fn(&[4, 3], |i| (i as f64 * 0.7).sin());
        let x = tape.constant(xs.clone());
        let w = tape.constant(ws.clone());
        let b = tape.constant(Tensor::from_vec(vec![3], vec![0.1, -0.2, 0.3]).unwrap());
        let y = tape.pair_affine(x, w, b, &[(1, 2)], PairInput::Difference).unwrap();
        let (xi, xj) = (&xs.data()[2..4], &xs.data()[4..6]);
        let z = [xi[0], xi[1], xj[0] - xi[0], xj[1] - xi[1]];
        for c in 0..3 {
            let want: f64 = (0..4).map(|r| z[r] * ws.data()[r * 3 + c]).sum::<f64>() + [0.1, -0.2, 0.3][c];
            assert!((tape.data(y)[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_range_pairs() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        let w = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(tape.bilinear_form(x, w, &[(0, 2)]).is_err());
    }
}
