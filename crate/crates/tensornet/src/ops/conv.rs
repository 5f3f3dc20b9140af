use super::Op;
use crate::error::{mismatch, Result};
use crate::gemm::{gemm, Layout};
use crate::tape::{accumulate, Node, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_area(&self) -> usize {
        self.h_out * self.w_out
    }
}

pub(crate) struct Conv2d {
    x: Var,
    weight: Var,
    bias: Var,
    c_out: usize,
    geo: Geometry,
    cols: Vec<f64>,
}

impl Tape {
    /// Cross-correlation of a `[C_in, H, W]` input with a
    /// `[C_out, C_in, k, k]` kernel. Output extents use floor division:
    /// `H' = (H + 2·pad − k) / stride + 1`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        let &[c_in, h, w] = xs else {
            return Err(mismatch("conv2d", "input [C_in, H, W]", xs));
        };
        let &[c_out, wc, k, k2] = ws else {
            return Err(mismatch("conv2d", "weight [C_out, C_in, k, k]", ws));
        };
        if wc != c_in || k != k2 || k % 2 == 0 {
            return Err(mismatch("conv2d", format!("weight [_, {c_in}, k, k] with odd k"), ws));
        }
        if bs != [c_out] {
            return Err(mismatch("conv2d", format!("bias [{c_out}]"), bs));
        }
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(mismatch("conv2d", format!("input covering a {k}x{k} kernel with stride >= 1"), xs));
        }
        let geo = Geometry {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        };
        let cols = im2col(self.data(x), &geo);
        let area = geo.out_area();
        let mut out = vec![0.0; c_out * area];
        for (row, &b) in out.chunks_mut(area).zip(self.data(bias)) {
            row.fill(b);
        }
        gemm(
            c_out,
            geo.patch(),
            area,
            self.data(weight),
            Layout::Normal,
            &cols,
            Layout::Normal,
            1.0,
            &mut out,
        );
        let t = Tensor::from_vec(vec![c_out, geo.h_out, geo.w_out], out)?;
        let op = Op::Conv2d(Box::new(Conv2d {
            x,
            weight,
            bias,
            c_out,
            geo,
            cols,
        }));
        Ok(self.record(t, op, &[x, weight, bias]))
    }
}

/// Unfolds `[C, H, W]` into a `[C·k·k, H'·W']` patch matrix.
fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let area = g.out_area();
    let mut cols = vec![0.0; g.patch() * area];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * area..(row + 1) * area];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im(cols: &[f64], g: &Geometry, dx: &mut [f64]) {
    let area = g.out_area();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * area..(row + 1) * area];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in src[oy * g.w_out..(oy + 1) * g.w_out].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    pub(crate) fn backward(&self, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
        let geo = &self.geo;
        let area = geo.out_area();
        let patch = geo.patch();
        accumulate(nodes, grads, self.bias, |gb| {
            for (b, row) in gb.iter_mut().zip(g.chunks(area)) {
                *b += row.iter().sum::<f64>();
            }
        });
        accumulate(nodes, grads, self.weight, |gw| {
            gemm(self.c_out, area, patch, g, Layout::Normal, &self.cols, Layout::Transposed, 1.0, gw);
        });
        if nodes[self.x.0].requires_grad() {
            let w = nodes[self.weight.0].value.data();
            let mut dcols = vec![0.0; patch * area];
            gemm(patch, self.c_out, area, w, Layout::Transposed, g, Layout::Normal, 0.0, &mut dcols);
            accumulate(nodes, grads, self.x, |gx| col2im(&dcols, geo, gx));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_kernel_copies_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[3, 4, 5], |i| (i as f64 * 0.3).sin()));
        let w = tape.constant(Tensor::from_fn(&[3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 6, 6], |i| i as f64));
        let w = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        assert!(tape.data(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stride_two_halves_even_extents() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 256, 256]));
        let w = tape.constant(Tensor::zeros(&[16, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[16]));
        let y = tape.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[16, 128, 128]);
    }

    #[test]
    fn rejects_mismatched_channels_and_even_kernels() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 8, 8]));
        let w = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[4]));
        assert!(tape.conv2d(x, w, b, 1, 1).is_err());
        let w2 = tape.constant(Tensor::zeros(&[4, 3, 2, 2]));
        assert!(tape.conv2d(x, w2, b, 1, 1).is_err());
    }
}
