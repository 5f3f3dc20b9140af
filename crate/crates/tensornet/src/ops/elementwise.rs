use super::Op;
use crate::error::{mismatch, Result};
use crate::tape::{accumulate, Node, Tape, Var};
use crate::tensor::Tensor;

impl Tape {
    fn map_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_vec(t.shape().to_vec(), data).expect("same shape");
        self.record(out, op, &[x])
    }

    fn zip_binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, format!("{:?}", ta.shape()), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_binary(a, b, "add", |x, y| x + y)?;
        Ok(self.record(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.record(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.record(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map_unary(x, |v| v * c, Op::Scale(x, c))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.record(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map_unary(x, f64::tanh, Op::Tanh(x))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn add_backward(a: Var, b: Var, sign: f64, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    accumulate(nodes, grads, a, |ga| {
        for (x, y) in ga.iter_mut().zip(g) {
            *x += y;
        }
    });
    accumulate(nodes, grads, b, |gb| {
        for (x, y) in gb.iter_mut().zip(g) {
            *x += sign * y;
        }
    });
}

pub(crate) fn mul_backward(a: Var, b: Var, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
    accumulate(nodes, grads, a, |ga| {
        for ((x, y), w) in ga.iter_mut().zip(g).zip(vb) {
            *x += y * w;
        }
    });
    accumulate(nodes, grads, b, |gb| {
        for ((x, y), w) in gb.iter_mut().zip(g).zip(va) {
            *x += y * w;
        }
    });
}

pub(crate) fn scale_backward(x: Var, c: f64, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    accumulate(nodes, grads, x, |gx| {
        for (a, b) in gx.iter_mut().zip(g) {
            *a += c * b;
        }
    });
}

pub(crate) fn sum_backward(x: Var, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    accumulate(nodes, grads, x, |gx| {
        for a in gx.iter_mut() {
            *a += g[0];
        }
    });
}

pub(crate) fn relu_backward(x: Var, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    let vx = nodes[x.0].value.data();
    accumulate(nodes, grads, x, |gx| {
        for ((a, b), v) in gx.iter_mut().zip(g).zip(vx) {
            if *v > 0.0 {
                *a += b;
            }
        }
    });
}

pub(crate) fn sigmoid_backward(x: Var, out: &Tensor, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    accumulate(nodes, grads, x, |gx| {
        for ((a, b), s) in gx.iter_mut().zip(g).zip(out.data()) {
            *a += b * s * (1.0 - s);
        }
    });
}

pub(crate) fn tanh_backward(x: Var, out: &Tensor, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    accumulate(nodes, grads, x, |gx| {
        for ((a, b), t) in gx.iter_mut().zip(g).zip(out.data()) {
            *a += b * (1.0 - t * t);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3]));
        let y = tape.sigmoid(x);
        assert_eq!(tape.data(y), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_loss_has_unit_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.5));
        tape.backward(x).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn relu_gradient_masks_negative_inputs() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![4], vec![-1.0, 2.0, -3.0, 4.0]).unwrap());
        let r = tape.relu(x);
        let s = tape.sum(r);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.add(a, b).is_err());
    }
}
