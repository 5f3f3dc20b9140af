pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linear;
pub(crate) mod loss;
pub(crate) mod norm;
pub(crate) mod pairs;
pub(crate) mod segments;
pub(crate) mod shape;

use crate::tape::{Node, Var};
use crate::tensor::Tensor;

pub(crate) enum Op {
    Leaf,
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ChannelsLast(shape::ChannelsLast),
    GatherRows(shape::GatherRows),
    ConcatCols(shape::ConcatCols),
    HalfMean(Var),
    Conv2d(Box<conv::Conv2d>),
    Linear(linear::Linear),
    PairAffine(Box<pairs::PairAffine>),
    Bilinear(Box<pairs::Bilinear>),
    MaxSegments(segments::MaxSegments),
    BatchNorm(Box<norm::BatchNorm>),
    Bce(loss::Bce),
    MaskedMse(loss::MaskedMse),
}

pub(crate) fn backward(
    op: &Op,
    out: &Tensor,
    g: &[f64],
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
) {
    match op {
        Op::Leaf => {}
        Op::Reshape(x) => shape::reshape_backward(*x, g, nodes, grads),
        Op::Add(a, b) => elementwise::add_backward(*a, *b, 1.0, g, nodes, grads),
        Op::Sub(a, b) => elementwise::add_backward(*a, *b, -1.0, g, nodes, grads),
        Op::Mul(a, b) => elementwise::mul_backward(*a, *b, g, nodes, grads),
        Op::Scale(x, c) => elementwise::scale_backward(*x, *c, g, nodes, grads),
        Op::Sum(x) => elementwise::sum_backward(*x, g, nodes, grads),
        Op::Relu(x) => elementwise::relu_backward(*x, g, nodes, grads),
        Op::Sigmoid(x) => elementwise::sigmoid_backward(*x, out, g, nodes, grads),
        Op::Tanh(x) => elementwise::tanh_backward(*x, out, g, nodes, grads),
        Op::ChannelsLast(s) => s.backward(g, nodes, grads),
        Op::GatherRows(s) => s.backward(g, nodes, grads),
        Op::ConcatCols(s) => s.backward(g, nodes, grads),
        Op::HalfMean(x) => shape::half_mean_backward(*x, g, nodes, grads),
        Op::Conv2d(c) => c.backward(g, nodes, grads),
        Op::Linear(l) => l.backward(g, nodes, grads),
        Op::PairAffine(p) => p.backward(g, nodes, grads),
        Op::Bilinear(b) => b.backward(g, nodes, grads),
        Op::MaxSegments(m) => m.backward(g, nodes, grads),
        Op::BatchNorm(b) => b.backward(g, nodes, grads),
        Op::Bce(b) => b.backward(g, nodes, grads),
        Op::MaskedMse(m) => m.backward(g, nodes, grads),
    }
}
