use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensornet::gradcheck::check;
use tensornet::{BatchNormState, NormMode, PairInput, Tensor};

const H: f64 = 1e-5;
const TOL: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn probs(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::from_fn(&[n], |_| rng.random_range(0.05..0.95))
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let inputs = [random(&mut rng, &[2, 5, 6]), random(&mut rng, &[3, 2, 3, 3]), random(&mut rng, &[3])];
        let r = check(&inputs, H, 3, |t, v| t.conv2d(v[0], v[1], v[2], stride, pad)).unwrap();
        assert!(r.worst() < TOL, "stride {stride} pad {pad}: {:?}", r.relative_errors);
    }
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&mut rng, &[4, 3]);
    let y = random(&mut rng, &[4, 3]);
    let r = check(&[x.clone()], H, 1, |t, v| Ok(t.relu(v[0]))).unwrap();
    assert!(r.worst() < TOL);
    let r = check(&[x.clone()], H, 1, |t, v| Ok(t.sigmoid(v[0]))).unwrap();
    assert!(r.worst() < TOL);
    let r = check(&[x.clone()], H, 1, |t, v| Ok(t.tanh(v[0]))).unwrap();
    assert!(r.worst() < TOL);
    let r = check(&[x.clone(), y.clone()], H, 1, |t, v| t.mul(v[0], v[1])).unwrap();
    assert!(r.worst() < TOL);
    let r = check(&[x.clone(), y], H, 1, |t, v| t.sub(v[0], v[1])).unwrap();
    assert!(r.worst() < TOL);
    let r = check(&[x], H, 1, |t, v| {
        let r = t.reshape(v[0], &[2, 2, 3])?;
        let p = t.channels_last(r)?;
        t.half_mean(p)
    })
    .unwrap();
    assert!(r.worst() < TOL);
}

#[test]
fn linear_and_pair_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random(&mut rng, &[5, 3]);
    let r = check(&[x.clone(), random(&mut rng, &[3, 4]), random(&mut rng, &[4])], H, 2, |t, v| {
        t.linear(v[0], v[1], v[2])
    })
    .unwrap();
    assert!(r.worst() < TOL);

    let pairs = [(0, 1), (1, 0), (2, 4), (4, 4), (3, 1)];
    for mode in [PairInput::Concat, PairInput::Difference] {
        let r = check(&[x.clone(), random(&mut rng, &[6, 2]), random(&mut rng, &[2])], H, 2, |t, v| {
            t.pair_affine(v[0], v[1], v[2], &pairs, mode)
        })
        .unwrap();
        assert!(r.worst() < TOL, "{mode:?}: {:?}", r.relative_errors);
    }
    let r = check(&[x.clone(), random(&mut rng, &[3, 3])], H, 2, |t, v| t.bilinear_form(v[0], v[1], &pairs)).unwrap();
    assert!(r.worst() < TOL);

    let r = check(&[x.clone(), random(&mut rng, &[5, 2])], H, 2, |t, v| {
        let c = t.concat_cols(v[0], v[1])?;
        t.gather_rows(c, &[4, 0, 0, 2])
    })
    .unwrap();
    assert!(r.worst() < TOL);
}

#[test]
fn segment_max_and_batchnorm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&mut rng, &[7, 3]);
    let r = check(&[x.clone()], H, 4, |t, v| t.max_reduce_segments(v[0], &[0, 2, 3, 7])).unwrap();
    assert!(r.worst() < TOL);
    for mode in [NormMode::Train, NormMode::Eval] {
        let inputs = [x.clone(), random(&mut rng, &[3]), random(&mut rng, &[3])];
        let r = check(&inputs, H, 4, |t, v| {
            let mut st = BatchNormState::new(3);
            st.running_mean = vec![0.1, -0.2, 0.3];
            st.running_var = vec![0.5, 1.5, 2.0];
            t.batchnorm(v[0], v[1], v[2], &mut st, mode, 1e-5)
        })
        .unwrap();
        assert!(r.worst() < TOL, "{mode:?}: {:?}", r.relative_errors);
    }
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let p = probs(&mut rng, 9);
    let y = Tensor::from_fn(&[9], |i| (i % 2) as f64);
    let r = check(&[p, y], H, 5, |t, v| t.bce_loss(v[0], v[1], 1e-7)).unwrap();
    assert!(r.worst() < TOL);
    let mask = [true, false, true, true, false, false];
    let r = check(&[random(&mut rng, &[3, 2, 2]), random(&mut rng, &[3, 2, 2])], H, 5, |t, v| {
        t.masked_mse(v[0], v[1], &mask)
    })
    .unwrap();
    assert!(r.worst() < TOL);
}

#[test]
fn sum_of_squares_gradient_is_twice_input() {
    let mut tape = tensornet::Tape::new();
    let x = tape.param(Tensor::from_vec(vec![4], vec![0.5, -1.0, 2.0, 0.0]).unwrap());
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, -2.0, 4.0, 0.0]);
}

#[test]
fn backward_rejects_detached_and_non_scalar() {
    let mut tape = tensornet::Tape::new();
    let c = tape.constant(Tensor::scalar(1.0));
    assert_eq!(tape.backward(c), Err(tensornet::TensorError::Detached));
    let p = tape.param(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(p), Err(tensornet::TensorError::NotScalar(_))));
}
