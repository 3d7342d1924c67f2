use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn rnd(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn check<F>(f: F, inputs: &[Tensor], kinks: &[f32])
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    for seed in 0..3 {
        let r = grad_check(&f, inputs, 1e-3, 1e-3, kinks, seed).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.checked > 0);
    }
}

#[test]
fn sum_grad_is_ones() {
    let mut store = ParamStore::new();
    let w = store.add("w", rnd(&[2, 3], 1));
    let tape = Tape::new();
    let loss = tape.param(&store, w).sum();
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(w).grad, vec![1.0; 6]);
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(w).grad, vec![2.0; 6]);
}

#[test]
fn mse_grad_example() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::scalar(2.0));
    let tape = Tape::new();
    let zero = tape.constant(Tensor::scalar(0.0));
    let loss = mse_loss(tape.param(&store, w), zero).unwrap();
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(w).grad, vec![4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut store = ParamStore::new();
    let w = store.add("w", rnd(&[3], 1));
    let tape = Tape::new();
    let v = tape.param(&store, w);
    assert!(matches!(tape.backward(v, &mut store), Err(Error::Dimension { .. })));
}

#[test]
fn prelu_examples() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 3], vec![-2.0, 0.0, 3.0]).unwrap());
    let a = tape.constant(Tensor::new(&[1], vec![0.25]).unwrap());
    assert_eq!(x.prelu(a).unwrap().to_vec(), vec![-0.5, 0.0, 3.0]);
}

#[test]
fn identity_kernel_conv() {
    let tape = Tape::new();
    let x = tape.constant(rnd(&[1, 9], 3));
    let w = tape.constant(Tensor::new(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap());
    for d in [1, 2, 4] {
        assert_eq!(x.conv1d_dilated(w, None, d).unwrap().to_vec(), x.to_vec());
    }
}

#[test]
fn shape_errors_name_both_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    let msg = a.add(b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    assert!(a.matmul(a).is_err());
}

#[test]
fn grad_elementwise() {
    let x = [rnd(&[3, 4], 1), rnd(&[3, 4], 2)];
    check(|_, v| v[0].add(v[1]), &x, &[]);
    check(|_, v| v[0].sub(v[1]), &x, &[]);
    check(|_, v| v[0].mul(v[1]), &x, &[]);
    check(|_, v| Ok(v[0].scale(-1.7).add_scalar(0.3)), &x[..1], &[]);
    check(|_, v| Ok(v[0].sigmoid()), &x[..1], &[]);
    check(|_, v| Ok(v[0].tanh()), &x[..1], &[]);
    check(|_, v| Ok(v[0].softplus()), &x[..1], &[]);
    check(|_, v| Ok(v[0].abs()), &x[..1], &[0.0]);
    check(|_, v| Ok(v[0].sin()), &x[..1], &[]);
    check(|_, v| Ok(v[0].cos()), &x[..1], &[]);
    check(|_, v| Ok(v[0].wrap()), &x[..1], &[]);
    check(|_, v| Ok(v[0].add_scalar(2.0).ln()), &x[..1], &[]);
    check(|_, v| Ok(v[0].add_scalar(2.0).recip()), &x[..1], &[]);
    let s = rnd(&[1], 5);
    check(|_, v| v[0].mul_bcast(v[1]), &[x[0].clone(), s.clone()], &[]);
    check(|_, v| v[0].add_bcast(v[1]), &[x[0].clone(), s], &[]);
}

#[test]
fn grad_linear_algebra() {
    check(|_, v| v[0].matmul(v[1]), &[rnd(&[3, 4], 1), rnd(&[4, 2], 2)], &[]);
    check(|_, v| v[0].transpose(), &[rnd(&[3, 4], 1)], &[]);
    check(
        |_, v| v[0].linear(v[1], Some(v[2])),
        &[rnd(&[2, 4], 1), rnd(&[3, 4], 2), rnd(&[3], 3)],
        &[],
    );
    check(|_, v| v[0].linear(v[1], None), &[rnd(&[4], 1), rnd(&[3, 4], 2)], &[]);
    check(|_, v| v[0].add_per_row(v[1]), &[rnd(&[3, 4], 1), rnd(&[3], 2)], &[]);
    check(|_, v| v[0].add_per_col(v[1]), &[rnd(&[3, 4], 1), rnd(&[4], 2)], &[]);
}

#[test]
fn grad_conv_and_prelu() {
    for d in [1, 2, 3] {
        check(
            move |_, v| v[0].conv1d_dilated(v[1], Some(v[2]), d),
            &[rnd(&[2, 11], 1), rnd(&[3, 2, 3], 2), rnd(&[3], 3)],
            &[],
        );
    }
    check(
        |_, v| v[0].conv1d(v[1], None, 2, 4, 0),
        &[rnd(&[2, 7], 4), rnd(&[2, 2, 3], 5)],
        &[],
    );
    check(|_, v| v[0].prelu(v[1]), &[rnd(&[3, 5], 1), rnd(&[3], 2)], &[0.0]);
}

#[test]
fn grad_reshaping() {
    let x = [rnd(&[3, 6], 1)];
    check(|_, v| v[0].downsample2(), &x, &[]);
    check(|_, v| v[0].upsample2(), &x, &[]);
    check(|_, v| v[0].upsample(3), &x, &[]);
    check(|_, v| v[0].slice_cols(1, 4), &x, &[]);
    check(|_, v| v[0].pad_cols(2, 1), &x, &[]);
    check(|_, v| v[0].row(1), &x, &[]);
    check(|_, v| stack_rows(&[v[0].row(2)?, v[0].row(0)?]), &x, &[]);
    check(|_, v| v[0].concat_rows(v[1]), &[rnd(&[2, 3], 1), rnd(&[1, 3], 2)], &[]);
    check(|_, v| Ok(v[0].sum()), &x, &[]);
    check(|_, v| Ok(v[0].mean()), &x, &[]);
    check(|_, v| mse_loss(v[0], v[1]), &[rnd(&[2, 3], 1), rnd(&[2, 3], 2)], &[]);
}

#[test]
fn grad_lstm_cell() {
    let h = 8;
    let inputs = [
        rnd(&[5], 1),
        rnd(&[h], 2),
        rnd(&[h], 3),
        rnd(&[4 * h, 5], 4),
        rnd(&[4 * h, h], 5),
        rnd(&[4 * h], 6),
    ];
    check(
        |_, v| {
            let (h2, c2) = v[0].lstm_cell(v[1], v[2], v[3], v[4], v[5])?;
            stack_rows(&[h2, c2])
        },
        &inputs,
        &[],
    );
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut store = ParamStore::new();
        let w = store.add("w", rnd(&[4, 6], 9));
        let tape = Tape::new();
        let x = tape.constant(rnd(&[6, 5], 8));
        let y = tape.param(&store, w).matmul(x).unwrap().tanh().sum();
        tape.backward(y, &mut store).unwrap();
        store.get(w).grad.clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn inference_tape_records_no_grad() {
    let mut store = ParamStore::new();
    let w = store.add("w", rnd(&[3], 1));
    let tape = Tape::inference();
    let loss = tape.param(&store, w).sum();
    assert!(!loss.requires_grad());
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(w).grad, vec![0.0; 3]);
}
