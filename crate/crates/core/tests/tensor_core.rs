use netsurgery::tensor::{conv2d_forward, maxpool_forward, relu_forward, softmax};
use netsurgery::Tensor;
use proptest::prelude::*;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-10.0f32..10.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn image_batch() -> impl Strategy<Value = Tensor> {
    (1usize..3, 1usize..4, 2usize..8, 2usize..8).prop_flat_map(|(n, c, h, w)| tensor(vec![n, c, h, w]))
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in (1usize..5, 2usize..6).prop_flat_map(|(n, c)| tensor(vec![n, c]))) {
        let p = softmax(&x).unwrap();
        let c = x.shape()[1];
        for row in p.data().chunks(c) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn argmax_survives_positive_scaling(x in (1usize..5, 2usize..6).prop_flat_map(|(n, c)| tensor(vec![n, c])), k in 0.01f32..100.0) {
        let scaled = x.map(|v| v * k);
        prop_assert_eq!(x.argmax_rows().unwrap(), scaled.argmax_rows().unwrap());
    }

    #[test]
    fn relu_is_idempotent_and_nonnegative(x in image_batch()) {
        let once = relu_forward(&x);
        prop_assert!(once.data().iter().all(|&v| v >= 0.0));
        prop_assert_eq!(relu_forward(&once), once);
    }

    #[test]
    fn maxpool_picks_a_window_member(x in image_batch(), size in 1usize..3, stride in 1usize..3) {
        prop_assume!(x.shape()[2] >= size && x.shape()[3] >= size);
        let out = maxpool_forward(&x, size, stride).unwrap();
        let [n, c, oh, ow] = [out.value.shape()[0], out.value.shape()[1], out.value.shape()[2], out.value.shape()[3]];
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let got = out.value.at(&[ni, ci, oy, ox]);
                        let mut best = f32::NEG_INFINITY;
                        for dy in 0..size {
                            for dx in 0..size {
                                best = best.max(x.at(&[ni, ci, oy * stride + dy, ox * stride + dx]));
                            }
                        }
                        prop_assert_eq!(got, best);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_bias_shifts_every_output(x in image_batch(), bias in -5.0f32..5.0) {
        let c = x.shape()[1];
        let w = Tensor::full(&[2, c, 1, 1], 0.5);
        let zero = conv2d_forward(&x, &w, &Tensor::zeros(&[2]), 1, 0).unwrap();
        let shifted = conv2d_forward(&x, &w, &Tensor::full(&[2], bias), 1, 0).unwrap();
        for (a, b) in zero.data().iter().zip(shifted.data()) {
            prop_assert!((b - a - bias).abs() < 1e-4);
        }
    }
}

#[test]
fn stack_and_row_round_trip() {
    let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = a.map(|v| -v);
    let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(s.shape(), &[2, 2, 2]);
    assert_eq!(s.row(0).data(), a.data());
    assert_eq!(s.row(1).data(), b.data());
}

#[test]
fn conv_rejects_channel_mismatch() {
    let x: Tensor = Tensor::zeros(&[1, 3, 4, 4]);
    let w = Tensor::zeros(&[1, 2, 3, 3]);
    assert!(conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1, 0).is_err());
}
