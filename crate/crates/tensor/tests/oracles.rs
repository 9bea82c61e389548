//! Forward ops against independent reference implementations.

use proptest::prelude::*;
use wisense_tensor::{ops, Tensor, TensorError};

/// Direct nested-loop convolution with zero padding, accumulated in f64.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let s = x.shape();
    let (n, c, h, wd) = (s[0], s[1], s[2], s[3]);
    let ws = w.shape();
    let (k, kh, kw) = (ws[0], ws[2], ws[3]);
    assert_eq!(ws[1], c);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let xd = x.data();
    let wdt = w.data();
    let mut out = vec![0.0; n * k * oh * ow];
    for b in 0..n {
        for o in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[((b * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * wdt[((o * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * k + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, k, oh, ow], out).unwrap()
}

/// Depthwise as C independent single-channel naive convolutions.
fn naive_depthwise(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let s = x.shape();
    let (n, c, h, wd) = (s[0], s[1], s[2], s[3]);
    let (kh, kw) = (w.shape()[2], w.shape()[3]);
    let mut planes = Vec::new();
    let mut out_hw = (0, 0);
    for b in 0..n {
        for ci in 0..c {
            let base = (b * c + ci) * h * wd;
            let xi = Tensor::new(&[1, 1, h, wd], x.data()[base..base + h * wd].to_vec()).unwrap();
            let wi = Tensor::new(&[1, 1, kh, kw], w.data()[ci * kh * kw..(ci + 1) * kh * kw].to_vec()).unwrap();
            let o = naive_conv(&xi, &wi, stride, pad);
            out_hw = (o.shape()[2], o.shape()[3]);
            planes.extend_from_slice(o.data());
        }
    }
    Tensor::new(&[n, c, out_hw.0, out_hw.1], planes).unwrap()
}

#[test]
fn identity_kernel_reproduces_input() {
    let x = Tensor::<f32>::uniform(&[1, 1, 3, 3], 2.0, 5);
    let w = Tensor::<f32>::full(&[1, 1, 1, 1], 1.0);
    assert_eq!(ops::conv2d(&x, &w, 1, 0).unwrap(), x);
}

#[test]
fn strided_padded_output_size() {
    let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
    let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
    assert_eq!(ops::conv2d(&x, &w, 2, 1).unwrap().shape(), &[1, 1, 2, 2]);
}

#[test]
fn random_conv_matches_direct_oracle() {
    let x = Tensor::<f32>::uniform(&[2, 3, 8, 8], 1.0, 21);
    let w = Tensor::<f32>::uniform(&[4, 3, 3, 3], 1.0, 22);
    let got = ops::conv2d(&x, &w, 1, 1).unwrap();
    let want = naive_conv(&x.cast(), &w.cast(), 1, 1);
    assert_eq!(got.shape(), want.shape());
    let err = got.cast::<f64>().max_abs_diff(&want).unwrap();
    assert!(err < 1e-5, "max abs error {err}");
}

#[test]
fn conv_channel_mismatch_is_a_dimension_error() {
    let x = Tensor::<f32>::zeros(&[1, 3, 5, 5]);
    let w = Tensor::<f32>::zeros(&[2, 4, 3, 3]);
    assert!(matches!(ops::conv2d(&x, &w, 1, 1), Err(TensorError::Dimension { .. })));
}

#[test]
fn depthwise_unit_filters_are_identity() {
    let x = Tensor::<f32>::uniform(&[2, 5, 4, 6], 1.0, 3);
    let w = Tensor::<f32>::full(&[5, 1, 1, 1], 1.0);
    assert_eq!(ops::depthwise_conv2d(&x, &w, 1, 0).unwrap(), x);
}

#[test]
fn depthwise_stride_two_shape() {
    let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
    let w = Tensor::<f32>::zeros(&[2, 1, 3, 3]);
    assert_eq!(ops::depthwise_conv2d(&x, &w, 2, 1).unwrap().shape(), &[1, 2, 2, 2]);
}

#[test]
fn depthwise_filter_count_must_match_channels() {
    let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
    let w = Tensor::<f32>::zeros(&[2, 1, 3, 3]);
    assert!(matches!(
        ops::depthwise_conv2d(&x, &w, 1, 1),
        Err(TensorError::Dimension { .. })
    ));
}

#[test]
fn depthwise_matches_grouped_oracle() {
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 2, 5), (2, 2, 5)] {
        let x = Tensor::<f32>::uniform(&[2, 4, 9, 11], 1.0, 40 + k as u64);
        let w = Tensor::<f32>::uniform(&[4, 1, k, k], 1.0, 50 + stride as u64);
        let got = ops::depthwise_conv2d(&x, &w, stride, pad).unwrap();
        let want = naive_depthwise(&x.cast(), &w.cast(), stride, pad);
        assert!(got.cast::<f64>().max_abs_diff(&want).unwrap() < 1e-5);
    }
}

#[test]
fn batch_norm_on_standardized_input_is_near_identity() {
    // each channel alternates ±1: mean 0, biased variance 1
    let x = Tensor::<f32>::from_fn(&[2, 3, 2, 2], |i| if i % 2 == 0 { 1.0 } else { -1.0 });
    let gamma = Tensor::full(&[3], 1.0f32);
    let beta = Tensor::zeros(&[3]);
    let mut rm = Tensor::zeros(&[3]);
    let mut rv = Tensor::full(&[3], 1.0f32);
    let y = ops::batch_norm(&x, &gamma, &beta, &mut rm, &mut rv, true, 0.1, 1e-5).unwrap();
    assert!(y.max_abs_diff(&x).unwrap() < 1e-4);
}

#[test]
fn batch_norm_constant_channel_yields_beta() {
    let x = Tensor::<f32>::full(&[4, 2, 3, 3], 7.5);
    let gamma = Tensor::full(&[2], 2.0f32);
    let beta = Tensor::new(&[2], vec![0.25f32, -1.0]).unwrap();
    let mut rm = Tensor::zeros(&[2]);
    let mut rv = Tensor::full(&[2], 1.0f32);
    let y = ops::batch_norm(&x, &gamma, &beta, &mut rm, &mut rv, true, 0.1, 1e-5).unwrap();
    for (i, v) in y.data().iter().enumerate() {
        let c = (i / 9) % 2;
        assert_eq!(*v, beta.data()[c]);
    }
    // running mean moved 10% of the way to the batch mean
    assert!((rm.data()[0] - 0.75).abs() < 1e-6);
}

#[test]
fn batch_norm_eval_matches_hand_arithmetic() {
    let x = Tensor::<f64>::new(&[1, 2, 1, 2], vec![1.0, 2.0, -3.0, 4.0]).unwrap();
    let gamma = Tensor::new(&[2], vec![2.0, 0.5]).unwrap();
    let beta = Tensor::new(&[2], vec![1.0, -1.0]).unwrap();
    let mut rm = Tensor::new(&[2], vec![0.5, 1.0]).unwrap();
    let mut rv = Tensor::new(&[2], vec![4.0, 0.25]).unwrap();
    let eps = 1e-5;
    let y = ops::batch_norm(&x, &gamma, &beta, &mut rm, &mut rv, false, 0.1, eps).unwrap();
    // (x - rm) / sqrt(rv + eps) * gamma + beta, written out per element
    let s0 = (4.0f64 + eps).sqrt();
    let s1 = (0.25f64 + eps).sqrt();
    let want = [
        (1.0 - 0.5) / s0 * 2.0 + 1.0,
        (2.0 - 0.5) / s0 * 2.0 + 1.0,
        (-3.0 - 1.0) / s1 * 0.5 - 1.0,
        (4.0 - 1.0) / s1 * 0.5 - 1.0,
    ];
    for (a, b) in y.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    // eval mode leaves running stats alone
    assert_eq!(rm.data(), &[0.5, 1.0]);
}

#[test]
fn activation_and_pool_definitions() {
    let x = Tensor::<f32>::new(&[2], vec![-1.0, 2.0]).unwrap();
    assert_eq!(ops::relu(&x).unwrap().data(), &[0.0, 2.0]);
    let x = Tensor::<f32>::new(&[3], vec![-3.0, 0.0, 3.0]).unwrap();
    assert_eq!(ops::hard_sigmoid(&x).unwrap().data(), &[0.0, 0.5, 1.0]);
    let x = Tensor::<f32>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let p = ops::global_avg_pool(&x).unwrap();
    assert_eq!(p.shape(), &[1, 1]);
    assert_eq!(p.data(), &[2.5]);
}

#[test]
fn linear_examples() {
    let x = Tensor::<f32>::uniform(&[3, 4], 1.0, 8);
    let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
    assert_eq!(ops::linear(&x, &eye, &Tensor::zeros(&[4])).unwrap(), x);

    let x = Tensor::<f32>::new(&[1, 2], vec![1.0, 2.0]).unwrap();
    let w = Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap();
    let b = Tensor::new(&[1], vec![5.0]).unwrap();
    assert_eq!(ops::linear(&x, &w, &b).unwrap().data(), &[16.0]);

    let bad = Tensor::<f32>::zeros(&[1, 3]);
    assert!(ops::linear(&x, &bad, &b).is_err());
}

#[test]
fn random_linear_matches_dot_products() {
    let x = Tensor::<f32>::uniform(&[5, 7], 1.0, 30);
    let w = Tensor::<f32>::uniform(&[3, 7], 1.0, 31);
    let b = Tensor::<f32>::uniform(&[3], 1.0, 32);
    let y = ops::linear(&x, &w, &b).unwrap();
    for i in 0..5 {
        for j in 0..3 {
            let dot: f64 = (0..7)
                .map(|f| x.data()[i * 7 + f] as f64 * w.data()[j * 7 + f] as f64)
                .sum::<f64>()
                + b.data()[j] as f64;
            assert!((y.data()[i * 3 + j] as f64 - dot).abs() < 1e-5);
        }
    }
}

#[test]
fn cross_entropy_reference_values() {
    let peaked = Tensor::<f64>::new(&[1, 3], vec![0.0, 200.0, 0.0]).unwrap();
    assert!(ops::softmax_cross_entropy(&peaked, &[1]).unwrap() < 1e-12);
    let z3 = Tensor::<f32>::zeros(&[4, 3]);
    assert!((ops::softmax_cross_entropy(&z3, &[0, 1, 2, 0]).unwrap() - 3f64.ln()).abs() < 1e-6);
    let z5 = Tensor::<f32>::zeros(&[2, 5]);
    assert!((ops::softmax_cross_entropy(&z5, &[4, 0]).unwrap() - 5f64.ln()).abs() < 1e-6);
    assert!(matches!(
        ops::softmax_cross_entropy(&z5, &[5, 0]),
        Err(TensorError::Label { label: 5, classes: 5 })
    ));
}

#[test]
fn forward_is_bit_deterministic() {
    let x = Tensor::<f32>::uniform(&[3, 4, 10, 12], 1.0, 77);
    let w = Tensor::<f32>::uniform(&[6, 4, 3, 3], 1.0, 78);
    let a = ops::conv2d(&x, &w, 2, 1).unwrap();
    let b = ops::conv2d(&x, &w, 2, 1).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn thread_cap_does_not_change_results() {
    let x = Tensor::<f32>::uniform(&[4, 3, 9, 9], 1.0, 90);
    let w = Tensor::<f32>::uniform(&[5, 3, 3, 3], 1.0, 91);
    let dw = Tensor::<f32>::uniform(&[3, 1, 3, 3], 1.0, 92);
    wisense_tensor::parallel::set_threads(1);
    let serial = (ops::conv2d(&x, &w, 1, 1).unwrap(), ops::depthwise_conv2d(&x, &dw, 2, 1).unwrap());
    wisense_tensor::parallel::set_threads(4);
    let par = (ops::conv2d(&x, &w, 1, 1).unwrap(), ops::depthwise_conv2d(&x, &dw, 2, 1).unwrap());
    wisense_tensor::parallel::set_threads(1);
    assert_eq!(serial, par);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_equals_direct_oracle(
        n in 1usize..3, c in 1usize..4, k in 1usize..4,
        h in 3usize..9, w in 3usize..9,
        ksz in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3, pad in 0usize..3, seed in any::<u64>(),
    ) {
        prop_assume!(h + 2 * pad >= ksz && w + 2 * pad >= ksz);
        let x = Tensor::<f32>::uniform(&[n, c, h, w], 1.0, seed);
        let wt = Tensor::<f32>::uniform(&[k, c, ksz, ksz], 1.0, seed ^ 0x55);
        let got = ops::conv2d(&x, &wt, stride, pad).unwrap();
        let want = naive_conv(&x.cast(), &wt.cast(), stride, pad);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert!(got.cast::<f64>().max_abs_diff(&want).unwrap() < 1e-5);
    }

    #[test]
    fn depthwise_channels_are_independent(
        c in 2usize..5, h in 4usize..9, stride in 1usize..3, target in 0usize..5, seed in any::<u64>(),
    ) {
        let target = target % c;
        let x = Tensor::<f32>::uniform(&[1, c, h, h], 1.0, seed);
        let wt = Tensor::<f32>::uniform(&[c, 1, 3, 3], 1.0, seed ^ 7);
        let base = ops::depthwise_conv2d(&x, &wt, stride, 1).unwrap();
        let mut bumped = x.clone();
        let plane = h * h;
        for v in &mut bumped.data_mut()[target * plane..(target + 1) * plane] {
            *v += 0.5;
        }
        let out = ops::depthwise_conv2d(&bumped, &wt, stride, 1).unwrap();
        let oplane = out.shape()[2] * out.shape()[3];
        for ch in 0..c {
            let same = base.data()[ch * oplane..(ch + 1) * oplane] == out.data()[ch * oplane..(ch + 1) * oplane];
            prop_assert_eq!(same, ch != target);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ce_is_nonnegative(
        n in 1usize..5, k in 2usize..7, seed in any::<u64>(), scale in 0.1f64..50.0,
    ) {
        let logits = Tensor::<f32>::uniform(&[n, k], scale, seed);
        let p = ops::softmax(&logits).unwrap();
        for row in p.data().chunks(k) {
            let s: f64 = row.iter().map(|v| *v as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
        let labels: Vec<usize> = (0..n).map(|i| (seed as usize + i) % k).collect();
        prop_assert!(ops::softmax_cross_entropy(&logits, &labels).unwrap() >= 0.0);
    }
}
