use proptest::prelude::*;
use rand::Rng;

use sknn::conv::{conv_direct, ConvGeometry};
use sknn::data::{read_checkpoint, read_idx_images, write_checkpoint, write_idx_images};
use sknn::gradcheck::relative_error;
use sknn::layers::{sketch_within_budget, DenseConv, DenseFc, Layer, SkConv, SkFc};
use sknn::network::Network;
use sknn::rng::stream_rng;
use sknn::{SignMatrix, Tensor};

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, 0);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 1..5)
}

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.shape() == b.shape() && a.max_abs_diff(b) <= tol * (1.0 + a.max_abs().max(b.max_abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unfold_then_fold_is_identity(shape in shape_strategy(), mode_pick in 0usize..8, seed in any::<u64>()) {
        let t = random_tensor(&shape, seed);
        let mode = 1 + mode_pick % shape.len();
        let m = t.mat_n(mode).unwrap();
        prop_assert_eq!(m.shape(), &[t.len() / shape[mode - 1], shape[mode - 1]][..]);
        prop_assert_eq!(Tensor::unmat_n(&m, &shape, mode).unwrap(), t);
    }

    #[test]
    fn mode_product_is_folded_matmul(shape in shape_strategy(), mode_pick in 0usize..8, rows in 1usize..5, seed in any::<u64>()) {
        let t = random_tensor(&shape, seed);
        let mode = 1 + mode_pick % shape.len();
        let a = random_tensor(&[rows, shape[mode - 1]], seed ^ 1);
        let mut out_shape = shape.clone();
        out_shape[mode - 1] = rows;
        let folded = t.mat_n(mode).unwrap().matmul(&a.transpose().unwrap()).unwrap();
        let expect = Tensor::unmat_n(&folded, &out_shape, mode).unwrap();
        prop_assert!(close(&t.mode_n_product(&a, mode).unwrap(), &expect, 1e-12));
    }

    #[test]
    fn products_along_distinct_modes_commute(shape in prop::collection::vec(1usize..5, 2..5), picks in (0usize..8, 0usize..8), rows in (1usize..4, 1usize..4), seed in any::<u64>()) {
        let r = shape.len();
        let m = 1 + picks.0 % r;
        let n = 1 + (m + picks.1 % (r - 1)) % r;
        prop_assume!(m != n);
        let t = random_tensor(&shape, seed);
        let a = random_tensor(&[rows.0, shape[m - 1]], seed ^ 2);
        let b = random_tensor(&[rows.1, shape[n - 1]], seed ^ 3);
        let ab = t.mode_n_product(&a, m).unwrap().mode_n_product(&b, n).unwrap();
        let ba = t.mode_n_product(&b, n).unwrap().mode_n_product(&a, m).unwrap();
        prop_assert!(close(&ab, &ba, 1e-12));
    }

    #[test]
    fn sign_entries_are_scaled_signs_and_reproducible(seed in any::<u64>(), rows in 1usize..9, cols in 1usize..9) {
        let u = SignMatrix::new(seed, rows, cols).unwrap().materialize();
        let again = SignMatrix::new(seed, rows, cols).unwrap().materialize();
        prop_assert_eq!(&u, &again);
        let s = 1.0 / (rows as f64).sqrt();
        prop_assert!(u.data().iter().all(|&v| v == s || v == -s));
    }

    #[test]
    fn sk_fc_is_affine_in_its_input(d1 in 1usize..7, d2 in 1usize..7, k in 1usize..4, ell in 1usize..4, seed in any::<u64>(), alpha in -2.0f64..2.0) {
        let layer = SkFc::init(d1, d2, k, ell, seed).unwrap();
        let x = random_tensor(&[d2], seed ^ 4);
        let y = random_tensor(&[d2], seed ^ 5);
        let mut mix = x.clone();
        mix.axpy(alpha, &y).unwrap();
        let f = |v: &Tensor| {
            let mut out = layer.forward(v).unwrap();
            out.axpy(-1.0, layer.bias()).unwrap();
            out
        };
        let mut expect = f(&x);
        expect.axpy(alpha, &f(&y)).unwrap();
        prop_assert!(close(&f(&mix), &expect, 1e-12));
    }

    #[test]
    fn sk_conv_is_linear_without_bias(h in 2usize..6, w in 2usize..6, c in 1usize..3, out in 1usize..3, kk in 1usize..3, k in 1usize..3, ell in 1usize..3, pad in 0usize..2, seed in any::<u64>(), alpha in -2.0f64..2.0) {
        let g = ConvGeometry::new(h, w, c, kk, kk, out, 1, pad).unwrap();
        let layer = SkConv::init(g, k, ell, false, seed).unwrap();
        let x = random_tensor(&[h, w, c], seed ^ 6);
        let y = random_tensor(&[h, w, c], seed ^ 7);
        let mut mix = x.clone();
        mix.axpy(alpha, &y).unwrap();
        let mut expect = layer.forward(&x).unwrap();
        expect.axpy(alpha, &layer.forward(&y).unwrap()).unwrap();
        prop_assert!(close(&layer.forward(&mix).unwrap(), &expect, 1e-12));
        prop_assert!(close(&layer.forward(&mix).unwrap(), &layer.forward_elementwise(&mix).unwrap(), 1e-12));
    }

    #[test]
    fn budget_rule_agrees_with_counted_weights(d1 in 1usize..40, d2 in 1usize..40, k in 1usize..12, ell in 1usize..5) {
        let fc = SkFc::init(d1, d2, k, ell, 0).unwrap();
        prop_assert_eq!(sketch_within_budget(d1, d2, k, ell), fc.param_count().weights <= d1 * d2);
        let g = ConvGeometry::new(5, 5, d2.min(6), 3, 3, d1.min(6), 1, 1).unwrap();
        let conv = SkConv::init(g, k, ell, false, 0).unwrap();
        let dense = Layer::SkConv(conv.clone()).dense_equivalent().weights;
        prop_assert_eq!(sketch_within_budget(g.out_channels, g.in_channels, k, ell), conv.param_count().weights <= dense);
    }

    #[test]
    fn dense_conv_matches_direct_summation(h in 1usize..7, w in 1usize..7, c in 1usize..3, out in 1usize..3, kh in 1usize..4, kw in 1usize..4, stride in 1usize..3, pad in 0usize..2, seed in any::<u64>()) {
        let g = ConvGeometry::new(h, w, c, kh, kw, out, stride, pad);
        prop_assume!(g.is_ok());
        let g = g.unwrap();
        let kernel = random_tensor(&g.kernel_shape(), seed);
        let x = random_tensor(&[h, w, c], seed ^ 8);
        let layer = DenseConv::new(g, kernel.clone(), Tensor::zeros(&[out])).unwrap();
        prop_assert!(close(&layer.forward(&x).unwrap(), &conv_direct(&x, &kernel, &g).unwrap(), 1e-12));
    }

    #[test]
    fn idx_images_round_trip_at_byte_precision(n in 1usize..4, h in 1usize..5, w in 1usize..5, c in 1usize..4, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 1);
        let images: Vec<Tensor> = (0..n)
            .map(|_| Tensor::from_fn(&[h, w, c], |_| rng.gen_range(0u8..=255) as f64 / 255.0))
            .collect();
        let mut bytes = Vec::new();
        write_idx_images(&images, &mut bytes).unwrap();
        prop_assert_eq!(read_idx_images(&bytes).unwrap(), images);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(d2 in 1usize..9, d1 in 1usize..9, k in 1usize..4, ell in 1usize..4, seed in any::<u64>()) {
        let net = Network::new(
            vec![d2],
            vec![
                Layer::SkFc(SkFc::init(d1, d2, k, ell, seed).unwrap()),
                Layer::Relu,
                Layer::DenseFc(DenseFc::init(2, d1, seed ^ 9)),
            ],
        )
        .unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        let back = read_checkpoint(&bytes).unwrap();
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        prop_assert_eq!(&bytes, &again);
        let x = random_tensor(&[d2], seed);
        prop_assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
    }

    #[test]
    fn relative_error_is_symmetric_and_vanishes_only_on_equality(a in prop::collection::vec(-5.0f64..5.0, 1..10), shift in 0.0f64..1.0) {
        let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let ab = relative_error(&a, &b);
        prop_assert_eq!(ab, relative_error(&b, &a));
        prop_assert_eq!(relative_error(&a, &a), 0.0);
        prop_assert!((ab > 0.0) == (shift > 0.0));
        prop_assert!(ab <= 2.0);
    }
}
