use candle_core::{Device, Tensor};
use maskcycle_core::evaluation::{frechet_distance, FeatureStats};
use maskcycle_core::mask_gen::{decode_png, encode_png};
use maskcycle_core::mask_gen::{sample_multi_rectangles, Mask, MaskScheme, MultiRectParams};
use maskcycle_core::objectives::{cycle_loss, gan_generator_from_scores, GanCriterion, LossWeights};
use maskcycle_core::{Image, RngState};
use proptest::prelude::*;

fn params(size: usize, max_num: u32, min_sum: f64, min_rect: usize, max_rect: usize) -> MultiRectParams {
    let scheme = MaskScheme::MultiRectangles {
        min_max_num_rects: max_num,
        min_sum_rel_area: min_sum,
        min_rect_size: Some(min_rect),
        max_rect_size: Some(max_rect),
    };
    MultiRectParams::resolve(&scheme, size).unwrap()
}

fn arb_params() -> impl Strategy<Value = MultiRectParams> {
    (8usize..=48, 1u32..=6, 0.01f64..0.99)
        .prop_flat_map(|(size, n, s)| (Just(size), Just(n), Just(s), 1usize..=size))
        .prop_flat_map(|(size, n, s, lo)| (Just(size), Just(n), Just(s), Just(lo), lo..=size))
        .prop_map(|(size, n, s, lo, hi)| params(size, n, s, lo, hi))
}

fn arb_mask(size: usize) -> impl Strategy<Value = Mask> {
    proptest::collection::vec(0u8..=1, size * size)
        .prop_map(move |bits| Mask::from_bits(size, bits).unwrap())
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(candle_core::DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn tensor(values: &[f64], shape: (usize, usize, usize, usize)) -> Tensor {
    Tensor::from_slice(values, shape, &Device::Cpu).unwrap()
}

fn mask_tensor(m: &Mask) -> Tensor {
    m.to_tensor(&Device::Cpu).unwrap().to_dtype(candle_core::DType::F64).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn multi_rect_union_guard_and_bounds(p in arb_params(), seed in any::<u64>()) {
        let s = sample_multi_rectangles(&p, &mut RngState::new(seed)).unwrap();
        let n = p.size;
        prop_assert!(s.mask.bits().iter().all(|&b| b <= 1));
        prop_assert!(s.rects.len() as u32 >= s.min_num_rects);
        prop_assert!(s.min_num_rects >= 1 && s.min_num_rects <= p.min_max_num_rects);
        prop_assert!(s.sum_rel_area >= p.min_sum_rel_area);

        // union of the reported rectangles, rebuilt pixel by pixel
        let mut union = vec![0u8; n * n];
        let mut area = 0usize;
        for r in &s.rects {
            prop_assert!(r.i1 <= n && r.j1 <= n);
            prop_assert!(r.height() >= p.min_rect_size && r.height() <= p.max_rect_size);
            prop_assert!(r.width() >= p.min_rect_size && r.width() <= p.max_rect_size);
            area += r.height() * r.width();
            for i in r.i0..r.i1 {
                for j in r.j0..r.j1 {
                    union[i * n + j] = 1;
                }
            }
        }
        prop_assert_eq!(s.mask.bits(), union.as_slice());
        prop_assert!((s.sum_rel_area - area as f64 / (n * n) as f64).abs() < 1e-12);
    }

    #[test]
    fn multi_rect_stops_as_soon_as_both_conditions_hold(p in arb_params(), seed in any::<u64>()) {
        let s = sample_multi_rectangles(&p, &mut RngState::new(seed)).unwrap();
        let n = (p.size * p.size) as f64;
        let k = s.rects.len();
        // every rectangle adds at least minRect² / size², which bounds the count
        let by_area = (p.min_sum_rel_area * n / (p.min_rect_size * p.min_rect_size) as f64).ceil() as usize;
        prop_assert!(k <= (p.min_max_num_rects as usize).max(by_area));
        // one rectangle fewer would have failed the guard
        let without_last: f64 = s.rects[..k - 1]
            .iter()
            .map(|r| (r.height() * r.width()) as f64 / n)
            .sum();
        prop_assert!(((k - 1) as u32) < s.min_num_rects || without_last < p.min_sum_rel_area);
    }

    #[test]
    fn mask_png_round_trip(m in (1usize..=40).prop_flat_map(arb_mask)) {
        let back = decode_png(&encode_png(&m).unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn masked_and_context_parts_sum_to_image(
        m in arb_mask(6),
        data in proptest::collection::vec(-1.0f32..=1.0, 3 * 36),
    ) {
        let a = Image::new(3, 6, 6, data).unwrap();
        let inside = m.apply(&a).unwrap();
        let outside = m.invert().apply(&a).unwrap();
        for k in 0..a.data().len() {
            prop_assert_eq!(inside.data()[k] + outside.data()[k], a.data()[k]);
        }
    }

    #[test]
    fn cycle_partition_identity_at_half_weight(
        m in arb_mask(5),
        a in proptest::collection::vec(-1.0f64..=1.0, 2 * 25),
        b in proptest::collection::vec(-1.0f64..=1.0, 2 * 25),
    ) {
        let ta = tensor(&a, (1, 2, 5, 5));
        let tb = tensor(&b, (1, 2, 5, 5));
        let w = LossWeights { lambda_cyc_m: 0.5, ..LossWeights::default() };
        let got = scalar(&cycle_loss(&ta, &tb, &mask_tensor(&m), &w).unwrap());
        let plain: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 50.0;
        prop_assert!((got - 0.5 * plain).abs() < 1e-12);
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn cycle_loss_is_affine_in_region_weight(
        m in arb_mask(4),
        a in proptest::collection::vec(-1.0f64..=1.0, 16),
        b in proptest::collection::vec(-1.0f64..=1.0, 16),
        l in 0.0f64..=1.0,
    ) {
        let (ta, tb, tm) = (tensor(&a, (1, 1, 4, 4)), tensor(&b, (1, 1, 4, 4)), mask_tensor(&m));
        let at = |lam: f64| {
            let w = LossWeights { lambda_cyc_m: lam, ..LossWeights::default() };
            scalar(&cycle_loss(&ta, &tb, &tm, &w).unwrap())
        };
        let (y0, y1, yl) = (at(0.0), at(1.0), at(l));
        prop_assert!((yl - ((1.0 - l) * y0 + l * y1)).abs() < 1e-12);
    }

    #[test]
    fn generator_gan_loss_is_affine_in_masked_weight(
        full in proptest::collection::vec(-2.0f64..=2.0, 4),
        masked in proptest::collection::vec(-2.0f64..=2.0, 4),
        l in 0.0f64..=1.0,
    ) {
        let tf = tensor(&full, (1, 1, 2, 2));
        let tm = tensor(&masked, (1, 1, 2, 2));
        let at = |lam: f64| scalar(&gan_generator_from_scores(&tf, &tm, lam, GanCriterion::LeastSquares).unwrap());
        let (y0, y1, yl) = (at(0.0), at(1.0), at(l));
        prop_assert!((yl - ((1.0 - l) * y0 + l * y1)).abs() < 1e-12);
        prop_assert!(y0 >= 0.0 && y1 >= 0.0);
    }

    #[test]
    fn frechet_symmetric_and_zero_on_self(
        rows_p in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 4), 6),
        rows_q in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 4), 6),
    ) {
        let p = FeatureStats::from_features(&rows_p, "t").unwrap();
        let q = FeatureStats::from_features(&rows_q, "t").unwrap();
        let pq = frechet_distance(&p, &q).unwrap();
        let qp = frechet_distance(&q, &p).unwrap();
        prop_assert!(pq >= 0.0);
        prop_assert!((pq - qp).abs() <= 1e-6 * pq.max(1.0));
        prop_assert!(frechet_distance(&p, &p).unwrap() < 1e-6);
    }

    #[test]
    fn frechet_grows_with_mean_separation(
        dir in proptest::collection::vec(-1.0f64..1.0, 3),
        t1 in 0.0f64..5.0,
        dt in 0.01f64..5.0,
    ) {
        prop_assume!(dir.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let stats = |t: f64| FeatureStats {
            mu: dir.iter().map(|v| v * t).collect(),
            sigma: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            n: 10,
            extractor_id: "t".into(),
        };
        let origin = stats(0.0);
        let near = frechet_distance(&origin, &stats(t1)).unwrap();
        let far = frechet_distance(&origin, &stats(t1 + dt)).unwrap();
        prop_assert!(far > near);
    }
}
