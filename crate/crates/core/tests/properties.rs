use paintflow_core::dataset::{balance, balance_corpus, Manifest, PairKind, Ratio};
use paintflow_core::diffusion::ddim_timesteps;
use paintflow_core::edit::quantize;
use paintflow_core::eval::{gram_style_score, masked_region_similarity};
use paintflow_core::image::{dilate, distort_mask, edge_detect, BinaryMask, EdgeConfig, RasterImage};
use paintflow_core::sbr::{self, SbrConfig};
use paintflow_core::tensor::{nn, Graph, Tensor};
use proptest::prelude::*;

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (4usize..24, 4usize..24)
        .prop_flat_map(|(h, w)| (Just(h), Just(w), proptest::collection::vec(any::<bool>(), h * w)))
        .prop_map(|(h, w, bits)| BinaryMask::new(h, w, bits).unwrap())
}

fn image_strategy(max: usize) -> impl Strategy<Value = RasterImage> {
    (2usize..max, 2usize..max)
        .prop_flat_map(|(h, w)| (Just(h), Just(w), proptest::collection::vec(0f32..=1.0, h * w * 3)))
        .prop_map(|(h, w, data)| RasterImage::new(h, w, 3, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distortion_stays_within_six_pixels(mask in mask_strategy(), seed in any::<u64>()) {
        let out = distort_mask(&mask, seed);
        prop_assert!(out.contains(&mask));
        prop_assert!(dilate(&mask, 6.0).contains(&out));
    }

    #[test]
    fn balance_keeps_sorted_subset_in_ratio(nf in 0usize..60, nb in 0usize..60, p in 1u32..6, q in 1u32..4, seed in any::<u64>()) {
        let kinds: Vec<PairKind> = (0..nf).map(|_| PairKind::Foreground).chain((0..nb).map(|_| PairKind::Background)).collect();
        let ratio = Ratio { fg: p, bg: q };
        let (kept, single) = balance(&kinds, ratio, seed);
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(single, nf == 0 || nb == 0);
        let fg = kept.iter().filter(|&&i| kinds[i] == PairKind::Foreground).count();
        let bg = kept.len() - fg;
        if nf > 0 && nb > 0 {
            let (pf, qf) = (p as f64, q as f64);
            if nf as f64 * qf >= nb as f64 * pf {
                prop_assert_eq!(bg, nb);
                prop_assert_eq!(fg, ((nb as f64 * pf / qf).round() as usize).clamp(1, nf));
            } else {
                prop_assert_eq!(fg, nf);
                prop_assert_eq!(bg, ((nf as f64 * qf / pf).round() as usize).clamp(1, nb));
            }
        }
        prop_assert_eq!(balance(&kinds, ratio, seed).0, kept);
    }

    #[test]
    fn manifest_text_round_trips(nf in 1usize..20, nb in 1usize..20, seed in any::<u64>(), val_every in 0usize..4) {
        let items: Vec<(String, PairKind)> = (0..nf)
            .map(|i| (format!("pairs/{i:05}_f"), PairKind::Foreground))
            .chain((0..nb).map(|i| (format!("pairs/{:05}_b", nf + i), PairKind::Background)))
            .collect();
        let m = balance_corpus(&items, Ratio::default(), seed, val_every);
        let parsed = Manifest::parse(&m.to_text()).unwrap();
        prop_assert_eq!(parsed.to_text(), m.to_text());
    }

    #[test]
    fn quantize_is_idempotent(img in image_strategy(12)) {
        let q = quantize(&img);
        prop_assert_eq!(quantize(&q), q.clone());
        for (a, b) in img.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn gram_score_symmetric_and_bounded(a in image_strategy(20), b in image_strategy(20)) {
        let ab = gram_style_score(&a, &b).unwrap();
        prop_assert_eq!(ab, gram_style_score(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((gram_style_score(&a, &a).unwrap() - 1.0).abs() < 1e-6 || gram_style_score(&a, &a).unwrap() == 0.0);
    }

    #[test]
    fn masked_similarity_ignores_outside(img in image_strategy(20), fill in 0f32..=1.0, seed in any::<u64>()) {
        let (h, w) = (img.height(), img.width());
        let mask = BinaryMask::from_fn(h, w, |y, x| (y * 7 + x * 3 + seed as usize % 5) % 4 == 0 || (y == h / 2 && x == w / 2)).unwrap();
        let reference = RasterImage::from_fn(6, 6, 3, |y, x, c| ((y * 3 + x + c) % 5) as f32 / 4.0).unwrap();
        let other = RasterImage::from_fn(h, w, 3, |y, x, c| if mask.get(y, x) { img.get(y, x, c) } else { fill }).unwrap();
        let s = masked_region_similarity(&img, &reference, &mask).unwrap();
        prop_assert_eq!(s, masked_region_similarity(&other, &reference, &mask).unwrap());
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn adain_matches_target_statistics(
        n in 2usize..10, m in 2usize..10, c in 1usize..6, seed in any::<u64>()
    ) {
        let mut r = paintflow_core::rng::seeded(seed);
        let x = Tensor::randn([n, c], 2.0, &mut r);
        let y = Tensor::randn([m, c], 3.0, &mut r);
        let mut g = Graph::new();
        let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
        let out = nn::adain(&mut g, xv, yv, nn::EPS).unwrap();
        let stats = |t: &Tensor, j: usize| {
            let rows = t.shape()[0];
            let col: Vec<f64> = (0..rows).map(|i| t.data()[i * c + j]).collect();
            let mean = col.iter().sum::<f64>() / rows as f64;
            (mean, (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64).sqrt())
        };
        for j in 0..c {
            let (sx, (my, sy), (mo, so)) = (stats(&x, j).1, stats(&y, j), stats(g.value(out), j));
            if sx > 10.0 * nn::EPS {
                prop_assert!((mo - my).abs() < 1e-9);
                prop_assert!((so - sy.max(nn::EPS)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ddim_timesteps_ascend_within_schedule(steps in 1usize..=1000) {
        let ts = ddim_timesteps(1000, steps);
        prop_assert_eq!(ts.len(), steps);
        prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ts[0] >= 1 && *ts.last().unwrap() <= 1000);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stylize_never_worse_than_fill(img in image_strategy(20), seed in any::<u64>()) {
        let cfg = SbrConfig { strokes_per_level: 40, seed, ..SbrConfig::for_image_side(img.height().min(img.width())) };
        let (out, log) = sbr::stylize(&img, &cfg).unwrap();
        prop_assert!(log.residuals_non_increasing());
        prop_assert!(out.mse(&img).unwrap() <= sbr::mean_fill(&img).mse(&img).unwrap() + 1e-12);
        prop_assert_eq!(sbr::replay(&img, &log.strokes), out);
    }

    #[test]
    fn lower_edge_threshold_finds_more(img in image_strategy(24), low in 0.02f64..0.15) {
        let hi = edge_detect(&img, &EdgeConfig { low_threshold: 0.15, ..EdgeConfig::default() }).unwrap();
        let lo = edge_detect(&img, &EdgeConfig { low_threshold: low, ..EdgeConfig::default() }).unwrap();
        prop_assert!(lo.contains(&hi));
    }
}
