mod common;

use common::{random_mask, rng, uniform, ThresholdSegmenter};
use gradmorph::data::{generate_synthetic, netpbm, SynthConfig};
use gradmorph::graph::{softmax_channels, Graph, Padding};
use gradmorph::kde::gaussian_kde_auto;
use gradmorph::losses::{ssim, translation_loss, TranslationLossConfig};
use gradmorph::metrics::{dice, fnr, fpr, Summary};
use gradmorph::optim::{AdadeltaConfig, AdadeltaState};
use gradmorph::params::ParamGrads;
use gradmorph::perturb::{compute_perturbation, PerturbConfig, Termination};
use gradmorph::segnet::{build_segnet, seg_logits, SegNetConfig};
use gradmorph::translator::{build_translator, TranslatorConfig};
use gradmorph::{LabelMap, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let n = shape.iter().product::<usize>();
    prop::collection::vec(lo..hi, n).prop_map(move |v| Tensor::new(shape.clone(), v).unwrap())
}

fn mask_pair() -> impl Strategy<Value = (LabelMap, LabelMap)> {
    (1usize..10, 1usize..10).prop_flat_map(|(h, w)| {
        let m = move || prop::collection::vec(0u8..2, h * w).prop_map(move |v| LabelMap::new(h, w, v).unwrap());
        (m(), m())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one(logits in tensor(vec![4, 3, 5], -30.0, 30.0)) {
        let p = softmax_channels(&logits).unwrap();
        for pixel in 0..15 {
            let s: f64 = (0..4).map(|c| p.data()[c * 15 + pixel]).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_and_backward_repeat_bit_for_bit(x in tensor(vec![2, 6, 6], -1.0, 1.0), k in tensor(vec![3, 2, 3, 3], -1.0, 1.0)) {
        let run = || {
            let mut g = Graph::new();
            let (xv, kv, bv) = (g.leaf(x.clone()), g.leaf(k.clone()), g.constant(Tensor::zeros([3])));
            let y = g.conv2d(xv, kv, bv, Padding::Same).unwrap();
            let y = g.relu(y);
            let y = g.maxpool2d(y).unwrap();
            let s = g.sum(y);
            let grads = g.backward(s).unwrap();
            (g.value(s).clone(), grads.get(xv).unwrap().clone(), grads.get(kv).unwrap().clone())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn rates_in_unit_interval_and_dice_symmetric((p, g) in mask_pair()) {
        for v in [dice(&p, &g, 1).unwrap(), fpr(&p, &g, 1).unwrap(), fnr(&p, &g, 1).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(dice(&p, &g, 1).unwrap(), dice(&g, &p, 1).unwrap());
    }

    #[test]
    fn ssim_identity_symmetry_and_bound(a in tensor(vec![1, 10, 10], -1.0, 2.0), b in tensor(vec![1, 10, 10], -1.0, 2.0)) {
        let cfg = TranslationLossConfig { ssim_window: 4, ..TranslationLossConfig::default() };
        prop_assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() <= 1e-12);
        let ab = ssim(&a, &b, &cfg).unwrap();
        prop_assert_eq!(ab, ssim(&b, &a, &cfg).unwrap());
        prop_assert!(ab.abs() <= 1.0);
    }

    #[test]
    fn translation_loss_zero_only_at_target(a in tensor(vec![1, 8, 8], 0.0, 1.0), bump in 0usize..64, size in 1e-3f64..1.0, lambda in 0.01f64..10.0) {
        let cfg = TranslationLossConfig { lambda, ssim_window: 4, ..TranslationLossConfig::default() };
        prop_assert!(translation_loss(&a, &a, &cfg).unwrap().abs() <= 1e-12);
        let mut v = a.to_vec();
        v[bump] += size;
        let b = Tensor::new([1, 8, 8], v).unwrap();
        prop_assert!(translation_loss(&b, &a, &cfg).unwrap() > 0.0);
    }

    #[test]
    fn kde_is_a_density(samples in prop::collection::vec(-5.0f64..5.0, 2..200)) {
        prop_assume!(samples.iter().any(|&s| s != samples[0]));
        let c = gaussian_kde_auto(&samples, 256).unwrap();
        prop_assert!(c.density.iter().all(|&d| d >= 0.0));
        prop_assert!((c.integral() - 1.0).abs() <= 0.01);
    }

    #[test]
    fn summary_matches_two_pass(values in prop::collection::vec(-1e3f64..1e3, 2..100)) {
        let s = Summary::of(&values).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        prop_assert!((s.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        prop_assert!((s.std_err - (var / n).sqrt()).abs() <= 1e-12 * s.std_err.max(1.0));
    }

    #[test]
    fn adadelta_keeps_parameters_finite(values in prop::collection::vec(-1e6f64..1e6, 1..20), grads in prop::collection::vec(-1e6f64..1e6, 1..20)) {
        let n = values.len().min(grads.len());
        let mut params = gradmorph::params::Params::new();
        params.insert("w", Tensor::new([n], values[..n].to_vec()).unwrap());
        let mut g = ParamGrads::default();
        g.insert("w", grads[..n].to_vec());
        let mut opt = AdadeltaState::new(AdadeltaConfig::default());
        for _ in 0..5 {
            opt.step(&mut params, &g).unwrap();
        }
        prop_assert!(params.is_finite());
    }

    #[test]
    fn pgm_quantization_is_the_only_loss(img in tensor(vec![1, 5, 7], 0.0, 1.0), labels in prop::collection::vec(0u8..3, 35)) {
        let back = netpbm::read_image(&netpbm::write_image(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-15);
        }
        let map = LabelMap::new(5, 7, labels).unwrap();
        prop_assert_eq!(netpbm::read_label_map(&netpbm::write_label_map(&map, 3), 3).unwrap(), map);
    }

    /// x <- x + gamma per step on a single pixel that should be foreground.
    #[test]
    fn threshold_model_closed_form(x0 in -5.0f64..-0.01, gamma in 0.05f64..2.0, weight in 0.1f64..10.0) {
        let model = ThresholdSegmenter { weight };
        let cfg = PerturbConfig { gamma, max_iters: 1000, dice_tolerance: 0.995 };
        let image = Tensor::new([1, 1, 1], vec![x0]).unwrap();
        let res = compute_perturbation(&model, &image, &LabelMap::filled(1, 1, 1), &cfg).unwrap();
        let (mut delta, mut steps) = (0.0, 0);
        while x0 + delta <= 0.0 {
            delta -= -gamma;
            steps += 1;
        }
        prop_assert_eq!(res.delta_total.data()[0], delta);
        prop_assert_eq!(res.terminated_by, Termination::Tolerance);
        prop_assert_eq!(res.trace.len(), steps + 1);
        prop_assert_eq!(res.perturbed_image.data()[0], x0 + res.delta_total.data()[0]);
        prop_assert!(res.final_dice >= cfg.dice_tolerance);
    }

    /// Strictly correct pixels are a fixed point: no step is taken.
    #[test]
    fn correct_input_is_fixed_point(values in prop::collection::vec(prop_oneof![-1.0f64..-0.01, 0.01f64..1.0], 16)) {
        let model = ThresholdSegmenter { weight: 1.0 };
        let image = Tensor::new([1, 4, 4], values.clone()).unwrap();
        let gt = LabelMap::new(4, 4, values.iter().map(|&v| (v > 0.0) as u8).collect()).unwrap();
        let res = compute_perturbation(&model, &image, &gt, &PerturbConfig::default()).unwrap();
        prop_assert_eq!(res.terminated_by, Termination::AlreadyCorrect);
        prop_assert!(res.delta_total.data().iter().all(|&d| d == 0.0));
        prop_assert_eq!(res.trace.len(), 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn predict_is_argmax_of_logits(seed in 0u64..1000, size in 1usize..4) {
        let cfg = SegNetConfig { depth: 2, base_channels: 4, ..SegNetConfig::default() };
        let model = build_segnet(cfg, seed).unwrap();
        let image = uniform(&[1, 4 * size, 4 * size], 0.0, 1.0, &mut rng(seed));
        let logits = seg_logits(&model, &image).unwrap();
        prop_assert_eq!(model.predict(&image).unwrap(), LabelMap::argmax(&logits).unwrap());
    }

    #[test]
    fn translator_preserves_shape(h in 1usize..5, w in 1usize..5, seed in 0u64..100) {
        let cfg = TranslatorConfig { growth_channels: 3, layers_per_block: 1, ..TranslatorConfig::default() };
        let model = build_translator(cfg, seed).unwrap();
        let image = uniform(&[1, 4 * h, 4 * w], 0.0, 1.0, &mut rng(seed));
        let out = model.translate(&image).unwrap();
        prop_assert_eq!(out.shape(), image.shape());
    }

    #[test]
    fn perturbation_terminates_within_budget(seed in 0u64..1000, gamma in 0.05f64..1.0, k in 1usize..12) {
        let model = build_segnet(SegNetConfig { depth: 1, base_channels: 3, ..SegNetConfig::default() }, seed).unwrap();
        let mut r = rng(seed);
        let image = uniform(&[1, 8, 8], 0.0, 1.0, &mut r);
        let gt = random_mask(8, 8, 2, &mut r);
        let cfg = PerturbConfig { gamma, max_iters: k, dice_tolerance: 0.995 };
        let res = compute_perturbation(&model, &image, &gt, &cfg).unwrap();
        prop_assert!(res.trace.len() <= k);
        if res.terminated_by == Termination::Tolerance {
            prop_assert!(res.final_dice >= cfg.dice_tolerance);
        }
        let gap = res.perturbed_image.sub(&image).unwrap().sub(&res.delta_total).unwrap().linf_norm();
        prop_assert!(gap <= 1e-12);
    }

    #[test]
    fn synthetic_generation_is_deterministic(seed in 0u64..10_000) {
        let cfg = SynthConfig { count: 6, image_size: 16, seed, ..SynthConfig::default() };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        prop_assert_eq!(&a.train, &b.train);
        prop_assert_eq!(&a.test, &b.test);
        for t in &a.test {
            prop_assert!(a.train.iter().all(|s| s.id != t.id));
        }
    }
}
