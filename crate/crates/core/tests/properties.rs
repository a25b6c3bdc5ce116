//! Randomized invariants across the library.

mod common;

use std::sync::Arc;

use common::{max_diff, random, rng};
use proptest::prelude::*;
use unext::analysis::{count_flops, count_params, layer_plan, LayerKind};
use unext::arch::{Ablation, DepthVariant, ShiftAxes};
use unext::io::checkpoint::{from_bytes, to_bytes};
use unext::io::synth_dataset;
use unext::nn::{ConvGeometry, NormMode, ShiftAxis};
use unext::train::{bce_dice_loss, cosine_lr, f1_iou, train_model, Adam, TrainPlan};
use unext::{build_model, Model, Tape, Tensor, UNeXtConfig};

fn small_cfg(widths: [usize; 5]) -> UNeXtConfig {
    let mut cfg = UNeXtConfig::custom(widths);
    cfg.hidden_dim = 2 * widths[4];
    cfg
}

fn widths() -> impl Strategy<Value = [usize; 5]> {
    prop::array::uniform5(2usize..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flatten_round_trip(data in prop::collection::vec(-1e6f64..1e6, 1..64)) {
        let n = data.len();
        let t = Tensor::from_slice(&[1, n], &data).unwrap();
        prop_assert_eq!(t.flatten(), data);
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..6, k in 1usize..6, l in 1usize..6, n in 1usize..6) {
        let mut r = rng(seed);
        let tape = Tape::<f64>::disabled();
        let a = tape.constant(random(&[m, k], &mut r));
        let b = tape.constant(random(&[k, l], &mut r));
        let c = tape.constant(random(&[l, n], &mut r));
        let left = tape.matmul(&tape.matmul(&a, &b).unwrap(), &c).unwrap();
        let right = tape.matmul(&a, &tape.matmul(&b, &c).unwrap()).unwrap();
        let scale = left.value().data().iter().fold(1.0f64, |s, v| s.max(v.abs()));
        prop_assert!(max_diff(left.value().data(), right.value().data()) / scale < 1e-5);
    }

    #[test]
    fn gradients_are_linear_in_the_loss(seed in any::<u64>()) {
        let mut r = rng(seed);
        let w0 = Arc::new(random(&[2, 3, 4, 4], &mut r));
        let k = random(&[3, 3, 3, 3], &mut r);
        let losses = |which: u8| {
            let tape = Tape::<f64>::new();
            let w = tape.param("w", w0.clone());
            let y = tape.conv2d(&w, &tape.constant(k.clone()), None, ConvGeometry::SAME_3X3).unwrap();
            let a = tape.sum(&tape.gelu(&y));
            let b = tape.sum(&tape.mul(&w, &w).unwrap());
            let loss = match which {
                0 => a,
                1 => b,
                _ => tape.add(&a, &b).unwrap(),
            };
            tape.backward(&loss).unwrap().get("w").unwrap().clone()
        };
        let (ga, gb, gab) = (losses(0), losses(1), losses(2));
        let sum = ga.zip_map(&gb, |p, q| p + q).unwrap();
        prop_assert!(max_diff(sum.data(), gab.data()) < 1e-12);
    }

    #[test]
    fn same_conv_preserves_extent(h in 1usize..9, w in 1usize..9, c in 1usize..4) {
        let mut r = rng((h * 31 + w) as u64);
        let tape = Tape::<f64>::disabled();
        let x = tape.constant(random(&[1, c, h, w], &mut r));
        let k = tape.constant(random(&[2, c, 3, 3], &mut r));
        let y = tape.conv2d(&x, &k, None, ConvGeometry::SAME_3X3).unwrap();
        prop_assert_eq!(y.shape(), &[1, 2, h, w]);
    }

    #[test]
    fn shift_then_unshift_restores_interior(seed in any::<u64>(), parts in 1usize..6, axis in prop::bool::ANY) {
        let mut r = rng(seed);
        let (c, h, w) = (2 * parts, 7, 7);
        let x = random(&[1, c, h, w], &mut r);
        let offsets: Vec<isize> = (0..parts).map(|k| k as isize - (parts as isize / 2)).collect();
        let inverse: Vec<isize> = offsets.iter().map(|o| -o).collect();
        let axis = if axis { ShiftAxis::Width } else { ShiftAxis::Height };
        let tape = Tape::<f64>::disabled();
        let there = tape.shift_channels(&tape.constant(x.clone()), axis, parts, &offsets).unwrap();
        let back = tape.shift_channels(&there, axis, parts, &inverse).unwrap();
        let max_off = offsets.iter().map(|o| o.unsigned_abs()).max().unwrap();
        for ch in 0..c {
            for i in max_off..h - max_off {
                for j in max_off..w - max_off {
                    prop_assert_eq!(back.value().at(&[0, ch, i, j]), x.at(&[0, ch, i, j]));
                }
            }
        }
    }

    #[test]
    fn upsampled_constant_pools_back(v in -5.0f64..5.0, h in 1usize..6, w in 1usize..6) {
        let tape = Tape::<f64>::disabled();
        let up = tape.bilinear_up2(&tape.constant(Tensor::full(&[1, 1, h, w], v).unwrap())).unwrap();
        let d = up.value().data();
        for i in 0..h {
            for j in 0..w {
                let at = |y: usize, x: usize| d[y * 2 * w + x];
                let avg = (at(2 * i, 2 * j) + at(2 * i, 2 * j + 1) + at(2 * i + 1, 2 * j) + at(2 * i + 1, 2 * j + 1)) / 4.0;
                prop_assert_eq!(avg, v);
            }
        }
    }

    #[test]
    fn batchnorm_standardizes(seed in any::<u64>(), n in 1usize..4, c in 1usize..4) {
        let mut r = rng(seed);
        let x = random(&[n, c, 5, 4], &mut r).map(|v| 3.0 * v + 1.5);
        let tape = Tape::<f64>::disabled();
        let (g, b) = (tape.constant(Tensor::ones(&[c]).unwrap()), tape.constant(Tensor::zeros(&[c]).unwrap()));
        let (rm, rv) = (Tensor::zeros(&[c]).unwrap(), Tensor::ones(&[c]).unwrap());
        let (y, _) = tape.batchnorm2d(&tape.constant(x), &g, &b, &rm, &rv, NormMode::Train, 1e-5).unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = (0..n).flat_map(|s| (0..20).map(move |i| (s, i))).map(|(s, i)| y.value().at(&[s, ch, i / 4, i % 4])).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() < 1e-5);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn loss_is_non_negative(seed in any::<u64>(), n in 1usize..3, s in 1usize..6, scale in 0.1f64..30.0) {
        let mut r = rng(seed);
        let z = random(&[n, 1, s, s], &mut r).map(|v| v * scale);
        let y = random(&[n, 1, s, s], &mut r).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        prop_assert!(bce_dice_loss(&z, &y).unwrap() >= 0.0);
    }

    #[test]
    fn f1_bounds_iou(seed in any::<u64>()) {
        let mut r = rng(seed);
        let bin = |t: Tensor<f64>| t.map(|v| if v > 0.3 { 1.0 } else { 0.0 });
        let p = bin(random(&[1, 1, 6, 6], &mut r));
        let t = bin(random(&[1, 1, 6, 6], &mut r));
        let (f1, iou) = f1_iou(&p, &t).unwrap();
        prop_assert!(f1 >= iou);
        prop_assert!((0.0..=1.0).contains(&iou));
    }

    #[test]
    fn cosine_schedule_never_rises(epochs in 1usize..500, lr_max in 1e-5f64..1e-1) {
        let plan = TrainPlan { epochs, lr_max, lr_min: lr_max / 10.0, ..TrainPlan::default() };
        let lrs: Vec<f64> = (0..=epochs).map(|e| cosine_lr(e, &plan).unwrap()).collect();
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_lr_step_is_a_no_op(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut params = indexmap::IndexMap::new();
        params.insert("w".to_string(), Arc::new(random(&[3, 4], &mut r)));
        let before = params["w"].clone();
        let tape = Tape::<f64>::new();
        let w = tape.param("w", params["w"].clone());
        let loss = tape.sum(&tape.mul(&w, &w).unwrap());
        let grads = tape.backward(&loss).unwrap();
        let mut opt = Adam::<f64>::new(0.0);
        opt.step(&mut params, &grads).unwrap();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&params["w"]), bits(&before));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn resolution_survives_the_u_shape(w in widths(), full in prop::bool::ANY, k in 1usize..3, seed in any::<u64>()) {
        let mut cfg = small_cfg(w);
        if !full {
            cfg.depth_variant = DepthVariant::ConvStageOnly;
        }
        let side = if full { 96 * k } else { 8 * (k + 2) };
        let m: Model<f32> = build_model(&cfg, seed).unwrap();
        let x = Tensor::<f32>::full(&[1, 3, side, side], 0.5).unwrap();
        let y = m.infer(&x).unwrap();
        prop_assert_eq!(y.shape(), &[1, 1, side, side]);
    }

    #[test]
    fn counts_agree_and_shifts_are_free(w in widths(), seed in any::<u64>()) {
        let base = small_cfg(w);
        let mut reference = None;
        for ab in Ablation::ALL {
            let cfg = ab.config(&base);
            let m: Model<f32> = build_model(&cfg, seed).unwrap();
            let report = count_params(&m);
            prop_assert!(report.consistent());
            prop_assert_eq!(report.total as usize, m.param_count());
            let cost = count_flops(&m, &[1, 3, 96, 96]).unwrap();
            prop_assert_eq!(cost.params, report.total);
            prop_assert_eq!(cost.macs, cost.rows.iter().map(|r| r.macs).sum::<u64>());
            prop_assert_eq!(cost.params, cost.rows.iter().map(|r| r.params).sum::<u64>());
            if matches!(ab, Ablation::TokMlpPe | Ablation::ShiftedWidth | Ablation::ShiftedHeight | Ablation::ShiftedBoth) {
                let key = (cost.params, cost.macs);
                prop_assert_eq!(*reference.get_or_insert(key), key);
            }
        }
    }

    #[test]
    fn pos_embed_adds_depthwise_params(w in widths()) {
        let base = small_cfg(w);
        let no_pe = Ablation::TokMlpNoPe.config(&base);
        let pe = Ablation::TokMlpPe.config(&base);
        let dw = 4 * base.hidden_dim * (9 + 1);
        let count = |c: &UNeXtConfig| build_model::<f32>(c, 0).unwrap().param_count();
        prop_assert_eq!(count(&pe) - count(&no_pe), dw);
    }

    #[test]
    fn wider_channels_add_params(w in widths(), level in 0usize..5) {
        let cfg = small_cfg(w);
        let mut wider = w;
        wider[level] += 1;
        let mut cfg2 = small_cfg(wider);
        cfg2.hidden_dim = cfg.hidden_dim;
        let count = |c: &UNeXtConfig| build_model::<f32>(c, 0).unwrap().param_count();
        prop_assert!(count(&cfg2) > count(&cfg));
    }

    #[test]
    fn zero_offsets_equal_no_shift(w in widths(), seed in any::<u64>()) {
        let mut zero = small_cfg(w);
        zero.shift_axes = ShiftAxes::Both;
        zero.shift_offsets = vec![0; zero.shift_partitions];
        let mut none = zero.clone();
        none.shift_axes = ShiftAxes::None;
        let x = common::random(&[1, 3, 96, 96], &mut rng(seed)).cast::<f32>();
        let a = build_model::<f32>(&zero, seed).unwrap().infer(&x).unwrap();
        let b = build_model::<f32>(&none, seed).unwrap().infer(&x).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn checkpoint_round_trip(w in widths(), seed in any::<u64>(), full in prop::bool::ANY) {
        let mut cfg = small_cfg(w);
        if !full {
            cfg.depth_variant = DepthVariant::ConvStageOnly;
        }
        let m: Model<f32> = build_model(&cfg, seed).unwrap();
        let bytes = to_bytes(&m, &[("img_size", "96".into())]);
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.model.config(), m.config());
        prop_assert_eq!(back.model.params(), m.params());
        prop_assert_eq!(back.model.buffers(), m.buffers());
        prop_assert_eq!(back.img_size(), Some(96));
    }

    #[test]
    fn conv_macs_scale_quadratically(w in widths()) {
        let cfg = small_cfg(w);
        let a = layer_plan(&cfg, &[1, 3, 128, 128]).unwrap();
        let b = layer_plan(&cfg, &[1, 3, 256, 256]).unwrap();
        let ratio = b.macs_of(LayerKind::Conv) as f64 / a.macs_of(LayerKind::Conv) as f64;
        prop_assert!((ratio - 4.0).abs() < 1e-9);
    }
}

#[test]
fn eval_forward_is_shareable_across_threads() {
    let m: Model<f32> = build_model(&small_cfg([4, 4, 8, 8, 8]), 3).unwrap();
    let x = random(&[1, 3, 96, 96], &mut rng(1)).cast::<f32>();
    let want = m.infer(&x).unwrap();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4).map(|_| s.spawn(|| m.infer(&x).unwrap())).collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), want);
        }
    });
}

#[test]
fn single_sample_overfits() {
    let data = synth_dataset(1, 96, 5).unwrap();
    let mut m: Model<f32> = build_model(&small_cfg([4, 8, 16, 16, 16]), 0).unwrap();
    let plan = TrainPlan { epochs: 300, batch_size: 1, lr_max: 1e-2, lr_min: 1e-2, ..TrainPlan::default() };
    let logs = train_model(&mut m, &data, &[0], &[], &plan, |_| {}).unwrap();
    let last = logs.last().unwrap().train_loss;
    assert!(last < 0.05, "loss after 300 steps: {last}");
}
