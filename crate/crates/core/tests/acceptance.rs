//! Acceptance suite. Each test covers one numbered criterion and prints a
//! single `PASS`/`FAIL` line (run with `--nocapture` to see the lines for
//! passing criteria too).

mod common;

use std::time::Instant;

use common::oracle;
use depthkit::depthio::DepthSample;
use depthkit::evalkit::{
    evaluate_affine_invariant, gradient_matching_loss, ssi_loss, total_loss, DEFAULT_TAU,
};
use depthkit::filterpipe::{apply_policy, FilterPolicy};
use depthkit::quality::{score_sample, HistogramRange, QualityScores, ScoreOptions};
use depthkit::sdt::count::{count_flops, count_params, FlopsOptions};
use depthkit::sdt::ops::{dysample2x, FeatureMap};
use depthkit::sdt::params::{init_params, Conv2d, DecoderParams};
use depthkit::sdt::tokens::synthetic_tokens;
use depthkit::sdt::{forward, DecoderConfig};
use rand::Rng;

fn check(name: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    match std::panic::catch_unwind(body) {
        Ok(()) => println!("acceptance {name}: PASS"),
        Err(e) => {
            println!("acceptance {name}: FAIL");
            std::panic::resume_unwind(e);
        }
    }
}

const FAR: f64 = 100.0;

fn options() -> ScoreOptions {
    ScoreOptions { k: 20, range: HistogramRange::Fixed { lo: 0.0, hi: FAR } }
}

#[test]
fn criterion_01_metric_oracle_equivalence() {
    check("01 metric-oracle-equivalence (<=1e-9 over >=1000 maps, <10s)", || {
        let start = Instant::now();
        let mut rng = common::rng(101);
        let mut checked = 0usize;
        let mut trial = 0usize;
        while checked < 1000 {
            let w = 8 + (trial % 25);
            let h = 8 + ((trial * 7) % 25);
            trial += 1;
            let sample = common::random_sample(&mut rng, w, h, FAR);
            let Ok(got) = score_sample(&sample, &options()) else { continue };
            let want = oracle::score(&sample.depth, &sample.valid, w, h, 20, 0.0, FAR);
            assert!((got.s_chi2 - want.s_chi2).abs() <= 1e-9);
            assert!((got.s_conc - want.s_conc).abs() <= 1e-9);
            assert!((got.s_range - want.s_range).abs() <= 1e-9);
            assert!((got.s_dist - want.s_dist).abs() <= 1e-9);
            if want.s_grad.is_nan() {
                assert!(got.s_grad.is_nan());
            } else {
                assert!((got.s_grad - want.s_grad).abs() <= 1e-9);
                assert!((got.s_total - want.s_total).abs() <= 1e-9);
            }
            checked += 1;
        }
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 10.0, "oracle equivalence took {elapsed:.2}s");
    });
}

#[test]
fn criterion_02_closed_form_spot_checks() {
    check("02 closed-form-spot-checks (tol 1e-9)", || {
        // constant map: all mass in one bin of 20.
        // chi2/N = ((N - N/20)^2/(N/20) + 19*(N/20)) / N = 19 exactly, so
        // S_chi2 = exp(-19); the independent oracle confirms the value.
        let n = 400usize;
        let sample = DepthSample::from_depth("const", 20, 20, vec![7.0; n], "d", FAR);
        let s = score_sample(&sample, &options()).unwrap();
        let counts = oracle::histogram(&sample.depth, &sample.valid, 20, 0.0, FAR);
        assert!((s.s_chi2 - oracle::chi2_score(&counts)).abs() <= 1e-12);
        assert!((s.s_chi2 - (-19.0f64).exp()).abs() <= 1e-9, "s_chi2 {}", s.s_chi2);
        assert!(s.s_conc.abs() <= 1e-9, "s_conc {}", s.s_conc);
        assert!((s.s_range - 0.05).abs() <= 1e-9, "s_range {}", s.s_range);

        // uniform histogram: every bin equally occupied -> S_dist = 1
        let depth: Vec<f64> = (0..400).map(|i| (i / 20) as f64 * 5.0 + 2.5).collect();
        let sample = DepthSample::from_depth("uni", 20, 20, depth, "d", FAR);
        let s = score_sample(&sample, &options()).unwrap();
        assert!((s.s_chi2 - 1.0).abs() <= 1e-9);
        assert!((s.s_conc - 1.0).abs() <= 1e-9);
        assert!((s.s_range - 1.0).abs() <= 1e-9);
        assert!((s.s_dist - 1.0).abs() <= 1e-9, "s_dist {}", s.s_dist);

        // constant-slope plane -> S_grad = 1
        let depth: Vec<f64> = (0..400).map(|i| 1.0 + 0.125 * (i % 20) as f64).collect();
        let sample = DepthSample::from_depth("plane", 20, 20, depth, "d", FAR);
        let s = score_sample(&sample, &options()).unwrap();
        assert!((s.s_grad - 1.0).abs() <= 1e-9, "s_grad {}", s.s_grad);
    });
}

#[test]
fn criterion_03_filter_retention() {
    check("03 filter-retention (10k uniform -> kept in [0.62, 0.66], <5s)", || {
        let start = Instant::now();
        let mut rng = common::rng(303);
        let scores: Vec<QualityScores> = (0..10_000)
            .map(|i| {
                let s_dist: f64 = rng.random();
                let s_grad: f64 = rng.random();
                QualityScores {
                    id: format!("s{i:05}"),
                    dataset: "synthetic".into(),
                    valid_ratio: 1.0,
                    s_chi2: s_dist,
                    s_conc: s_dist,
                    s_range: s_dist,
                    s_dist,
                    s_grad,
                    s_total: (s_dist + s_grad) / 2.0,
                }
            })
            .collect();
        let verdict = apply_policy(&scores, &FilterPolicy::default()).unwrap();
        let kept = verdict.iter().filter(|(k, _)| *k).count() as f64 / 10_000.0;
        assert!((0.62..=0.66).contains(&kept), "kept fraction {kept}");
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 5.0, "retention check took {elapsed:.2}s");
    });
}

#[test]
fn criterion_04_affine_invariance_of_evaluation() {
    check("04 eval-affine-invariance (100 maps: absrel<=1e-6, delta1=1)", || {
        let mut rng = common::rng(404);
        for trial in 0..100 {
            let n = 32 * 32;
            let gt: Vec<f64> = (0..n).map(|_| 0.3 + rng.random::<f64>() * 95.0).collect();
            let a = 0.1 + rng.random::<f64>() * 8.0;
            let b = rng.random::<f64>() * 3.0 - 1.0;
            let pred: Vec<f64> = gt.iter().map(|g| a / g + b).collect();
            let mask = vec![true; n];
            let res = evaluate_affine_invariant(&pred, &gt, &mask, FAR, DEFAULT_TAU).unwrap();
            assert!(res.absrel <= 1e-6, "trial {trial}: absrel {}", res.absrel);
            assert_eq!(res.delta1, 1.0, "trial {trial}");
        }
    });
}

#[test]
fn criterion_05_loss_contracts() {
    check("05 loss-contracts (affine -> 0; total = ssi + 2*gm)", || {
        let mut rng = common::rng(505);
        for _ in 0..50 {
            let n = 8 * 8;
            let gt: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
            let a = 0.2 + rng.random::<f64>() * 4.0;
            let b = rng.random::<f64>() - 0.5;
            let affine: Vec<f64> = gt.iter().map(|g| a * g + b).collect();
            let mask = vec![true; n];
            assert!(ssi_loss(&affine, &gt, &mask).unwrap() <= 1e-10);
            assert!(gradient_matching_loss(&affine, &gt, &mask, 8, 8, 4).unwrap() <= 1e-10);

            let noisy: Vec<f64> = gt.iter().map(|g| g + 0.1 * rng.random::<f64>()).collect();
            let ssi = ssi_loss(&noisy, &gt, &mask).unwrap();
            let gm = gradient_matching_loss(&noisy, &gt, &mask, 8, 8, 4).unwrap();
            let total = total_loss(&noisy, &gt, &mask, 8, 8).unwrap();
            assert_eq!(total, ssi + 2.0 * gm, "1:2 weighting must be exact");
        }
    });
}

#[test]
fn criterion_06_decoder_shape_law_and_latency() {
    check("06 decoder-shape-and-latency (48x48 -> 768x768, <5s single-threaded)", || {
        let config = DecoderConfig::small();
        let params: DecoderParams<f32> = init_params(&config, 606);
        let set = synthetic_tokens::<f32>(&config, (48, 48), 607);
        let start = Instant::now();
        let out = forward(&config, &params, &set).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        assert_eq!(out.channels, 1);
        assert_eq!((out.height, out.width), (768, 768));
        assert!(out.data.iter().all(|v| v.is_finite()));
        assert!(elapsed < 5.0, "forward took {elapsed:.2}s (> 5s budget)");
    });
}

#[test]
fn criterion_07_dysample_bilinear_reduction() {
    check("07 dysample-bilinear-reduction (<=1e-6 over 100 inputs)", || {
        let mut rng = common::rng(707);
        for trial in 0..100 {
            let c = 1 + trial % 4;
            let h = 2 + trial % 6;
            let w = 2 + (trial * 5) % 6;
            let input = FeatureMap {
                channels: c,
                height: h,
                width: w,
                data: (0..c * h * w).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect(),
            };
            let gen = Conv2d {
                weight: vec![0.0; 8 * c],
                bias: vec![0.0; 8],
                in_ch: c,
                out_ch: 8,
                k: 1,
                groups: 1,
            };
            let got = dysample2x(&input, &gen);
            // independent half-pixel bilinear oracle
            for ch in 0..c {
                for oy in 0..2 * h {
                    for ox in 0..2 * w {
                        let sy = ((oy as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (h - 1) as f64);
                        let sx = ((ox as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (w - 1) as f64);
                        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                        let want = (1.0 - fy) * (1.0 - fx) * input.at(ch, y0, x0)
                            + (1.0 - fy) * fx * input.at(ch, y0, x1)
                            + fy * (1.0 - fx) * input.at(ch, y1, x0)
                            + fy * fx * input.at(ch, y1, x1);
                        assert!((got.at(ch, oy, ox) - want).abs() <= 1e-6);
                    }
                }
            }
        }
    });
}

#[test]
fn criterion_08_end_to_end_decoder_oracle() {
    check("08 decoder-naive-oracle (4x4 grid, width 8, <=1e-6)", || {
        let config = DecoderConfig::tiny_for_tests(); // width 8
        let mut params: DecoderParams<f64> = init_params(&config, 808);
        params.fusion_logits = vec![0.7, -0.4, 0.1, 0.9];
        let mut rng = common::rng(809);
        for b in &mut params.upsampler.blocks {
            for w in b.offset_gen.weight.iter_mut().chain(b.offset_gen.bias.iter_mut()) {
                *w = rng.random::<f64>() * 0.3 - 0.15;
            }
        }
        let set = synthetic_tokens(&config, (4, 4), 810);
        let got = forward(&config, &params, &set).unwrap();
        let want = common::naive::forward(&config, &params, &set);
        let mut max_err = 0.0f64;
        for y in 0..64 {
            for x in 0..64 {
                max_err = max_err.max((got.at(0, y, x) - want[0][y][x]).abs());
            }
        }
        assert!(max_err <= 1e-6, "max abs err {max_err}");
    });
}

#[test]
fn criterion_09_parameter_claim() {
    check("09 parameter-claim (exact enumeration; <=0.15x baseline)", || {
        let baselines = [50.83e6, 76.05e6, 99.58e6];
        let configs = [DecoderConfig::small(), DecoderConfig::base(), DecoderConfig::large()];
        for (config, baseline) in configs.iter().zip(baselines) {
            let analytic = count_params(config);
            let enumerated = init_params::<f32>(config, 0).num_params();
            assert_eq!(analytic, enumerated, "{config:?}");
            assert!(
                (analytic as f64) <= 0.15 * baseline,
                "{config:?}: {analytic} params vs 0.15 * {baseline}"
            );
        }
    });
}

#[test]
fn criterion_10_flops_scaling() {
    check("10 flops-scaling (decoder 4.000 exact; full model within 0.5%)", || {
        for config in [DecoderConfig::small(), DecoderConfig::base(), DecoderConfig::large()] {
            let d256 = count_flops(&config, 256, 256, FlopsOptions::default()).unwrap();
            let d512 = count_flops(&config, 512, 512, FlopsOptions::default()).unwrap();
            assert_eq!(d512 / d256, 4.0, "{config:?}: decoder-only ratio must be exact");

            let full = FlopsOptions { include_encoder: true, attention_quadratic: false };
            let f256 = count_flops(&config, 256, 256, full).unwrap();
            let f512 = count_flops(&config, 512, 512, full).unwrap();
            let f1024 = count_flops(&config, 1024, 1024, full).unwrap();
            for ratio in [f512 / f256, f1024 / f512] {
                assert!(
                    (ratio / 4.0 - 1.0).abs() <= 0.005,
                    "{config:?}: full-model ratio {ratio}"
                );
            }
        }
    });
}
