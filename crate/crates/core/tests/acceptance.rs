//! Acceptance suite. Each test prints one `AC<n> PASS|FAIL` line; run with
//! `cargo test -p polhdr-core --test acceptance -- --nocapture --test-threads=1`
//! to see them in order.

mod common;

use std::f64::consts::FRAC_PI_2;
use std::time::{Duration, Instant};

use polhdr_core::calibrate::{
    estimate_exposures, log_grid, mode_of_angles, sweep_extinction_error, sweep_trend, ExposureEstimate, SweepScenario,
    ValidityThresholds, DEFAULT_BIN_WIDTH,
};
use polhdr_core::config::PipelineConfig;
use polhdr_core::forward::{jones_through_pair, JonesVector, SensorModel};
use polhdr_core::fusion::{fuse_hdr, FusionParams};
use polhdr_core::imaging::canonical_angle;
use polhdr_core::metrics::{compare, psnr, ssim, MetricReport};
use polhdr_core::mosaic::{compose, demux, remux, BayerSite, Channel, MosaicFrame};
use polhdr_core::pipeline::run_pipeline;
use polhdr_core::{clip, Image2D, LdrImage, Polarity, PolarityStack, PolarizerRig, SceneLight};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, pass: bool, detail: &str) {
    println!("AC{id} {}: {detail}", if pass { "PASS" } else { "FAIL" });
}

#[test]
fn ac1_calibration_round_trip() {
    let (w, h) = (512, 512);
    let radiance = common::hdr_radiance(w, h, 2.0, 4.0);
    let lo = radiance.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = radiance.max_value();
    assert!(hi / lo >= 1e3, "scene spans only {:.2} decades", (hi / lo).log10());
    let scene = SceneLight::unpolarized(radiance);
    let sensor = SensorModel::noiseless(8).unwrap();
    let thresholds = ValidityThresholds::for_bit_depth(8);

    let mut pass = true;
    let mut worst_err = 0.0f64;
    let mut slowest = Duration::ZERO;
    for phi_deg in [5.0f64, 10.0, 30.0, 77.0] {
        let rig = PolarizerRig::ideal(phi_deg.to_radians());
        let cap = common::capture(&scene, &rig, &sensor, 1.0, 0);
        let start = Instant::now();
        let est = estimate_exposures(&cap.stack, &thresholds, DEFAULT_BIN_WIDTH).unwrap();
        let elapsed = start.elapsed();
        slowest = slowest.max(elapsed);
        let truth = common::true_angles(phi_deg.to_radians());
        for p in Polarity::ALL {
            let err = (est.theta_hat[p.index()] - truth[p.index()]).abs().to_degrees();
            worst_err = worst_err.max(err);
            println!(
                "  phi={phi_deg:>4}° {}: theta_hat={:.4}° truth={:.4}° err={err:.4}° ({:?})",
                p.label(),
                est.theta_hat[p.index()].to_degrees(),
                truth[p.index()].to_degrees(),
                est.pair_source[p.index() % 2],
            );
            pass &= err <= 0.25;
        }
        pass &= elapsed < Duration::from_secs(5);
    }
    report(
        1,
        pass,
        &format!("worst |theta_hat - truth| = {worst_err:.4}° (<= 0.25°), slowest calibration {slowest:.2?} (< 5 s)"),
    );
    assert!(pass);
}

#[test]
fn ac2_extinction_sweep() {
    let scenario = SweepScenario::default();
    let mut grid = vec![0.0, 1.0 / 500.0];
    grid.extend(log_grid(1e-4, 1e-1, 40).unwrap());
    let rows = sweep_extinction_error(&grid, &scenario).unwrap();
    let at_zero = rows[0].error_percent;
    let at_500 = rows[1].error_percent;
    let trend = sweep_trend(&rows[2..], 1e-4, 1e-1).unwrap();

    let zero_ok = at_zero < 1e-6;
    let bracket_ok = (2.4..=3.5).contains(&at_500);
    let fit_ok = trend.log_log.r_squared >= 0.95;
    let pass = zero_ok && bracket_ok && fit_ok && trend.monotone;
    report(
        2,
        pass,
        &format!(
            "error(0)={at_zero:.2e}%, error(1/500)={at_500:.3}% in [2.4, 3.5], \
             log-log R²={:.4} (>= 0.95; error-vs-log ρ R²={:.4}), monotone={}",
            trend.log_log.r_squared, trend.semi_log.r_squared, trend.monotone
        ),
    );
    assert!(pass);
}

/// Literal per-pixel weighted merge over the four polarities. Polarities
/// whose exposure is at or below the 1e-6 floor carry no usable signal and
/// are left out entirely.
#[allow(clippy::needless_range_loop)]
fn oracle_merge(stack: &PolarityStack, exposure: [f64; 4], p_min: f64, p_max: f64, eps: f64) -> (Vec<f64>, Vec<u8>) {
    let n = stack.dims().0 * stack.dims().1;
    let mut h = vec![0.0; n];
    let mut cov = vec![0u8; n];
    for px in 0..n {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..4 {
            if exposure[i] <= 1e-6 {
                continue;
            }
            let raw = stack.images()[i].data()[px];
            let w = if raw >= p_min && raw <= p_max { 1.0 } else { 0.0 };
            num += w * (raw / exposure[i]);
            den += w;
            cov[px] += w as u8;
        }
        h[px] = num / (den + eps);
    }
    (h, cov)
}

#[test]
fn ac3_fusion_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let thresholds = ValidityThresholds::for_bit_depth(8);
    let params = FusionParams::default();
    let mut stacks = Vec::new();
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..48usize), rng.random_range(1..48usize));
        let imgs = std::array::from_fn(|_| {
            let data = (0..w * h).map(|_| rng.random_range(0..=255u32) as f64).collect();
            LdrImage::new(Image2D::new(w, h, data).unwrap(), 8).unwrap()
        });
        let phi = rng.random_range(0.0..std::f64::consts::PI);
        stacks.push((PolarityStack::new(imgs).unwrap(), ExposureEstimate::from_phi(phi)));
    }

    let start = Instant::now();
    let fused: Vec<_> = stacks
        .iter()
        .map(|(s, e)| fuse_hdr(s, e, &thresholds, &params).unwrap())
        .collect();
    let elapsed = start.elapsed();

    let mut worst = 0.0f64;
    let mut coverage_ok = true;
    let mut floored = 0;
    for ((stack, est), hdr) in stacks.iter().zip(&fused) {
        let exposure: [f64; 4] = std::array::from_fn(|i| est.theta_hat[i].cos().powi(2));
        let (h, cov) = oracle_merge(stack, exposure, 5.0, 250.0, 1e-6);
        coverage_ok &= cov == hdr.coverage;
        floored += hdr.dropped.len();
        for px in 0..h.len() {
            if cov[px] > 0 {
                let rel = (hdr.image.data()[px] - h[px]).abs() / h[px].abs().max(f64::MIN_POSITIVE);
                worst = worst.max(if h[px] == 0.0 { hdr.image.data()[px].abs() } else { rel });
            }
        }
    }
    let pass = worst <= 1e-9 && coverage_ok && elapsed < Duration::from_secs(1);
    report(
        3,
        pass,
        &format!("max relative deviation {worst:.2e} (<= 1e-9) over 100 stacks, coverage agrees={coverage_ok}, {floored} floored inputs, fusion took {elapsed:.2?} (< 1 s)"),
    );
    assert!(pass);
}

fn end_to_end(config: &PipelineConfig, w: usize, h: usize) -> (f64, usize) {
    let scene = SceneLight::unpolarized(common::hdr_radiance(w, h, 2.0, 4.0));
    let rig = config.rig().unwrap();
    let sensor = config.sensor().unwrap();
    let frame = polhdr_core::forward::simulate_capture(&scene, &rig, &sensor, config.sim_time, config.seed).unwrap();
    let reference = polhdr_core::forward::reference_hdr(&scene, &rig, &sensor, config.sim_time).unwrap();
    let out = run_pipeline(&frame, config, false).unwrap();
    let mask = out.hdr.covered_mask();
    let m = compare(&reference, &out.hdr.image, Some(&mask)).unwrap();
    (m.psnr, m.evaluated_pixel_count)
}

#[test]
fn ac4_end_to_end_reconstruction() {
    let clean = PipelineConfig {
        sim_phi_deg: 30.0,
        sim_rho: 0.0,
        sim_shot_noise: false,
        sim_read_noise: 0.0,
        ..PipelineConfig::default()
    };
    let noisy = PipelineConfig {
        sim_rho: 0.002,
        sim_shot_noise: true,
        seed: 7,
        ..clean.clone()
    };
    let (psnr_clean, n_clean) = end_to_end(&clean, 256, 256);
    let (psnr_noisy, n_noisy) = end_to_end(&noisy, 256, 256);
    let pass = psnr_clean >= 40.0 && psnr_noisy >= 28.0;
    report(
        4,
        pass,
        &format!(
            "noiseless ideal PSNR={psnr_clean:.2} dB (>= 40) on {n_clean} px; \
             8-bit + shot noise + rho=0.002 PSNR={psnr_noisy:.2} dB (>= 28) on {n_noisy} px"
        ),
    );
    assert!(pass);
}

#[test]
fn ac5_robust_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let mut hits = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let truth = rng.random_range(1.0f64..89.0).to_radians();
        let angles: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.3) {
                    rng.random_range(0.0..=FRAC_PI_2)
                } else {
                    // Small symmetric estimation jitter on the inliers.
                    let jitter: f64 = rng.random_range(-0.2f64..0.2).to_radians();
                    (truth + jitter).clamp(0.0, FRAC_PI_2)
                }
            })
            .collect();
        let mode = mode_of_angles(&angles, DEFAULT_BIN_WIDTH).unwrap();
        let err = (mode.angle - truth).abs().to_degrees();
        worst = worst.max(err);
        if err <= 1.0 {
            hits += 1;
        }
    }
    let pass = hits == 100;
    report(
        5,
        pass,
        &format!("{hits}/100 trials within 1° (worst {worst:.3}°) at 30% outliers"),
    );
    assert!(pass);
}

#[test]
fn ac6_degeneracy_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut malus_err = 0.0f64;
    for _ in 0..10_000 {
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let out = jones_through_pair(JonesVector::new(1.0, 0.0), theta, 0.0);
        malus_err = malus_err.max((out.x * out.x + out.y * out.y - theta.cos().powi(2)).abs());
    }
    let malus_ok = malus_err <= 1e-12;

    let (w, h) = (32, 24);
    let raw = Image2D::from_fn(w, h, |_, _| rng.random_range(0..=255u32) as f64).unwrap();
    let frame = MosaicFrame::new(LdrImage::new(raw, 8).unwrap()).unwrap();
    let per_site = BayerSite::ALL.map(|s| demux(&frame, Channel::from(s)).unwrap());
    let composed = compose([&per_site[0], &per_site[1], &per_site[2], &per_site[3]]).unwrap();
    let mosaic_ok = composed == frame
        && BayerSite::ALL
            .iter()
            .zip(&per_site)
            .all(|(s, st)| demux(&remux(st, &[*s]).unwrap(), Channel::from(*s)).unwrap() == *st);

    let clip_ok = (0..10_000).all(|_| {
        let v = rng.random_range(-100.0..400.0);
        clip(clip(v, 255.0), 255.0) == clip(v, 255.0)
    });

    let a = Image2D::from_fn(40, 30, |x, y| ((x * 7 + y * 13) % 50) as f64).unwrap();
    let ssim_ok = ssim(&a, &a, 255.0, None).unwrap() == 1.0;
    let psnr_ok = psnr(&a, &a, 255.0, None).unwrap() == f64::INFINITY;

    let pass = malus_ok && mosaic_ok && clip_ok && ssim_ok && psnr_ok;
    report(
        6,
        pass,
        &format!(
            "Malus max err {malus_err:.1e} (<= 1e-12), mosaic round trip {mosaic_ok}, clip idempotent {clip_ok}, \
             SSIM(a,a)=1 {ssim_ok}, PSNR(a,a)=inf {psnr_ok}"
        ),
    );
    assert!(pass);
}

#[test]
fn ac7_non_reproducibility_documented() {
    // Real-scene numbers need a dataset and camera that are not available;
    // the check here is that reports carry the same metric names so external
    // numbers can be merged and compared.
    let report_json = serde_json::to_value(MetricReport {
        psnr: 25.25,
        ssim: 0.88,
        evaluated_pixel_count: 1,
        masked: false,
        ms_ssim: Some(0.90),
        q_score: Some(7.40),
    })
    .unwrap();
    let names = ["psnr", "ssim", "ms_ssim", "q_score"];
    let pass = names.iter().all(|k| report_json.get(k).is_some());
    report(
        7,
        pass,
        "real-scene table not reproducible without the original dataset/hardware; replaced by AC1-AC6, \
         eval reports use the metric names psnr/ssim/ms_ssim/q_score",
    );
    assert!(pass);
}

#[test]
fn canonical_truth_helper_matches_definition() {
    for phi_deg in [5.0f64, 77.0] {
        let t = common::true_angles(phi_deg.to_radians());
        for p in Polarity::ALL {
            let expected = canonical_angle(p.nominal_angle() - phi_deg.to_radians());
            assert!((t[p.index()] - expected).abs() < 1e-12);
        }
    }
}
