#![allow(dead_code)]

use polhdr_core::forward::{reference_hdr, simulate_capture, SensorModel};
use polhdr_core::mosaic::{demux, Channel};
use polhdr_core::{Image2D, PolarityStack, PolarizerRig, SceneLight};

/// Smooth radiance field spanning `decades` orders of magnitude above `base`,
/// with some texture so SSIM and mode estimation see structure.
pub fn hdr_radiance(w: usize, h: usize, base: f64, decades: f64) -> Image2D {
    Image2D::from_fn(w, h, |x, y| {
        let u = x as f64 / (w.max(2) - 1) as f64;
        let v = y as f64 / (h.max(2) - 1) as f64;
        let texture = 0.5 + 0.5 * ((17.0 * u).sin() * (11.0 * v).cos());
        let f = (0.75 * u + 0.25 * texture).clamp(0.0, 1.0);
        base * 10f64.powf(decades * f)
    })
    .unwrap()
}

pub struct Capture {
    pub stack: PolarityStack,
    pub reference: Image2D,
}

pub fn capture(scene: &SceneLight, rig: &PolarizerRig, sensor: &SensorModel, time: f64, seed: u64) -> Capture {
    let frame = simulate_capture(scene, rig, sensor, time, seed).unwrap();
    Capture {
        stack: demux(&frame, Channel::Luma).unwrap(),
        reference: reference_hdr(scene, rig, sensor, time).unwrap(),
    }
}

/// Angle truth for each polarity, canonicalized like the estimator's output.
pub fn true_angles(phi: f64) -> [f64; 4] {
    polhdr_core::calibrate::ExposureEstimate::from_phi(phi).theta_hat
}
