//! Optical forward model: scene light through the front polarizer and the
//! on-sensor polarizer array, then a simple sensor (gain, noise,
//! quantization, clipping).
//!
//! Polarizers are modelled with real Jones vectors. A polarizer with
//! extinction ratio ρ passes amplitude 1 along its transmission axis and
//! `α = √(ρ/(ρ+1))` along its extinction axis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::imaging::{check_rho, clip, max_code_for, Image2D, LdrImage, Polarity, PolarizerRig, SceneLight};
use crate::mosaic::{sensor_position, BayerSite, MosaicFrame, SUPERPIXEL};

/// Number of incident polarization angles averaged to model unpolarized light.
pub const UNPOLARIZED_SAMPLES: usize = 64;

/// Field amplitudes along the front polarizer's transmission (`x`) and
/// extinction (`y`) axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesVector {
    pub x: f64,
    pub y: f64,
}

impl JonesVector {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Linearly polarized light at `angle` from the x axis carrying `intensity`.
    pub fn linear(angle: f64, intensity: f64) -> Self {
        let amp = intensity.max(0.0).sqrt();
        Self {
            x: amp * angle.cos(),
            y: amp * angle.sin(),
        }
    }

    pub fn intensity(self) -> f64 {
        intensity(self)
    }
}

pub fn intensity(e: JonesVector) -> f64 {
    e.x * e.x + e.y * e.y
}

/// Ideal two-polarizer transmission at relative angle `theta`.
pub fn malus_transmission(theta: f64) -> f64 {
    theta.cos().powi(2)
}

/// Amplitude leak along a polarizer's extinction axis.
pub fn alpha_from_rho(rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok((rho / (rho + 1.0)).sqrt())
}

/// Field after the front polarizer (axes x, y) and a sensor polarizer at
/// `theta` from x, both leaking amplitude `alpha`.
///
/// Expanded form of `R(θ)ᵀ · diag(1, α) · R(θ) · diag(1, α) · e0`:
///
/// ```text
/// x = X₀cos²θ + αX₀sin²θ + (α − α²)·Y₀ sinθ cosθ
/// y = α²Y₀cos²θ + αY₀sin²θ + (1 − α)·X₀ sinθ cosθ
/// ```
pub fn jones_through_pair(e0: JonesVector, theta: f64, alpha: f64) -> JonesVector {
    jones_through_polarizers(e0, theta, alpha, alpha)
}

/// As [`jones_through_pair`] with separate leaks for the front and sensor
/// polarizers.
pub fn jones_through_polarizers(e0: JonesVector, theta: f64, alpha_front: f64, alpha_sensor: f64) -> JonesVector {
    let (s, c) = theta.sin_cos();
    let (x0, y1) = (e0.x, alpha_front * e0.y);
    JonesVector {
        x: x0 * (c * c + alpha_sensor * s * s) + y1 * s * c * (1.0 - alpha_sensor),
        y: x0 * s * c * (1.0 - alpha_sensor) + y1 * (s * s + alpha_sensor * c * c),
    }
}

/// Mean transmission of unpolarized light through the pair, as an
/// incoherent average over [`UNPOLARIZED_SAMPLES`] incident angles in `[0, π)`.
pub fn unpolarized_transmission(theta: f64, alpha_front: f64, alpha_sensor: f64) -> f64 {
    let k = UNPOLARIZED_SAMPLES;
    (0..k)
        .map(|i| {
            let beta = i as f64 * std::f64::consts::PI / k as f64;
            intensity(jones_through_polarizers(
                JonesVector::linear(beta, 1.0),
                theta,
                alpha_front,
                alpha_sensor,
            ))
        })
        .sum::<f64>()
        / k as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    bit_depth: u8,
    gain: f64,
    read_noise_sigma: f64,
    shot_noise: bool,
}

impl SensorModel {
    pub fn new(bit_depth: u8, gain: f64, read_noise_sigma: f64, shot_noise: bool) -> Result<Self> {
        if !(1..=16).contains(&bit_depth) {
            return Err(invalid(format!("bit depth {bit_depth} outside 1..=16")));
        }
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(invalid(format!("gain must be positive, got {gain}")));
        }
        if !(read_noise_sigma >= 0.0 && read_noise_sigma.is_finite()) {
            return Err(invalid(format!("read noise must be >= 0, got {read_noise_sigma}")));
        }
        Ok(Self {
            bit_depth,
            gain,
            read_noise_sigma,
            shot_noise,
        })
    }

    /// Unit gain, no noise.
    pub fn noiseless(bit_depth: u8) -> Result<Self> {
        Self::new(bit_depth, 1.0, 0.0, false)
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn read_noise_sigma(&self) -> f64 {
        self.read_noise_sigma
    }

    pub fn shot_noise(&self) -> bool {
        self.shot_noise
    }

    pub fn max_code(&self) -> f64 {
        max_code_for(self.bit_depth)
    }

    fn is_noisy(&self) -> bool {
        self.shot_noise || self.read_noise_sigma > 0.0
    }
}

/// Intensity reaching each polarity's pixels, before gain and exposure
/// time. Images are at scene resolution, indexed like [`Polarity::ALL`].
pub fn transmitted_intensity(scene: &SceneLight, rig: &PolarizerRig) -> Result<[Image2D; 4]> {
    let a1 = alpha_from_rho(rig.rho_front())?;
    let a2 = alpha_from_rho(rig.rho_sensor())?;
    let (w, h) = scene.radiance().dims();
    let mut out = Vec::with_capacity(4);
    for p in Polarity::ALL {
        let theta = rig.relative_angle(p);
        let unpolarized = unpolarized_transmission(theta, a1, a2);
        out.push(Image2D::from_fn(w, h, |x, y| {
            let i0 = scene.radiance().get(x, y);
            let dolp = scene.dolp().at(x, y);
            let psi = scene.aop().at(x, y) - rig.phi();
            let polarized = intensity(jones_through_polarizers(JonesVector::linear(psi, 1.0), theta, a1, a2));
            i0 * (dolp * polarized + (1.0 - dolp) * unpolarized)
        })?);
    }
    let [a, b, c, d]: [Image2D; 4] = out.try_into().expect("four polarities");
    Ok([a, b, c, d])
}

/// Intensity passed by the front polarizer alone, in sensor code units.
/// This is the quantity a snapshot reconstruction recovers (up to the
/// sensor polarizer's own leak), so it serves as ground truth.
pub fn reference_hdr(
    scene: &SceneLight,
    rig: &PolarizerRig,
    sensor: &SensorModel,
    exposure_time: f64,
) -> Result<Image2D> {
    let a1 = alpha_from_rho(rig.rho_front())?;
    let scale = sensor.gain() * exposure_time;
    let (w, h) = scene.radiance().dims();
    Image2D::from_fn(w, h, |x, y| {
        let i0 = scene.radiance().get(x, y);
        let dolp = scene.dolp().at(x, y);
        let psi = scene.aop().at(x, y) - rig.phi();
        let polarized = psi.cos().powi(2) + a1 * a1 * psi.sin().powi(2);
        let unpolarized = 0.5 * (1.0 + a1 * a1);
        scale * i0 * (dolp * polarized + (1.0 - dolp) * unpolarized)
    })
}

/// Renders a raw mosaic frame of `scene` (one scene pixel per superpixel,
/// neutral colour filters). Noise for sensor pixel `i` is drawn from a
/// stream derived from `(seed, i)`, so output does not depend on thread
/// scheduling.
pub fn simulate_capture(
    scene: &SceneLight,
    rig: &PolarizerRig,
    sensor: &SensorModel,
    exposure_time: f64,
    seed: u64,
) -> Result<MosaicFrame> {
    if !(exposure_time > 0.0 && exposure_time.is_finite()) {
        return Err(invalid(format!("exposure time must be positive, got {exposure_time}")));
    }
    let transmitted = transmitted_intensity(scene, rig)?;
    let (sw, sh) = scene.radiance().dims();
    let (w, h) = (sw * SUPERPIXEL, sh * SUPERPIXEL);

    // Superpixel position -> polarity, derived from the mosaic tables.
    let mut labels = [[Polarity::Deg0; SUPERPIXEL]; SUPERPIXEL];
    for site in BayerSite::ALL {
        for p in Polarity::ALL {
            let (x, y) = sensor_position(0, 0, site, p);
            labels[y][x] = p;
        }
    }

    let scale = sensor.gain() * exposure_time;
    let max_code = sensor.max_code();
    let read_noise = if sensor.read_noise_sigma() > 0.0 {
        Some(Normal::new(0.0, sensor.read_noise_sigma()).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };

    let mut data = vec![0.0; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let p = labels[y % SUPERPIXEL][x % SUPERPIXEL];
            let mut value = transmitted[p.index()].get(x / SUPERPIXEL, y / SUPERPIXEL) * scale;
            if sensor.is_noisy() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((y * w + x) as u64);
                if sensor.shot_noise() && value > 0.0 {
                    // Poisson::new only fails for non-positive or non-finite means.
                    value = Poisson::new(value).map(|d| d.sample(&mut rng)).unwrap_or(value);
                }
                if let Some(n) = &read_noise {
                    value += n.sample(&mut rng);
                }
            }
            *out = clip(value.round(), max_code);
        }
    });
    MosaicFrame::new(LdrImage::new(Image2D::new(w, h, data)?, sensor.bit_depth())?)
}
