//! Pixel containers and optical configuration shared by every stage.
//!
//! All pixel math is `f64`. Quantization only happens in the sensor
//! simulation and when writing integer file formats.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use crate::error::{invalid, Error, Result};

/// Single-channel image of non-negative linear intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(invalid(format!(
                "image data has {} values, expected {}x{}={}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid(format!(
                "pixel {} has value {} (values must be finite and >= 0)",
                bad, data[bad]
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub(crate) fn ensure_same_dims(&self, other: &Image2D) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }
}

/// Clamps `value` into `[0, max_code]`, the sensor's clipping operator.
#[inline]
pub fn clip(value: f64, max_code: f64) -> f64 {
    value.max(0.0).min(max_code)
}

/// Low dynamic range image: intensities in code units, bounded by the
/// largest code representable at `bit_depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdrImage {
    image: Image2D,
    bit_depth: u8,
}

impl LdrImage {
    pub const DEFAULT_BIT_DEPTH: u8 = 8;

    pub fn new(image: Image2D, bit_depth: u8) -> Result<Self> {
        if !(1..=16).contains(&bit_depth) {
            return Err(invalid(format!("bit depth {bit_depth} outside 1..=16")));
        }
        let max_code = max_code_for(bit_depth);
        if let Some(bad) = image.data().iter().position(|v| *v > max_code) {
            return Err(invalid(format!(
                "pixel {} has value {} above max code {}",
                bad,
                image.data()[bad],
                max_code
            )));
        }
        Ok(Self { image, bit_depth })
    }

    /// Clips every value into range instead of rejecting.
    pub fn from_clipped(image: Image2D, bit_depth: u8) -> Result<Self> {
        let max_code = max_code_for(bit_depth);
        let (w, h) = image.dims();
        let data = image.into_data().into_iter().map(|v| clip(v, max_code)).collect();
        Self::new(Image2D::new(w, h, data)?, bit_depth)
    }

    pub fn image(&self) -> &Image2D {
        &self.image
    }

    pub fn into_image(self) -> Image2D {
        self.image
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn max_code(&self) -> f64 {
        max_code_for(self.bit_depth)
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    pub fn data(&self) -> &[f64] {
        self.image.data()
    }
}

pub fn max_code_for(bit_depth: u8) -> f64 {
    ((1u32 << bit_depth) - 1) as f64
}

/// Label of an on-sensor polarizer. The discriminant is the index into a
/// [`PolarityStack`]; the nominal angle is `index * π/4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Deg0 = 0,
    Deg45 = 1,
    Deg90 = 2,
    Deg135 = 3,
}

impl Polarity {
    pub const ALL: [Polarity; 4] = [Polarity::Deg0, Polarity::Deg45, Polarity::Deg90, Polarity::Deg135];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Sensor-frame orientation of the on-chip polarizer, radians.
    pub fn nominal_angle(self) -> f64 {
        self.index() as f64 * FRAC_PI_4
    }

    /// Three-digit angle tag used in file names (`000`, `045`, ...).
    pub fn label(self) -> &'static str {
        match self {
            Polarity::Deg0 => "000",
            Polarity::Deg45 => "045",
            Polarity::Deg90 => "090",
            Polarity::Deg135 => "135",
        }
    }

    /// The polarity rotated by π/2 (θ₁↔θ₃, θ₂↔θ₄).
    pub fn orthogonal(self) -> Self {
        Self::ALL[(self.index() + 2) % 4]
    }
}

/// The four co-registered per-polarity LDR images of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarityStack {
    images: [LdrImage; 4],
}

impl PolarityStack {
    /// `images[i]` must be the image behind the polarizer `Polarity::ALL[i]`.
    pub fn new(images: [LdrImage; 4]) -> Result<Self> {
        let dims = images[0].dims();
        let depth = images[0].bit_depth();
        for img in &images[1..] {
            if img.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    found: img.dims(),
                });
            }
            if img.bit_depth() != depth {
                return Err(invalid(format!(
                    "mixed bit depths in stack: {} vs {}",
                    depth,
                    img.bit_depth()
                )));
            }
        }
        Ok(Self { images })
    }

    pub fn get(&self, p: Polarity) -> &LdrImage {
        &self.images[p.index()]
    }

    pub fn images(&self) -> &[LdrImage; 4] {
        &self.images
    }

    pub fn into_images(self) -> [LdrImage; 4] {
        self.images
    }

    pub fn dims(&self) -> (usize, usize) {
        self.images[0].dims()
    }

    pub fn bit_depth(&self) -> u8 {
        self.images[0].bit_depth()
    }

    pub fn max_code(&self) -> f64 {
        self.images[0].max_code()
    }
}

/// Front polarizer orientation and the extinction ratios of the front
/// polarizer and the on-sensor array. Peak transmission is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizerRig {
    phi: f64,
    rho_front: f64,
    rho_sensor: f64,
}

impl PolarizerRig {
    pub fn new(phi: f64, rho: f64) -> Result<Self> {
        Self::with_extinction(phi, rho, rho)
    }

    pub fn with_extinction(phi: f64, rho_front: f64, rho_sensor: f64) -> Result<Self> {
        if !phi.is_finite() {
            return Err(invalid("front polarizer angle must be finite"));
        }
        for rho in [rho_front, rho_sensor] {
            check_rho(rho)?;
        }
        Ok(Self {
            phi,
            rho_front,
            rho_sensor,
        })
    }

    pub fn ideal(phi: f64) -> Self {
        Self {
            phi,
            rho_front: 0.0,
            rho_sensor: 0.0,
        }
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn rho_front(&self) -> f64 {
        self.rho_front
    }

    pub fn rho_sensor(&self) -> f64 {
        self.rho_sensor
    }

    /// Angle between the front polarizer and the sensor polarizer `p`.
    pub fn relative_angle(&self, p: Polarity) -> f64 {
        p.nominal_angle() - self.phi
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(invalid(format!("extinction ratio {rho} outside [0, 1)")));
    }
    Ok(())
}

/// A per-pixel scalar parameter that is either constant or a full map.
#[derive(Debug, Clone, PartialEq)]
pub enum PixelParam {
    Uniform(f64),
    Map(Image2D),
}

impl PixelParam {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        match self {
            PixelParam::Uniform(v) => *v,
            PixelParam::Map(m) => m.get(x, y),
        }
    }

    fn check(&self, dims: (usize, usize), name: &str, range: (f64, f64)) -> Result<()> {
        let in_range = |v: f64| v.is_finite() && v >= range.0 && v <= range.1;
        match self {
            PixelParam::Uniform(v) if !in_range(*v) => {
                Err(invalid(format!("{name} {v} outside [{}, {}]", range.0, range.1)))
            }
            PixelParam::Map(m) => {
                if m.dims() != dims {
                    return Err(Error::DimensionMismatch {
                        expected: dims,
                        found: m.dims(),
                    });
                }
                match m.data().iter().find(|v| !in_range(**v)) {
                    Some(v) => Err(invalid(format!("{name} {v} outside [{}, {}]", range.0, range.1))),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

/// Light arriving at the camera: radiance plus its linear polarization.
///
/// `aop` is measured in the sensor frame, like the front polarizer angle.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLight {
    radiance: Image2D,
    dolp: PixelParam,
    aop: PixelParam,
}

impl SceneLight {
    pub fn new(radiance: Image2D, dolp: PixelParam, aop: PixelParam) -> Result<Self> {
        dolp.check(radiance.dims(), "degree of polarization", (0.0, 1.0))?;
        // Image2D can't hold negative values, so a map of aop is limited to
        // [0, inf); a uniform aop may be any finite angle.
        aop.check(radiance.dims(), "angle of polarization", (f64::MIN, f64::MAX))?;
        Ok(Self { radiance, dolp, aop })
    }

    pub fn unpolarized(radiance: Image2D) -> Self {
        Self {
            radiance,
            dolp: PixelParam::Uniform(0.0),
            aop: PixelParam::Uniform(0.0),
        }
    }

    pub fn radiance(&self) -> &Image2D {
        &self.radiance
    }

    pub fn dolp(&self) -> &PixelParam {
        &self.dolp
    }

    pub fn aop(&self) -> &PixelParam {
        &self.aop
    }
}

/// Maps any angle to the representative in `[0, π/2]` with the same cos².
pub fn canonical_angle(theta: f64) -> f64 {
    theta.cos().abs().min(1.0).acos().clamp(0.0, FRAC_PI_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clip_examples() {
        assert_eq!(clip(-3.0, 255.0), 0.0);
        assert_eq!(clip(300.0, 255.0), 255.0);
        assert_eq!(clip(127.4, 255.0), 127.4);
    }

    proptest! {
        #[test]
        fn clip_idempotent(x in -1e9f64..1e9, max in 1.0f64..65535.0) {
            let once = clip(x, max);
            prop_assert_eq!(clip(once, max), once);
            prop_assert!((0.0..=max).contains(&once));
        }
    }

    #[test]
    fn image_rejects_bad_data() {
        assert!(Image2D::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image2D::new(1, 1, vec![-1.0]).is_err());
        assert!(Image2D::new(1, 1, vec![f64::NAN]).is_err());
        assert!(Image2D::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn ldr_range_checked() {
        let img = Image2D::new(2, 1, vec![0.0, 256.0]).unwrap();
        assert!(LdrImage::new(img.clone(), 8).is_err());
        assert!(LdrImage::new(img.clone(), 16).is_ok());
        let clipped = LdrImage::from_clipped(img, 8).unwrap();
        assert_eq!(clipped.data(), &[0.0, 255.0]);
        assert_eq!(clipped.max_code(), 255.0);
    }

    #[test]
    fn stack_rejects_mismatched_dims() {
        let a = LdrImage::new(Image2D::zeros(2, 2), 8).unwrap();
        let b = LdrImage::new(Image2D::zeros(3, 2), 8).unwrap();
        let err = PolarityStack::new([a.clone(), a.clone(), b, a]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn polarity_labels_and_relationships() {
        assert_eq!(Polarity::Deg0.orthogonal(), Polarity::Deg90);
        assert_eq!(Polarity::Deg45.orthogonal(), Polarity::Deg135);
        for p in Polarity::ALL {
            let diff = p.orthogonal().nominal_angle() - p.nominal_angle();
            assert!((diff.rem_euclid(std::f64::consts::PI) - FRAC_PI_2).abs() < 1e-15);
        }
        assert_eq!(Polarity::Deg135.label(), "135");
    }

    #[test]
    fn rig_validates_rho() {
        assert!(PolarizerRig::new(0.0, 1.0).is_err());
        assert!(PolarizerRig::new(0.0, -0.1).is_err());
        assert!(PolarizerRig::new(0.3, 0.002).is_ok());
    }

    #[test]
    fn scene_validates_dolp() {
        let r = Image2D::zeros(2, 2);
        assert!(SceneLight::new(r.clone(), PixelParam::Uniform(1.5), PixelParam::Uniform(0.0)).is_err());
        let bad = PixelParam::Map(Image2D::zeros(1, 1));
        assert!(SceneLight::new(r, bad, PixelParam::Uniform(0.0)).is_err());
    }

    #[test]
    fn canonical_angle_keeps_cos2() {
        for t in [-3.0, -0.2, 0.0, 0.7, 1.9, 4.0, 10.0] {
            let c = canonical_angle(t);
            assert!((0.0..=FRAC_PI_2).contains(&c));
            assert!((c.cos().powi(2) - t.cos().powi(2)).abs() < 1e-12);
        }
    }
}
