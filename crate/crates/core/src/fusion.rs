//! Exposure fusion into linear HDR radiance, plus a global Reinhard tone map
//! for display.
//!
//! Every LDR sample is divided by its exposure and averaged with the other
//! well-exposed samples of the same pixel:
//!
//! ```text
//! H = Σᵢ wᵢ·Iᵢ/eᵢ / (Σᵢ wᵢ + ε),   wᵢ = [p_min ≤ Iᵢ ≤ p_max]
//! ```
//!
//! The weights test the unscaled codes: clipping happens in code units.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{ExposureEstimate, ValidityThresholds};
use crate::error::{invalid, Error, Result};
use crate::imaging::{max_code_for, Image2D, LdrImage, Polarity, PolarityStack};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_EXPOSURE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub epsilon: f64,
    pub exposure_floor: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            exposure_floor: DEFAULT_EXPOSURE_FLOOR,
        }
    }
}

/// Fused linear radiance with per-pixel contributor counts. Pixels with
/// zero coverage hold a fallback value and should be excluded from
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    pub image: Image2D,
    pub coverage: Vec<u8>,
    /// Inputs skipped because their exposure was at or below the floor.
    pub dropped: Vec<usize>,
}

impl HdrImage {
    pub fn covered_mask(&self) -> Vec<bool> {
        self.coverage.iter().map(|c| *c > 0).collect()
    }

    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|c| **c > 0).count()
    }
}

/// Co-registered shots of a static scene at increasing exposure times.
#[derive(Debug, Clone, PartialEq)]
pub struct Bracket {
    snapshots: Vec<(LdrImage, f64)>,
}

impl Bracket {
    pub fn new(snapshots: Vec<(LdrImage, f64)>) -> Result<Self> {
        let Some((first, _)) = snapshots.first() else {
            return Err(invalid("bracket is empty"));
        };
        for (img, t) in &snapshots {
            first.image().ensure_same_dims(img.image())?;
            if !(*t > 0.0 && t.is_finite()) {
                return Err(invalid(format!("exposure time {t} must be positive")));
            }
        }
        if snapshots.windows(2).any(|w| w[1].1 <= w[0].1) {
            return Err(invalid("bracket exposure times must be strictly increasing"));
        }
        Ok(Self { snapshots })
    }

    pub fn snapshots(&self) -> &[(LdrImage, f64)] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

/// Divides every pixel by `exposure`.
pub fn scale_image(img: &LdrImage, exposure: f64, exposure_floor: f64) -> Result<Image2D> {
    if !exposure.is_finite() || exposure <= exposure_floor {
        return Err(invalid(format!(
            "exposure {exposure} at or below floor {exposure_floor}"
        )));
    }
    let (w, h) = img.dims();
    Image2D::new(w, h, img.data().iter().map(|v| v / exposure).collect())
}

/// 1 where the code is inside `[p_min, p_max]`, else 0.
pub fn weight_mask(img: &LdrImage, thresholds: &ValidityThresholds) -> Image2D {
    let (w, h) = img.dims();
    let data = img
        .data()
        .iter()
        .map(|v| f64::from(u8::from(thresholds.contains(*v))))
        .collect();
    Image2D::new(w, h, data).expect("binary weights are valid pixels")
}

/// Weighted merge of co-registered LDR images with known exposures.
///
/// Inputs whose exposure is at or below the floor are skipped and listed in
/// [`HdrImage::dropped`]. A pixel no input exposes well takes the scaled
/// value of the least exposed input if that one is saturated, otherwise of
/// the most exposed input that is not saturated.
pub fn fuse_exposures(
    images: &[&LdrImage],
    exposures: &[f64],
    thresholds: &ValidityThresholds,
    params: &FusionParams,
) -> Result<HdrImage> {
    if images.len() != exposures.len() {
        return Err(invalid("one exposure per image is required"));
    }
    let Some(first) = images.first() else {
        return Err(Error::Fusion("no images to fuse".into()));
    };
    for img in &images[1..] {
        first.image().ensure_same_dims(img.image())?;
    }
    let mut dropped = Vec::new();
    let mut used: Vec<(&LdrImage, f64)> = Vec::new();
    for (i, (img, &e)) in images.iter().zip(exposures).enumerate() {
        if e > params.exposure_floor && e.is_finite() {
            used.push((img, e));
        } else {
            dropped.push(i);
        }
    }
    if used.is_empty() {
        return Err(Error::Fusion(format!(
            "every input exposure is at or below the floor {}",
            params.exposure_floor
        )));
    }
    // Stable order by exposure for the fallback rule.
    let mut by_exposure: Vec<usize> = (0..used.len()).collect();
    by_exposure.sort_by(|a, b| used[*a].1.total_cmp(&used[*b].1));

    let (w, h) = first.dims();
    let n = w * h;
    let mut out = vec![0.0; n];
    let mut coverage = vec![0u8; n];
    out.par_iter_mut()
        .zip(coverage.par_iter_mut())
        .enumerate()
        .for_each(|(px, (value, cov))| {
            let mut num = 0.0;
            let mut den = 0.0;
            let mut count = 0u8;
            for (img, e) in &used {
                let x = img.data()[px];
                if thresholds.contains(x) {
                    num += x / e;
                    den += 1.0;
                    count = count.saturating_add(1);
                }
            }
            if count > 0 {
                *value = num / (den + params.epsilon);
            } else {
                let (lo_img, lo_e) = used[by_exposure[0]];
                let x = lo_img.data()[px];
                *value = if x > thresholds.p_max {
                    x / lo_e
                } else {
                    by_exposure
                        .iter()
                        .rev()
                        .map(|&k| used[k])
                        .find(|(img, _)| img.data()[px] <= thresholds.p_max)
                        .map(|(img, e)| img.data()[px] / e)
                        .unwrap_or(x / lo_e)
                };
            }
            *cov = count;
        });
    Ok(HdrImage {
        image: Image2D::new(w, h, out)?,
        coverage,
        dropped,
    })
}

/// Merges a snapshot's four polarity images using estimated exposures.
pub fn fuse_hdr(
    stack: &PolarityStack,
    estimate: &ExposureEstimate,
    thresholds: &ValidityThresholds,
    params: &FusionParams,
) -> Result<HdrImage> {
    let images: Vec<&LdrImage> = Polarity::ALL.iter().map(|p| stack.get(*p)).collect();
    fuse_exposures(&images, &estimate.exposure, thresholds, params)
}

/// Merges an exposure bracket. Radiance comes out in units of the
/// shortest exposure time.
pub fn fuse_bracket(bracket: &Bracket, thresholds: &ValidityThresholds, params: &FusionParams) -> Result<HdrImage> {
    if bracket.len() < 2 {
        return Err(invalid("a bracket needs at least two snapshots"));
    }
    let t0 = bracket.snapshots()[0].1;
    let images: Vec<&LdrImage> = bracket.snapshots().iter().map(|(i, _)| i).collect();
    let exposures: Vec<f64> = bracket.snapshots().iter().map(|(_, t)| t / t0).collect();
    fuse_exposures(&images, &exposures, thresholds, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum WhitePoint {
    /// No burn-out: plain `L/(1+L)`.
    Infinite,
    /// Fixed white in key-scaled luminance units.
    Fixed(f64),
    /// Percentile (0–100] of the key-scaled luminance.
    Percentile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneMapParams {
    pub key: f64,
    pub white: WhitePoint,
    pub bit_depth: u8,
}

impl Default for ToneMapParams {
    fn default() -> Self {
        Self {
            key: 0.18,
            white: WhitePoint::Percentile(99.9),
            bit_depth: 8,
        }
    }
}

const LOG_AVERAGE_DELTA: f64 = 1e-6;

/// A Reinhard curve fitted to one image. Applying the same curve to several
/// images keeps their tone-mapped versions comparable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinhardCurve {
    /// `key / log-average luminance`.
    pub scale: f64,
    /// White point in scaled luminance units (may be infinite).
    pub white: f64,
    pub bit_depth: u8,
}

impl ReinhardCurve {
    pub fn fit(hdr: &Image2D, params: &ToneMapParams) -> Result<Self> {
        if !(params.key > 0.0 && params.key.is_finite()) {
            return Err(invalid(format!("tone map key must be positive, got {}", params.key)));
        }
        let n = hdr.len().max(1) as f64;
        let log_avg = (hdr.data().iter().map(|l| (LOG_AVERAGE_DELTA + l).ln()).sum::<f64>() / n).exp();
        let scale = params.key / log_avg;
        let white = match params.white {
            WhitePoint::Infinite => f64::INFINITY,
            WhitePoint::Fixed(v) if v > 0.0 => v,
            WhitePoint::Fixed(v) => return Err(invalid(format!("fixed white point must be positive, got {v}"))),
            WhitePoint::Percentile(p) => {
                if !(p > 0.0 && p <= 100.0) {
                    return Err(invalid(format!("white percentile {p} outside (0, 100]")));
                }
                let mut sorted: Vec<f64> = hdr.data().iter().map(|l| l * scale).collect();
                sorted.sort_by(f64::total_cmp);
                let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
                sorted
                    .get(rank.clamp(1, sorted.len().max(1)) - 1)
                    .copied()
                    .unwrap_or(0.0)
            }
        };
        Ok(Self {
            scale,
            white,
            bit_depth: params.bit_depth,
        })
    }

    /// Maps one linear value to `[0, 1]`.
    #[inline]
    pub fn map(&self, l: f64) -> f64 {
        let ls = l * self.scale;
        let burn = if self.white > 0.0 {
            ls / (self.white * self.white)
        } else {
            0.0
        };
        (ls * (1.0 + burn) / (1.0 + ls)).clamp(0.0, 1.0)
    }

    pub fn apply(&self, hdr: &Image2D) -> Result<LdrImage> {
        let max_code = max_code_for(self.bit_depth);
        let (w, h) = hdr.dims();
        let data = hdr.data().iter().map(|l| (self.map(*l) * max_code).round()).collect();
        LdrImage::new(Image2D::new(w, h, data)?, self.bit_depth)
    }
}

/// Global Reinhard operator: scale by `key / log-average`, then
/// `L(1 + L/L_white²)/(1 + L)`, clamped to `[0, 1]` and quantized.
pub fn tonemap_reinhard(hdr: &Image2D, params: &ToneMapParams) -> Result<LdrImage> {
    ReinhardCurve::fit(hdr, params)?.apply(hdr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ldr(v: Vec<f64>) -> LdrImage {
        LdrImage::new(Image2D::new(v.len(), 1, v).unwrap(), 8).unwrap()
    }

    fn thr() -> ValidityThresholds {
        ValidityThresholds::for_bit_depth(8)
    }

    #[test]
    fn scale_examples() {
        let img = ldr(vec![100.0, 100.0]);
        assert_eq!(scale_image(&img, 0.5, 1e-6).unwrap().data(), &[200.0, 200.0]);
        assert_eq!(scale_image(&img, 1.0, 1e-6).unwrap().data(), img.data());
        assert!(scale_image(&img, 1e-9, 1e-6).is_err());
    }

    #[test]
    fn weight_examples() {
        let w = weight_mask(&ldr(vec![5.0, 0.0, 255.0, 250.0, 100.0]), &thr());
        assert_eq!(w.data(), &[1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn single_and_double_contributors() {
        let p = FusionParams::default();
        // Exposure 0.5 turns 100 into 200; the others are saturated or dark.
        let imgs = [ldr(vec![100.0]), ldr(vec![255.0]), ldr(vec![0.0]), ldr(vec![255.0])];
        let refs: Vec<&LdrImage> = imgs.iter().collect();
        let h = fuse_exposures(&refs, &[0.5, 0.9, 0.1, 0.7], &thr(), &p).unwrap();
        assert_relative_eq!(h.image.get(0, 0), 200.0 / (1.0 + 1e-6), max_relative = 1e-15);
        assert_eq!(h.coverage, vec![1]);

        let imgs = [ldr(vec![50.0]), ldr(vec![51.0]), ldr(vec![0.0]), ldr(vec![0.0])];
        let refs: Vec<&LdrImage> = imgs.iter().collect();
        let h = fuse_exposures(&refs, &[0.5, 0.5, 0.5, 0.5], &thr(), &p).unwrap();
        assert_relative_eq!(h.image.get(0, 0), 101.0, max_relative = 1e-6);
        assert_eq!(h.coverage, vec![2]);
    }

    #[test]
    fn zero_coverage_fallbacks() {
        let p = FusionParams::default();
        // All saturated: lowest exposure (0.1) wins.
        let sat = [ldr(vec![255.0]), ldr(vec![255.0])];
        let h = fuse_exposures(&[&sat[0], &sat[1]], &[0.8, 0.1], &thr(), &p).unwrap();
        assert_eq!(h.image.get(0, 0), 2550.0);
        assert_eq!(h.coverage, vec![0]);
        // All dark: highest exposure wins.
        let dark = [ldr(vec![2.0]), ldr(vec![4.0])];
        let h = fuse_exposures(&[&dark[0], &dark[1]], &[0.1, 0.8], &thr(), &p).unwrap();
        assert_eq!(h.image.get(0, 0), 5.0);
        // Gap between a saturated long and a dark short exposure.
        let gap = [ldr(vec![3.0]), ldr(vec![255.0])];
        let h = fuse_exposures(&[&gap[0], &gap[1]], &[0.1, 0.8], &thr(), &p).unwrap();
        assert_eq!(h.image.get(0, 0), 30.0);
    }

    #[test]
    fn floored_exposures_dropped() {
        let p = FusionParams::default();
        let imgs = [ldr(vec![100.0]), ldr(vec![100.0])];
        let h = fuse_exposures(&[&imgs[0], &imgs[1]], &[1e-9, 0.5], &thr(), &p).unwrap();
        assert_eq!(h.dropped, vec![0]);
        assert!(matches!(
            fuse_exposures(&[&imgs[0]], &[0.0], &thr(), &p),
            Err(Error::Fusion(_))
        ));
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let imgs: Vec<LdrImage> = (0..4)
            .map(|_| ldr((0..64).map(|_| rng.random_range(0..=255) as f64).collect()))
            .collect();
        let exps: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
        let p = FusionParams::default();
        let a = fuse_exposures(&imgs.iter().collect::<Vec<_>>(), &exps, &thr(), &p).unwrap();
        let order = [2, 0, 3, 1];
        let b = fuse_exposures(
            &order.iter().map(|&i| &imgs[i]).collect::<Vec<_>>(),
            &order.map(|i| exps[i]),
            &thr(),
            &p,
        )
        .unwrap();
        assert_eq!(a.coverage, b.coverage);
        for (x, y) in a.image.data().iter().zip(b.image.data()) {
            assert_relative_eq!(x, y, max_relative = 1e-14);
        }
    }

    #[test]
    fn bracket_consistency() {
        let c = 60.0;
        let b = Bracket::new(vec![(ldr(vec![c; 4]), 1.0), (ldr(vec![2.0 * c; 4]), 2.0)]).unwrap();
        let h = fuse_bracket(&b, &thr(), &FusionParams::default()).unwrap();
        for v in h.image.data() {
            assert_relative_eq!(*v, c, max_relative = 1e-6);
        }
    }

    #[test]
    fn bracket_of_identical_shots() {
        let img = ldr(vec![10.0, 77.0, 200.0]);
        let refs = [&img, &img, &img];
        let h = fuse_exposures(&refs, &[1.0, 1.0, 1.0], &thr(), &FusionParams::default()).unwrap();
        for (a, b) in h.image.data().iter().zip(img.data()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-6);
        }
    }

    #[test]
    fn bracket_validation() {
        assert!(Bracket::new(vec![]).is_err());
        assert!(Bracket::new(vec![(ldr(vec![1.0]), 2.0), (ldr(vec![1.0]), 1.0)]).is_err());
        assert!(Bracket::new(vec![(ldr(vec![1.0]), 1.0), (ldr(vec![1.0, 2.0]), 2.0)]).is_err());
        let one = Bracket::new(vec![(ldr(vec![1.0]), 1.0)]).unwrap();
        assert!(fuse_bracket(&one, &thr(), &FusionParams::default()).is_err());
    }

    #[test]
    fn tonemap_constant_and_zero() {
        let p = ToneMapParams::default();
        let out = tonemap_reinhard(&Image2D::filled(4, 4, 37.0).unwrap(), &p).unwrap();
        assert!(out.data().windows(2).all(|w| w[0] == w[1]));
        let out = tonemap_reinhard(&Image2D::zeros(4, 4), &p).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tonemap_extreme_range() {
        let img = Image2D::new(4, 1, vec![1e-3, 1.0, 1e3, 1e6 * 1e-3 * 1e3]).unwrap();
        for white in [
            WhitePoint::Infinite,
            WhitePoint::Percentile(99.9),
            WhitePoint::Fixed(2.0),
        ] {
            let out = tonemap_reinhard(
                &img,
                &ToneMapParams {
                    white,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(out.data().iter().all(|v| (0.0..=255.0).contains(v)));
        }
    }

    proptest! {
        #[test]
        fn tonemap_monotone(values in proptest::collection::vec(0.0f64..1e5, 2..64)) {
            let n = values.len();
            let img = Image2D::new(n, 1, values.clone()).unwrap();
            let out = tonemap_reinhard(&img, &ToneMapParams::default()).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if values[i] <= values[j] {
                        prop_assert!(out.data()[i] <= out.data()[j]);
                    }
                }
            }
        }
    }
}
