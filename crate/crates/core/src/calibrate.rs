//! Self-calibration of per-polarity exposures.
//!
//! Orthogonal polarities see `I·cos²θ` and `I·sin²θ` of the same light, so
//! the angle between a sensor polarizer and the front polarizer follows
//! per pixel from `θ = arctan √(I⊥ / I∥)`. Per-pixel angles are pooled into
//! a histogram and the busiest bin, refined by its median, is the estimate.
//!
//! Angles are reported in `[0, π/2]`: θ and −θ give the same exposure and
//! cannot be told apart from one pair.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::{alpha_from_rho, intensity, jones_through_pair, JonesVector};
use crate::imaging::{canonical_angle, Image2D, LdrImage, Polarity, PolarityStack};

/// Default histogram bin width: 0.25°.
pub const DEFAULT_BIN_WIDTH: f64 = 0.25 * std::f64::consts::PI / 180.0;

/// Well-exposed code range `[p_min, p_max]`, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityThresholds {
    pub p_min: f64,
    pub p_max: f64,
}

impl ValidityThresholds {
    pub fn new(p_min: f64, p_max: f64) -> Result<Self> {
        if !(p_min >= 0.0 && p_min < p_max && p_max.is_finite()) {
            return Err(invalid(format!(
                "thresholds need 0 <= p_min < p_max, got [{p_min}, {p_max}]"
            )));
        }
        Ok(Self { p_min, p_max })
    }

    /// `[5, 250]` on the 8-bit scale, scaled to `bit_depth`.
    pub fn for_bit_depth(bit_depth: u8) -> Self {
        Self::scaled(5.0, 250.0, bit_depth).expect("default thresholds are valid")
    }

    /// Thresholds given on the 8-bit scale, rescaled to `bit_depth`.
    pub fn scaled(p_min_8bit: f64, p_max_8bit: f64, bit_depth: u8) -> Result<Self> {
        let s = crate::imaging::max_code_for(bit_depth) / 255.0;
        Self::new(p_min_8bit * s, p_max_8bit * s)
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.p_min <= x && x <= self.p_max
    }

    pub(crate) fn check_against(&self, max_code: f64) -> Result<()> {
        if self.p_max > max_code {
            return Err(invalid(format!("p_max {} exceeds max code {}", self.p_max, max_code)));
        }
        Ok(())
    }
}

/// Tallies of angle estimates over `[0, π/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleHistogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl AngleHistogram {
    pub fn new(bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width <= FRAC_PI_2) {
            return Err(invalid(format!("bin width {bin_width} outside (0, π/2]")));
        }
        let bins = (FRAC_PI_2 / bin_width).ceil() as usize;
        Ok(Self {
            bin_width,
            counts: vec![0; bins],
        })
    }

    #[inline]
    pub fn bin_of(&self, angle: f64) -> usize {
        ((angle / self.bin_width) as usize).min(self.counts.len() - 1)
    }

    pub fn add(&mut self, angle: f64) {
        let b = self.bin_of(angle);
        self.counts[b] += 1;
    }

    pub fn merge(&mut self, other: &AngleHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        ((bin as f64 + 0.5) * self.bin_width).min(FRAC_PI_2)
    }

    /// Most populated bin; ties go to the lowest angle.
    pub fn peak(&self) -> Option<usize> {
        let mut best: Option<(usize, u64)> = None;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > 0 && best.is_none_or(|(_, bc)| c > bc) {
                best = Some((i, c));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Per-pixel angle estimates with a validity mask. Invalid pixels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleMap {
    pub angles: Image2D,
    pub valid: Vec<bool>,
}

impl AngleMap {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_angles(&self) -> impl Iterator<Item = f64> + '_ {
        self.angles
            .data()
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(a, _)| *a)
    }
}

/// Angle of `i_parallel`'s polarizer from the front polarizer, per pixel,
/// wherever both images are well exposed.
pub fn estimate_angle_map(
    i_parallel: &LdrImage,
    i_orthogonal: &LdrImage,
    thresholds: &ValidityThresholds,
) -> Result<AngleMap> {
    i_parallel.image().ensure_same_dims(i_orthogonal.image())?;
    let (w, h) = i_parallel.dims();
    let (angles, valid): (Vec<f64>, Vec<bool>) = i_parallel
        .data()
        .iter()
        .zip(i_orthogonal.data())
        .map(|(&par, &orth)| {
            let ok = thresholds.contains(par) && thresholds.contains(orth) && (par > 0.0 || orth > 0.0);
            if !ok {
                return (0.0, false);
            }
            let theta = if par > 0.0 {
                (orth / par).sqrt().atan()
            } else {
                FRAC_PI_2
            };
            (theta.clamp(0.0, FRAC_PI_2), true)
        })
        .unzip();
    Ok(AngleMap {
        angles: Image2D::new(w, h, angles)?,
        valid,
    })
}

/// Result of a histogram mode search.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeEstimate {
    pub angle: f64,
    pub bin: usize,
    pub histogram: AngleHistogram,
}

/// Mode of continuous angle estimates: busiest bin, refined to the median of
/// the estimates that fell into it.
pub fn mode_of_angles(angles: &[f64], bin_width: f64) -> Result<ModeEstimate> {
    let empty = AngleHistogram::new(bin_width)?;
    if angles.is_empty() {
        return Err(Error::Calibration("no valid pixels to aggregate".into()));
    }
    if let Some(bad) = angles.iter().find(|a| !(0.0..=FRAC_PI_2).contains(*a)) {
        return Err(invalid(format!("angle estimate {bad} outside [0, π/2]")));
    }
    // Partial histograms per chunk; integer counts merge deterministically.
    let histogram = angles
        .par_chunks(1 << 14)
        .map(|chunk| {
            let mut h = empty.clone();
            chunk.iter().for_each(|a| h.add(*a));
            h
        })
        .reduce(
            || empty.clone(),
            |mut a, b| {
                a.merge(&b);
                a
            },
        );
    let bin = histogram.peak().expect("non-empty histogram has a peak");
    let mut in_bin: Vec<f64> = angles.iter().copied().filter(|a| histogram.bin_of(*a) == bin).collect();
    in_bin.sort_by(f64::total_cmp);
    let n = in_bin.len();
    let angle = if n % 2 == 1 {
        in_bin[n / 2]
    } else {
        0.5 * (in_bin[n / 2 - 1] + in_bin[n / 2])
    };
    Ok(ModeEstimate { angle, bin, histogram })
}

/// Mode of the valid entries of an angle map.
pub fn aggregate_mode(map: &AngleMap, bin_width: f64) -> Result<ModeEstimate> {
    let angles: Vec<f64> = map.valid_angles().collect();
    mode_of_angles(&angles, bin_width)
}

/// How the angles of one orthogonal pair were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    /// Aggregated from the pair's own angle map.
    Estimated,
    /// The pair had no co-exposed pixels; its angle was inferred from the
    /// other pair, with the sign picked by the observed intensity ratio.
    Inferred,
}

/// Recovered polarity angles and exposures, with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureEstimate {
    pub theta_hat: [f64; 4],
    pub exposure: [f64; 4],
    pub valid_pixel_count: [usize; 4],
    /// Indexed by pair: `[θ₁/θ₃, θ₂/θ₄]`.
    pub pair_source: [PairSource; 2],
    pub histograms: [Option<AngleHistogram>; 2],
}

impl ExposureEstimate {
    /// Builds an estimate from angles alone (exposures are `cos²θ̂`).
    pub fn from_angles(theta_hat: [f64; 4]) -> Self {
        Self {
            theta_hat,
            exposure: theta_hat.map(|t| t.cos().powi(2)),
            valid_pixel_count: [0; 4],
            pair_source: [PairSource::Estimated; 2],
            histograms: [None, None],
        }
    }

    /// Nominal exposures for a known front polarizer angle.
    pub fn from_phi(phi: f64) -> Self {
        Self::from_angles(Polarity::ALL.map(|p| canonical_angle(p.nominal_angle() - phi)))
    }

    pub fn exposure_of(&self, p: Polarity) -> f64 {
        self.exposure[p.index()]
    }

    /// Checks the angle range and that exposures are exactly `cos²θ̂`.
    pub fn validate(&self) -> Result<()> {
        for (t, e) in self.theta_hat.iter().zip(&self.exposure) {
            if !(0.0..=FRAC_PI_2).contains(t) {
                return Err(invalid(format!("angle {t} outside [0, π/2]")));
            }
            if *e != t.cos().powi(2) {
                return Err(invalid(format!("exposure {e} is not cos² of angle {t}")));
            }
        }
        Ok(())
    }
}

const PAIRS: [(Polarity, Polarity); 2] = [(Polarity::Deg0, Polarity::Deg90), (Polarity::Deg45, Polarity::Deg135)];

/// Recovers all four polarity angles from one snapshot.
///
/// Each orthogonal pair yields the angle of its first polarity; the second
/// is the complement. If only one pair has co-exposed pixels, the other
/// pair's angle is inferred from it.
pub fn estimate_exposures(
    stack: &PolarityStack,
    thresholds: &ValidityThresholds,
    bin_width: f64,
) -> Result<ExposureEstimate> {
    thresholds.check_against(stack.max_code())?;
    let mut theta = [0.0; 4];
    let mut counts = [0usize; 4];
    let mut histograms = [None, None];
    let mut sources = [PairSource::Estimated; 2];
    let mut failed = Vec::new();

    for (k, (par, orth)) in PAIRS.into_iter().enumerate() {
        let map = estimate_angle_map(stack.get(par), stack.get(orth), thresholds)?;
        match aggregate_mode(&map, bin_width) {
            Ok(mode) => {
                theta[par.index()] = mode.angle;
                theta[orth.index()] = FRAC_PI_2 - mode.angle;
                let n = map.valid_count();
                counts[par.index()] = n;
                counts[orth.index()] = n;
                histograms[k] = Some(mode.histogram);
            }
            Err(Error::Calibration(_)) => failed.push(k),
            Err(e) => return Err(e),
        }
    }

    match failed.as_slice() {
        [] => {}
        [k] => {
            let good = 1 - k;
            let (g, _) = PAIRS[good];
            let (n, inferred) = infer_pair(stack, thresholds, g, theta[g.index()], *k)?;
            let (par, orth) = PAIRS[*k];
            theta[par.index()] = inferred;
            theta[orth.index()] = FRAC_PI_2 - inferred;
            counts[par.index()] = n;
            counts[orth.index()] = n;
            sources[*k] = PairSource::Inferred;
        }
        _ => {
            return Err(Error::Calibration(
                "no pixel is well exposed in both images of either orthogonal pair".into(),
            ))
        }
    }

    let mut est = ExposureEstimate::from_angles(theta);
    est.valid_pixel_count = counts;
    est.pair_source = sources;
    est.histograms = histograms;
    Ok(est)
}

/// Angle of the first polarity of pair `target`, given the canonical angle
/// of polarity `known`. The known angle fixes the front polarizer up to a
/// sign; the sign whose predicted intensity ratio best matches the median
/// observed ratio wins. Returns `(co-exposed pixel count, angle)`.
fn infer_pair(
    stack: &PolarityStack,
    thresholds: &ValidityThresholds,
    known: Polarity,
    known_angle: f64,
    target: usize,
) -> Result<(usize, f64)> {
    let phis = [known.nominal_angle() - known_angle, known.nominal_angle() + known_angle];
    let exposure = |phi: f64, p: Polarity| (p.nominal_angle() - phi).cos().powi(2);

    let (t_par, t_orth) = PAIRS[target];
    let (k_par, k_orth) = PAIRS[1 - target];
    let mut best: Option<(usize, f64, Polarity, Polarity)> = None;
    for a in [k_par, k_orth] {
        for b in [t_par, t_orth] {
            let mut ratios: Vec<f64> = stack
                .get(a)
                .data()
                .iter()
                .zip(stack.get(b).data())
                .filter(|(x, y)| thresholds.contains(**x) && thresholds.contains(**y) && **x > 0.0 && **y > 0.0)
                .map(|(x, y)| y / x)
                .collect();
            if ratios.is_empty() || best.as_ref().is_some_and(|(n, ..)| *n >= ratios.len()) {
                continue;
            }
            ratios.sort_by(f64::total_cmp);
            best = Some((ratios.len(), ratios[ratios.len() / 2], a, b));
        }
    }
    let Some((n, observed, a, b)) = best else {
        return Err(Error::Calibration(
            "one orthogonal pair has no co-exposed pixels and no cross-pair pixels to infer it from".into(),
        ));
    };
    let mismatch = |phi: f64| {
        let predicted = exposure(phi, b) / exposure(phi, a);
        (predicted.max(f64::MIN_POSITIVE) / observed).ln().abs()
    };
    let phi = if mismatch(phis[0]) <= mismatch(phis[1]) {
        phis[0]
    } else {
        phis[1]
    };
    Ok((n, canonical_angle(t_par.nominal_angle() - phi)))
}

/// Incident light and geometry for an extinction-ratio sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepScenario {
    /// True angle between the front and sensor polarizers.
    pub theta_true: f64,
    /// Polarization of the incident light, from the front polarizer's
    /// transmission axis.
    pub incident_angle: f64,
    /// Incident intensity ramps linearly across the test patch.
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub patch_size: usize,
    pub bit_depth: u8,
    pub thresholds: ValidityThresholds,
    pub bin_width: f64,
}

impl Default for SweepScenario {
    fn default() -> Self {
        Self {
            theta_true: 10f64.to_radians(),
            incident_angle: 0.0,
            intensity_min: 20.0,
            intensity_max: 240.0,
            patch_size: 16,
            bit_depth: 8,
            thresholds: ValidityThresholds::for_bit_depth(8),
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub theta_hat: f64,
    pub error_percent: f64,
}

/// Estimator error as a function of extinction ratio. For each ρ, renders
/// the parallel/orthogonal pair through the leaky Jones chain (unquantized),
/// then runs the per-pixel estimate and mode aggregation.
pub fn sweep_extinction_error(rho_grid: &[f64], scenario: &SweepScenario) -> Result<Vec<SweepRow>> {
    let s = scenario;
    if !(s.theta_true > 0.0 && s.theta_true < FRAC_PI_2) {
        return Err(invalid("sweep angle must lie in (0, π/2)"));
    }
    if s.patch_size == 0 || !(s.intensity_min >= 0.0 && s.intensity_min <= s.intensity_max) {
        return Err(invalid("sweep patch needs a positive size and a valid intensity ramp"));
    }
    let max_code = crate::imaging::max_code_for(s.bit_depth);
    let n = s.patch_size;
    let e0 = JonesVector::linear(s.incident_angle, 1.0);
    rho_grid
        .iter()
        .map(|&rho| {
            let alpha = alpha_from_rho(rho)?;
            let t_par = intensity(jones_through_pair(e0, s.theta_true, alpha));
            let t_orth = intensity(jones_through_pair(e0, s.theta_true + FRAC_PI_2, alpha));
            let ramp = |x: usize, y: usize| {
                let f = (y * n + x) as f64 / ((n * n - 1).max(1)) as f64;
                s.intensity_min + f * (s.intensity_max - s.intensity_min)
            };
            let par = LdrImage::from_clipped(Image2D::from_fn(n, n, |x, y| ramp(x, y) * t_par)?, s.bit_depth)?;
            let orth = LdrImage::from_clipped(Image2D::from_fn(n, n, |x, y| ramp(x, y) * t_orth)?, s.bit_depth)?;
            debug_assert!(s.thresholds.p_max <= max_code);
            let map = estimate_angle_map(&par, &orth, &s.thresholds)?;
            let mode = aggregate_mode(&map, s.bin_width)?;
            Ok(SweepRow {
                rho,
                theta_hat: mode.angle,
                error_percent: (mode.angle - s.theta_true).abs() / s.theta_true * 100.0,
            })
        })
        .collect()
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || n == 0 {
        return Err(invalid("log grid needs 0 < lo <= hi and n >= 1"));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect())
}

/// Least-squares line with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid("line fit needs at least two paired samples"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(invalid("line fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Trend of a sweep over `[rho_lo, rho_hi]` on logarithmic axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepTrend {
    /// log₁₀(error) against log₁₀(ρ).
    pub log_log: LineFit,
    /// error against log₁₀(ρ).
    pub semi_log: LineFit,
    pub monotone: bool,
}

pub fn sweep_trend(rows: &[SweepRow], rho_lo: f64, rho_hi: f64) -> Result<SweepTrend> {
    let sel: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.rho >= rho_lo && r.rho <= rho_hi && r.error_percent > 0.0)
        .collect();
    let xs: Vec<f64> = sel.iter().map(|r| r.rho.log10()).collect();
    let ys: Vec<f64> = sel.iter().map(|r| r.error_percent).collect();
    let log_ys: Vec<f64> = ys.iter().map(|e| e.log10()).collect();
    let mut sorted = sel.clone();
    sorted.sort_by(|a, b| a.rho.total_cmp(&b.rho));
    let monotone = sorted.windows(2).all(|w| w[1].error_percent >= w[0].error_percent);
    Ok(SweepTrend {
        log_log: fit_line(&xs, &log_ys)?,
        semi_log: fit_line(&xs, &ys)?,
        monotone,
    })
}

/// CSV with header `rho,theta_hat_deg,error_percent`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("rho,theta_hat_deg,error_percent\n");
    for r in rows {
        out.push_str(&format!(
            "{:e},{},{}\n",
            r.rho,
            r.theta_hat.to_degrees(),
            r.error_percent
        ));
    }
    out
}
