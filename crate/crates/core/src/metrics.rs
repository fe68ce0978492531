//! Full-reference quality metrics: PSNR and SSIM, optionally restricted to
//! a pixel mask.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};
use crate::fusion::{ReinhardCurve, ToneMapParams};
use crate::imaging::Image2D;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB over the pixels where `mask` is true
/// (all pixels when `None`). Identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Image2D, b: &Image2D, peak: f64, mask: Option<&[bool]>) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid(format!("PSNR peak must be positive, got {peak}")));
    }
    if let Some(m) = mask {
        if m.len() != a.len() {
            return Err(invalid("mask length does not match image size"));
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        if mask.is_none_or(|m| m[i]) {
            sum += (x - y).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid("PSNR evaluation region is empty"));
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter, "valid" region only.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut horiz = vec![0.0; ow * h];
    horiz.par_chunks_mut(ow).enumerate().for_each(|(y, row)| {
        let s = &src[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            *out = k.iter().zip(&s[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    });
    let mut out = vec![0.0; ow * oh];
    out.par_chunks_mut(ow).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = (0..SSIM_WINDOW).map(|j| k[j] * horiz[(y + j) * ow + x]).sum();
        }
    });
    out
}

/// Mean SSIM (11×11 Gaussian window, σ = 1.5) over every window that lies
/// entirely inside `mask` (all windows when `None`).
pub fn ssim(a: &Image2D, b: &Image2D, peak: f64, mask: Option<&[bool]>) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid(format!("SSIM peak must be positive, got {peak}")));
    }
    if let Some(m) = mask {
        if m.len() != a.len() {
            return Err(invalid("mask length does not match image size"));
        }
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let k = gaussian_kernel();
    let (da, db) = (a.data(), b.data());
    let aa: Vec<f64> = da.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = db.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = da.iter().zip(db).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(da, w, h, &k);
    let mu_b = filter_valid(db, w, h, &k);
    let e_aa = filter_valid(&aa, w, h, &k);
    let e_bb = filter_valid(&bb, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);

    let inside = window_inside_mask(mask, w, h);
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..mu_a.len() {
        if !inside.as_ref().is_none_or(|m| m[i]) {
            continue;
        }
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = (e_aa[i] - ma * ma).max(0.0);
        let vb = (e_bb[i] - mb * mb).max(0.0);
        let cov = e_ab[i] - ma * mb;
        let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        sum += s;
        count += 1;
    }
    if count == 0 {
        return Err(invalid("no SSIM window lies inside the mask"));
    }
    Ok((sum / count as f64).clamp(-1.0, 1.0))
}

/// For each valid window position, whether every pixel under it is masked in.
fn window_inside_mask(mask: Option<&[bool]>, w: usize, h: usize) -> Option<Vec<bool>> {
    let m = mask?;
    // Summed-area table of masked-out pixels.
    let mut sat = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let out = u32::from(!m[y * w + x]);
            sat[(y + 1) * (w + 1) + x + 1] =
                out + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
        }
    }
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let n = SSIM_WINDOW;
    let mut inside = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let s = sat[(y + n) * (w + 1) + x + n] + sat[y * (w + 1) + x]
                - sat[y * (w + 1) + x + n]
                - sat[(y + n) * (w + 1) + x];
            inside.push(s == 0);
        }
    }
    Some(inside)
}

/// PSNR/SSIM pair for one comparison. MS-SSIM and Q-score are never
/// computed here; the fields exist so values from external tools can be
/// merged into the same report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub evaluated_pixel_count: usize,
    pub masked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms_ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_score: Option<f64>,
}

/// JSON has no infinity; a perfect match is written as the string "inf".
fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Str(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Db::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR value {s:?}"))),
    }
}

/// Compares `test` against `reference` on the masked region, with the peak
/// taken as the reference maximum over that region.
pub fn compare(reference: &Image2D, test: &Image2D, mask: Option<&[bool]>) -> Result<MetricReport> {
    let peak = match mask {
        Some(m) => reference
            .data()
            .iter()
            .zip(m)
            .filter(|(_, k)| **k)
            .map(|(v, _)| *v)
            .fold(0.0, f64::max),
        None => reference.max_value(),
    };
    let peak = if peak > 0.0 { peak } else { 1.0 };
    let psnr_db = psnr(reference, test, peak, mask)?;
    let ssim_v = ssim(reference, test, peak, mask)?;
    let evaluated = mask.map_or(reference.len(), |m| m.iter().filter(|k| **k).count());
    Ok(MetricReport {
        psnr: psnr_db,
        ssim: ssim_v,
        evaluated_pixel_count: evaluated,
        masked: mask.is_some(),
        ms_ssim: None,
        q_score: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Linear radiance, restricted to the mask when one is given.
    pub linear: MetricReport,
    /// Both images through the curve fitted to the reference, full frame,
    /// peak = max code.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tonemapped: Option<MetricReport>,
}

pub fn evaluate(
    reference: &Image2D,
    test: &Image2D,
    mask: Option<&[bool]>,
    tonemap: Option<&ToneMapParams>,
) -> Result<EvalReport> {
    let linear = compare(reference, test, mask)?;
    let tonemapped = match tonemap {
        Some(params) => {
            let curve = ReinhardCurve::fit(reference, params)?;
            let r = curve.apply(reference)?;
            let t = curve.apply(test)?;
            let peak = r.max_code();
            Some(MetricReport {
                psnr: psnr(r.image(), t.image(), peak, None)?,
                ssim: ssim(r.image(), t.image(), peak, None)?,
                evaluated_pixel_count: reference.len(),
                masked: false,
                ms_ssim: None,
                q_score: None,
            })
        }
        None => None,
    };
    Ok(EvalReport { linear, tonemapped })
}
