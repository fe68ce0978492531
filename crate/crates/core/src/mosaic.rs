//! Sensor mosaic layout and conversion between raw frames and
//! per-polarity images.
//!
//! The sensor tiles a 4×4 superpixel: four 2×2 Bayer blocks (R, G1 on top,
//! G2, B below), each block itself a 2×2 grid of polarizers laid out
//! row-major as 90°, 45° / 135°, 0°. Both tables below are the single
//! source of truth for that layout; the simulator writes frames through
//! [`remux`] and [`compose`], so it cannot drift from [`demux`].
//!
//! No interpolation is done: each polarity image is the quarter-resolution
//! subsample of its sensor sites.

use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::imaging::{Image2D, LdrImage, Polarity, PolarityStack};

/// Side length of the repeating superpixel.
pub const SUPERPIXEL: usize = 4;

/// `(dx, dy)` of each Bayer block's top-left corner inside the superpixel,
/// indexed by [`BayerSite`].
pub const BAYER_BLOCK_OFFSETS: [(usize, usize); 4] = [(0, 0), (2, 0), (0, 2), (2, 2)];

/// `(dx, dy)` of each polarizer inside a 2×2 block, indexed by [`Polarity`].
pub const POLARIZER_OFFSETS: [(usize, usize); 4] = [
    (1, 1), // 0°
    (1, 0), // 45°
    (0, 0), // 90°
    (0, 1), // 135°
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BayerSite {
    R = 0,
    G1 = 1,
    G2 = 2,
    B = 3,
}

impl BayerSite {
    pub const ALL: [BayerSite; 4] = [BayerSite::R, BayerSite::G1, BayerSite::G2, BayerSite::B];

    fn offset(self) -> (usize, usize) {
        BAYER_BLOCK_OFFSETS[self as usize]
    }
}

/// Colour channel to extract from a mosaic. `Luma` averages the two greens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Channel {
    R,
    G1,
    G2,
    B,
    #[default]
    Luma,
}

impl Channel {
    /// Bayer sites this channel reads from (and writes to in [`remux`]).
    pub fn sites(self) -> &'static [BayerSite] {
        match self {
            Channel::R => &[BayerSite::R],
            Channel::G1 => &[BayerSite::G1],
            Channel::G2 => &[BayerSite::G2],
            Channel::B => &[BayerSite::B],
            Channel::Luma => &[BayerSite::G1, BayerSite::G2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::R => "r",
            Channel::G1 => "g1",
            Channel::G2 => "g2",
            Channel::B => "b",
            Channel::Luma => "luma",
        }
    }
}

impl From<BayerSite> for Channel {
    fn from(site: BayerSite) -> Self {
        match site {
            BayerSite::R => Channel::R,
            BayerSite::G1 => Channel::G1,
            BayerSite::G2 => Channel::G2,
            BayerSite::B => Channel::B,
        }
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r" => Ok(Channel::R),
            "g1" => Ok(Channel::G1),
            "g2" => Ok(Channel::G2),
            "b" => Ok(Channel::B),
            "luma" => Ok(Channel::Luma),
            other => Err(invalid(format!("unknown channel {other:?}"))),
        }
    }
}

/// A raw sensor frame in the polarizer/Bayer layout above.
#[derive(Debug, Clone, PartialEq)]
pub struct MosaicFrame {
    image: LdrImage,
}

impl MosaicFrame {
    pub fn new(image: LdrImage) -> Result<Self> {
        let (w, h) = image.dims();
        if w % SUPERPIXEL != 0 || h % SUPERPIXEL != 0 || w == 0 || h == 0 {
            return Err(invalid(format!(
                "mosaic dimensions {w}x{h} must be positive multiples of {SUPERPIXEL}"
            )));
        }
        Ok(Self { image })
    }

    pub fn image(&self) -> &LdrImage {
        &self.image
    }

    pub fn into_image(self) -> LdrImage {
        self.image
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    /// Dimensions of each per-polarity image.
    pub fn polarity_dims(&self) -> (usize, usize) {
        let (w, h) = self.dims();
        (w / SUPERPIXEL, h / SUPERPIXEL)
    }
}

/// Sensor coordinates of superpixel `(sx, sy)`'s sample for `site`/`polarity`.
#[inline]
pub fn sensor_position(sx: usize, sy: usize, site: BayerSite, polarity: Polarity) -> (usize, usize) {
    let (bx, by) = site.offset();
    let (px, py) = POLARIZER_OFFSETS[polarity.index()];
    (sx * SUPERPIXEL + bx + px, sy * SUPERPIXEL + by + py)
}

/// Splits a frame into the four polarity images of one channel.
pub fn demux(frame: &MosaicFrame, channel: Channel) -> Result<PolarityStack> {
    let (pw, ph) = frame.polarity_dims();
    let src = frame.image().image();
    let sites = channel.sites();
    let images = Polarity::ALL.map(|p| {
        let mut data = Vec::with_capacity(pw * ph);
        for sy in 0..ph {
            for sx in 0..pw {
                let sum: f64 = sites
                    .iter()
                    .map(|&site| {
                        let (x, y) = sensor_position(sx, sy, site, p);
                        src.get(x, y)
                    })
                    .sum();
                data.push(sum / sites.len() as f64);
            }
        }
        data
    });
    let depth = frame.image().bit_depth();
    let [a, b, c, d] = images.map(|data| Image2D::new(pw, ph, data).and_then(|img| LdrImage::new(img, depth)));
    PolarityStack::new([a?, b?, c?, d?])
}

/// Writes `stack` into the given Bayer sites of a fresh frame; every other
/// site is zero. With `channel.sites()` this inverts [`demux`].
pub fn remux(stack: &PolarityStack, sites: &[BayerSite]) -> Result<MosaicFrame> {
    let (pw, ph) = stack.dims();
    let (w, h) = (pw * SUPERPIXEL, ph * SUPERPIXEL);
    let mut data = vec![0.0; w * h];
    for &site in sites {
        write_site(&mut data, w, stack, site);
    }
    MosaicFrame::new(LdrImage::new(Image2D::new(w, h, data)?, stack.bit_depth())?)
}

/// Builds a full frame from one stack per Bayer site (R, G1, G2, B).
pub fn compose(stacks: [&PolarityStack; 4]) -> Result<MosaicFrame> {
    let dims = stacks[0].dims();
    let depth = stacks[0].bit_depth();
    for s in &stacks[1..] {
        if s.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: s.dims(),
            });
        }
        if s.bit_depth() != depth {
            return Err(invalid("stacks have different bit depths"));
        }
    }
    let (w, h) = (dims.0 * SUPERPIXEL, dims.1 * SUPERPIXEL);
    let mut data = vec![0.0; w * h];
    for (site, stack) in BayerSite::ALL.into_iter().zip(stacks) {
        write_site(&mut data, w, stack, site);
    }
    MosaicFrame::new(LdrImage::new(Image2D::new(w, h, data)?, depth)?)
}

fn write_site(data: &mut [f64], width: usize, stack: &PolarityStack, site: BayerSite) {
    let (pw, ph) = stack.dims();
    for p in Polarity::ALL {
        let img = stack.get(p).image();
        for sy in 0..ph {
            for sx in 0..pw {
                let (x, y) = sensor_position(sx, sy, site, p);
                data[y * width + x] = img.get(sx, sy);
            }
        }
    }
}
