//! File formats: PFM for linear float images, PNG/PGM for integer codes.
//!
//! PFM stores 32-bit floats, so an `Image2D` round-trips bit-exactly only
//! when its values are representable as `f32`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageFormat};

use crate::error::{invalid, Error, Result};
use crate::imaging::{Image2D, LdrImage};

pub fn write_pfm<W: Write>(img: &Image2D, mut out: W) -> Result<()> {
    let (w, h) = img.dims();
    // Negative scale marks little-endian samples.
    write!(out, "Pf\n{w} {h}\n-1.0\n")?;
    let mut buf = Vec::with_capacity(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            buf.extend_from_slice(&(img.get(x, y) as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_pfm<R: BufRead>(mut input: R) -> Result<Image2D> {
    // Header is four whitespace-separated tokens (magic, width, height,
    // scale); the raster starts right after the whitespace byte that ends
    // the scale.
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        let mut token = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            input.read_exact(&mut byte)?;
            if byte[0].is_ascii_whitespace() {
                if !token.is_empty() {
                    break;
                }
            } else {
                token.push(byte[0]);
            }
        }
        tokens.push(String::from_utf8_lossy(&token).into_owned());
    }
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Codec(format!("bad PFM magic {other:?}"))),
    };
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Codec(format!("bad PFM dimension {s:?}")))
    };
    let width = parse_dim(&tokens[1])?;
    let height = parse_dim(&tokens[2])?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::Codec(format!("bad PFM scale {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Codec("PFM scale must be non-zero".into()));
    }
    let little_endian = scale < 0.0;

    let mut raw = vec![0u8; width * height * channels * 4];
    input.read_exact(&mut raw)?;
    let mut data = vec![0.0f64; width * height];
    for (i, chunk) in raw.chunks_exact(4 * channels).enumerate() {
        let row = height - 1 - i / width;
        let col = i % width;
        let sample = |c: usize| {
            let b: [u8; 4] = chunk[4 * c..4 * c + 4].try_into().unwrap();
            if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        };
        // Colour files are collapsed to their channel mean.
        let value = (0..channels).map(|c| sample(c) as f64).sum::<f64>() / channels as f64;
        data[row * width + col] = value;
    }
    Image2D::new(width, height, data)
}

pub fn save_pfm(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pfm(img, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<Image2D> {
    read_pfm(BufReader::new(File::open(path)?))
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
    {
        Some(ext) if ext == "png" => Ok(ImageFormat::Png),
        Some(ext) if ext == "pgm" || ext == "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(invalid(format!("unsupported image extension: {}", path.display()))),
    }
}

/// Writes integer codes (values are rounded). Depths above 8 use a 16-bit
/// container.
pub fn save_ldr(img: &LdrImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let (w, h) = img.dims();
    let result = if img.bit_depth() <= 8 {
        let buf: Vec<u8> = img.data().iter().map(|v| v.round() as u8).collect();
        image::save_buffer_with_format(path, &buf, w as u32, h as u32, ExtendedColorType::L8, format)
    } else {
        // The encoders take native-endian u16 samples and byte-swap themselves.
        let buf: Vec<u8> = img
            .data()
            .iter()
            .flat_map(|v| (v.round() as u16).to_ne_bytes())
            .collect();
        image::save_buffer_with_format(path, &buf, w as u32, h as u32, ExtendedColorType::L16, format)
    };
    result.map_err(|e| Error::Codec(e.to_string()))
}

/// Reads a grayscale PNG/PGM. `bit_depth` overrides the container depth
/// (e.g. 12-bit data stored in 16-bit samples).
pub fn load_ldr(path: impl AsRef<Path>, bit_depth: Option<u8>) -> Result<LdrImage> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let reader = image::ImageReader::with_format(BufReader::new(File::open(path)?), format);
    let decoded = reader.decode().map_err(|e| Error::Codec(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (data, container): (Vec<f64>, u8) = match decoded {
        DynamicImage::ImageLuma8(buf) => (buf.into_raw().into_iter().map(f64::from).collect(), 8),
        DynamicImage::ImageLuma16(buf) => (buf.into_raw().into_iter().map(f64::from).collect(), 16),
        other => {
            return Err(Error::Codec(format!(
                "{}: expected grayscale image, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let depth = bit_depth.unwrap_or(container);
    if depth > container {
        return Err(invalid(format!(
            "bit depth {depth} exceeds the {container}-bit container of {}",
            path.display()
        )));
    }
    LdrImage::new(Image2D::new(w, h, data)?, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pfm_round_trip(img: &Image2D) -> Image2D {
        let mut buf = Vec::new();
        write_pfm(img, &mut buf).unwrap();
        read_pfm(&buf[..]).unwrap()
    }

    proptest! {
        #[test]
        fn pfm_round_trip_is_bit_exact(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            let mut s = seed;
            let img = Image2D::from_fn(w, h, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 40) as f32 * 1.37e-3) as f64
            }).unwrap();
            let back = pfm_round_trip(&img);
            prop_assert_eq!(back.dims(), img.dims());
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn pfm_rows_are_bottom_to_top() {
        let img = Image2D::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        write_pfm(&img, &mut buf).unwrap();
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&buf[..header.len()], header);
        let first = f32::from_le_bytes(buf[header.len()..header.len() + 4].try_into().unwrap());
        assert_eq!(first, 3.0);
    }

    #[test]
    fn pfm_big_endian_read() {
        let mut buf = b"Pf\n1 2\n1.0\n".to_vec();
        buf.extend_from_slice(&5.0f32.to_be_bytes());
        buf.extend_from_slice(&7.0f32.to_be_bytes());
        let img = read_pfm(&buf[..]).unwrap();
        assert_eq!(img.data(), &[7.0, 5.0]);
    }

    #[test]
    fn pfm_rejects_bad_magic_and_truncation() {
        assert!(read_pfm(&b"P6\n1 1\n-1\n\0\0\0\0"[..]).is_err());
        assert!(read_pfm(&b"Pf\n2 2\n-1\n\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn ldr_png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img8 = LdrImage::new(Image2D::new(3, 2, vec![0.0, 1.0, 2.0, 128.0, 254.0, 255.0]).unwrap(), 8).unwrap();
        let img16 = LdrImage::new(Image2D::new(2, 2, vec![0.0, 300.0, 4095.0, 65535.0]).unwrap(), 16).unwrap();
        for ext in ["png", "pgm"] {
            let p8 = dir.path().join(format!("a8.{ext}"));
            save_ldr(&img8, &p8).unwrap();
            assert_eq!(load_ldr(&p8, None).unwrap(), img8);

            let p16 = dir.path().join(format!("a16.{ext}"));
            save_ldr(&img16, &p16).unwrap();
            assert_eq!(load_ldr(&p16, None).unwrap(), img16);
        }
    }

    #[test]
    fn ldr_depth_override() {
        let dir = tempfile::tempdir().unwrap();
        let img = LdrImage::new(Image2D::new(2, 1, vec![0.0, 4095.0]).unwrap(), 12).unwrap();
        let p = dir.path().join("a.png");
        save_ldr(&img, &p).unwrap();
        assert_eq!(load_ldr(&p, Some(12)).unwrap(), img);
        assert!(load_ldr(&p, Some(8)).is_err());
    }

    #[test]
    fn unknown_extension_rejected() {
        let img = LdrImage::new(Image2D::zeros(1, 1), 8).unwrap();
        assert!(save_ldr(&img, "/tmp/x.bmp").is_err());
    }
}
