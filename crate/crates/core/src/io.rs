//! 8-bit PNG/TIFF file and buffer I/O.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::PlanarImage;

fn to_rgb_image(img: &PlanarImage) -> RgbImage {
    RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .expect("buffer length matches dimensions")
}

fn from_dynamic(img: image::DynamicImage) -> Result<PlanarImage> {
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    PlanarImage::from_rgb8(h as usize, w as usize, rgb.as_raw())
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "tif" | "tiff" => Ok(ImageFormat::Tiff),
        _ => Err(Error::config(format!(
            "{}: unsupported image extension (use .png, .tif or .tiff)",
            path.display()
        ))),
    }
}

/// Loads any PNG or TIFF and converts it to 8-bit RGB in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<PlanarImage> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|source| Error::Image { path: path.into(), source })?;
    from_dynamic(img)
}

/// Writes an 8-bit RGB PNG or TIFF, chosen by extension.
pub fn save_image(img: &PlanarImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    to_rgb_image(img)
        .save_with_format(path, format)
        .map_err(|source| Error::Image { path: path.into(), source })
}

pub fn encode_png(img: &PlanarImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    to_rgb_image(img)
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Protocol(format!("PNG encode failed: {e}")))?;
    Ok(buf.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<PlanarImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Protocol(format!("payload is not a valid PNG: {e}")))?;
    from_dynamic(img)
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_buffer_round_trip() {
        let img = PlanarImage::from_fn(5, 7, |r, c| [r as f64 / 4.0, c as f64 / 6.0, 0.5]).unwrap();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img.quantize_u8());
    }

    #[test]
    fn garbage_is_not_png() {
        assert!(matches!(decode_png(b"hello"), Err(Error::Protocol(_))));
    }

    #[test]
    fn file_round_trip_png_and_tiff() {
        let dir = tempfile::tempdir().unwrap();
        let img = PlanarImage::from_fn(9, 4, |r, c| [r as f64 / 8.0, c as f64 / 3.0, 0.2]).unwrap().quantize_u8();
        for name in ["a.png", "a.tif"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), img);
        }
        assert!(save_image(&img, dir.path().join("a.bmp")).is_err());
    }
}
