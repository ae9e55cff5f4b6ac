use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::image::{Image, RangeTag};

/// File extensions [`load_image`] understands.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "pnm", "ppm"];

/// Rec. 601 luma weights.
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

fn unreadable(path: &Path, reason: impl ToString) -> Error {
    Error::UnreadableImage {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn luma<P: Copy + Into<f32>>(px: &[P], channels: usize, scale: f32) -> Vec<f32> {
    px.chunks_exact(channels)
        .map(|c| match channels {
            1 | 2 => c[0].into() / scale,
            _ => (LUMA[0] * c[0].into() + LUMA[1] * c[1].into() + LUMA[2] * c[2].into()) / scale,
        })
        .collect()
}

/// Reads a PNG or PNM raster as a unit-range grayscale image. Colour is
/// reduced with Rec. 601 luma weights; 16-bit data is divided by 65535.
pub fn load_image(path: &Path) -> Result<Image> {
    let (h, w, pixels) = load_gray(path)?;
    let mut out = Image::clamped(h, w, pixels, RangeTag::Unit).map_err(|e| unreadable(path, e))?;
    out.source_path = Some(path.to_path_buf());
    Ok(out)
}

/// Like [`load_image`] but returns the bare `(height, width, pixels)` grid,
/// so single-row or single-column rasters are accepted.
pub fn load_gray(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let reader = ImageReader::open(path)
        .map_err(|e| unreadable(path, e))?
        .with_guessed_format()
        .map_err(|e| unreadable(path, e))?;
    if reader.format().is_none() {
        return Err(Error::UnsupportedFormat(format!("{}: unrecognised raster format", path.display())));
    }
    let img = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => Error::UnsupportedFormat(format!("{}: {u}", path.display())),
        other => unreadable(path, other),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match &img {
        DynamicImage::ImageLuma8(b) => luma(b.as_raw(), 1, 255.0),
        DynamicImage::ImageLumaA8(b) => luma(b.as_raw(), 2, 255.0),
        DynamicImage::ImageRgb8(b) => luma(b.as_raw(), 3, 255.0),
        DynamicImage::ImageRgba8(b) => luma(b.as_raw(), 4, 255.0),
        DynamicImage::ImageLuma16(b) => luma(b.as_raw(), 1, 65535.0),
        DynamicImage::ImageLumaA16(b) => luma(b.as_raw(), 2, 65535.0),
        DynamicImage::ImageRgb16(b) => luma(b.as_raw(), 3, 65535.0),
        DynamicImage::ImageRgba16(b) => luma(b.as_raw(), 4, 65535.0),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: pixel type {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok((h, w, pixels))
}

fn unit_values(img: &Image) -> impl Iterator<Item = f64> + '_ {
    let k = 1.0 / img.range().max();
    img.pixels().iter().map(move |&v| (v as f64 * k).clamp(0.0, 1.0))
}

fn write_error(path: &Path, e: impl ToString) -> Error {
    Error::Io(std::io::Error::other(format!("{}: {}", path.display(), e.to_string())))
}

/// Writes an 8-bit grayscale file; the format follows the extension.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let data: Vec<u8> = unit_values(img).map(|v| (v * 255.0).round() as u8).collect();
    let buf: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(img.width() as u32, img.height() as u32, data)
        .expect("buffer matches image size");
    buf.save(path).map_err(|e| write_error(path, e))
}

/// Writes a 16-bit grayscale PNG.
pub fn save_image_16(img: &Image, path: &Path) -> Result<()> {
    let (h, w) = img.shape();
    let data: Vec<f32> = unit_values(img).map(|v| v as f32).collect();
    save_gray_16(h, w, &data, path)
}

/// Writes a `height x width` grid of unit-range values as a 16-bit
/// grayscale PNG. Values are clamped to [0, 1].
pub fn save_gray_16(height: usize, width: usize, values: &[f32], path: &Path) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "{height}x{width} grid needs {} values, got {}",
            height * width,
            values.len()
        )));
    }
    let data: Vec<u16> = values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(width as u32, height as u32, data).expect("buffer matches grid size");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| write_error(path, e))
}

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    list_matching(dir, None)
}

/// Like [`list_images`] but keeps only names matching a glob pattern.
pub fn list_matching(dir: &Path, pattern: Option<&str>) -> Result<Vec<PathBuf>> {
    let pat = pattern
        .map(glob::Pattern::new)
        .transpose()
        .map_err(|e| Error::InvalidConfig(format!("bad file pattern: {e}")))?;
    let entries = std::fs::read_dir(dir).map_err(|e| unreadable(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if !path.is_file() || !has_image_extension(&path) {
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if pat.as_ref().map_or(true, |p| p.matches(name)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    #[test]
    fn grayscale_and_colour_loading() {
        let dir = tempfile::tempdir().unwrap();
        let gray = dir.path().join("g.png");
        ImageBuffer::<Luma<u8>, _>::from_raw(2, 2, vec![128u8, 0, 255, 64]).unwrap().save(&gray).unwrap();
        let img = load_image(&gray).unwrap();
        assert_eq!(img.get(0, 0), 128.0 / 255.0);
        assert_eq!(img.source_path.as_deref(), Some(gray.as_path()));

        let red = dir.path().join("r.png");
        RgbImage::from_pixel(2, 2, Rgb([255, 0, 0])).save(&red).unwrap();
        assert!((load_image(&red).unwrap().get(1, 1) - 0.299).abs() < 1e-6);

        let deep = dir.path().join("d.png");
        ImageBuffer::<Luma<u16>, _>::from_raw(2, 2, vec![65535u16, 0, 32768, 1]).unwrap().save(&deep).unwrap();
        let img = load_image(&deep).unwrap();
        assert_eq!(img.get(0, 0), 1.0);
        assert_eq!(img.get(1, 0), 32768.0 / 65535.0);
    }

    #[test]
    fn missing_and_garbage_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image(&dir.path().join("nope.png")), Err(Error::UnreadableImage { .. })));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not an image at all").unwrap();
        assert!(load_image(&junk).is_err());
    }

    #[test]
    fn save_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(2, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0], RangeTag::Unit).unwrap();
        for (name, tol) in [("a.png", 0.5 / 255.0), ("a.pgm", 0.5 / 255.0)] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            assert!(back.pixels().iter().zip(img.pixels()).all(|(a, b)| (a - b).abs() <= tol + 1e-7));
        }
        let p = dir.path().join("deep.png");
        save_image_16(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert!(back.pixels().iter().zip(img.pixels()).all(|(a, b)| (a - b).abs() <= 0.5 / 65535.0 + 1e-7));
        assert_eq!(list_images(dir.path()).unwrap().len(), 3);
        assert_eq!(list_matching(dir.path(), Some("*.pgm")).unwrap().len(), 1);
    }
}
