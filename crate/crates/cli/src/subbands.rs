//! Subband files written by `decompose` and read by `reconstruct`.
//!
//! LL is stored as is. Detail coefficients are signed, so they are stored
//! offset-encoded as `0.5 + c / 2`. Files are 16-bit PNGs; with `raw`
//! every band also gets a 32-bit float sidecar that reconstruction
//! prefers.

use std::fs;
use std::path::{Path, PathBuf};

use waveboost::data::{load_gray, load_image, save_gray_16};
use waveboost::manifest::Manifest;
use waveboost::trainer::StoredTensor;
use waveboost::wavelet::{dwt2_haar, idwt2_haar, Band, SubbandSet, BAND_NAMES};
use waveboost::{Error, Image, RangeTag, Result};

pub const MANIFEST_FILE: &str = "subbands.txt";
pub const DETAIL_ENCODING: &str = "0.5 + c / 2";

fn encode(band: usize, c: f32) -> f32 {
    if band == 0 {
        c
    } else {
        0.5 + c / 2.0
    }
}

fn decode(band: usize, v: f32) -> f32 {
    if band == 0 {
        v
    } else {
        2.0 * (v - 0.5)
    }
}

fn band_file(stem: &str, name: &str, ext: &str) -> String {
    format!("{stem}_{name}.{ext}")
}

/// Decomposes `input` and writes four bands plus a manifest into `out`.
/// Returns the written paths. `extra` is echoed into the manifest.
pub fn decompose(input: &Path, out: &Path, raw: bool, extra: &Manifest) -> Result<Vec<PathBuf>> {
    let img = load_image(input)?;
    let sb = dwt2_haar(&img)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    fs::create_dir_all(out)?;
    let mut m = extra.clone();
    m.set("source", input.display());
    m.set("stem", &stem);
    m.set("parent_height", sb.parent_shape.0);
    m.set("parent_width", sb.parent_shape.1);
    m.set("bit_depth", 16);
    m.set("encoding.LL", "c");
    m.set("encoding.detail", DETAIL_ENCODING);
    m.set("encoding.clipped", "[0, 1]");
    m.set("raw", raw);
    let mut written = Vec::new();
    for (i, (band, name)) in sb.bands().into_iter().zip(BAND_NAMES).enumerate() {
        let px: Vec<f32> = band.data.iter().map(|&c| encode(i, c)).collect();
        let path = out.join(band_file(&stem, name, "png"));
        save_gray_16(band.height, band.width, &px, &path)?;
        written.push(path);
        if raw {
            let t = StoredTensor {
                shape: vec![band.height, band.width],
                data: band.data.clone(),
            };
            let path = out.join(band_file(&stem, name, "f32"));
            fs::write(&path, t.encode())?;
            written.push(path);
        }
    }
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, m.to_text())?;
    written.push(path);
    Ok(written)
}

fn read_band(dir: &Path, stem: &str, index: usize, raw: bool) -> Result<Band> {
    let name = BAND_NAMES[index];
    if raw {
        let path = dir.join(band_file(stem, name, "f32"));
        let bytes = fs::read(&path).map_err(|e| Error::UnreadableImage {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let t = StoredTensor::decode(&bytes, &path)?;
        if t.shape.len() != 2 {
            return Err(Error::ShapeMismatch(format!("{}: expected a 2-D band, got {:?}", path.display(), t.shape)));
        }
        return Ok(Band::new(t.shape[0], t.shape[1], t.data));
    }
    let (h, w, px) = load_gray(&dir.join(band_file(stem, name, "png")))?;
    let data = px.iter().map(|&v| decode(index, v)).collect();
    Ok(Band::new(h, w, data))
}

/// Rebuilds the image from a directory written by [`decompose`].
pub fn reconstruct(dir: &Path) -> Result<Image> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::UnreadableImage {
        path: mpath.clone(),
        reason: e.to_string(),
    })?;
    let m = Manifest::from_text(&text)?;
    let stem = m.require("stem")?.to_string();
    let raw: bool = m.parse_or("raw", false)?;
    let parent = (m.parse_or("parent_height", 0usize)?, m.parse_or("parent_width", 0usize)?);
    let sb = SubbandSet {
        ll: read_band(dir, &stem, 0, raw)?,
        lh: read_band(dir, &stem, 1, raw)?,
        hl: read_band(dir, &stem, 2, raw)?,
        hh: read_band(dir, &stem, 3, raw)?,
        parent_shape: parent,
        range: RangeTag::Unit,
    };
    let img = idwt2_haar(&sb)?;
    let (h, w) = img.shape();
    Image::clamped(h, w, img.into_pixels(), RangeTag::Unit)
}
