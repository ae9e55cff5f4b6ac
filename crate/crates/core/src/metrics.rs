//! Full-reference quality metrics on byte-range values.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde_json::json;

use crate::data::{list_images, load_image};
use crate::error::{Error, Result};
use crate::image::{Image, RangeTag};
use crate::manifest::Manifest;
use crate::nn::Float;

/// Peak value of 8-bit data.
pub const PEAK: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsimMode {
    /// One evaluation over whole-image statistics.
    Global,
    /// Mean over all fully contained Gaussian windows.
    Windowed,
}

impl SsimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SsimMode::Global => "global",
            SsimMode::Windowed => "windowed",
        }
    }
}

impl FromStr for SsimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SsimMode::Global),
            "windowed" => Ok(SsimMode::Windowed),
            other => Err(Error::InvalidConfig(format!("ssim mode must be global or windowed, got {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimConfig {
    pub mode: SsimMode,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            mode: SsimMode::Windowed,
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: PEAK,
        }
    }
}

impl SsimConfig {
    pub fn global() -> Self {
        SsimConfig {
            mode: SsimMode::Global,
            ..Default::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidConfig(format!("ssim window must be odd, got {}", self.window)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("ssim sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("ssim_mode", self.mode.as_str());
        m.set("window", self.window);
        m.set("sigma", self.sigma);
        m.set("k1", self.k1);
        m.set("k2", self.k2);
        m.set("dynamic_range", self.dynamic_range);
        m
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let d = SsimConfig::default();
        let cfg = SsimConfig {
            mode: m.parse_or("ssim_mode", d.mode)?,
            window: m.parse_or("window", d.window)?,
            sigma: m.parse_or("sigma", d.sigma)?,
            k1: m.parse_or("k1", d.k1)?,
            k2: m.parse_or("k2", d.k2)?,
            dynamic_range: m.parse_or("dynamic_range", d.dynamic_range)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn describe(&self) -> String {
        format!(
            "ssim_mode={} window={} sigma={} k1={} k2={} L={}",
            self.mode.as_str(),
            self.window,
            self.sigma,
            self.k1,
            self.k2,
            self.dynamic_range
        )
    }
}

/// Both images as byte-range `f64` values after shape and range checks.
fn byte_pair<T: Float>(a: &Image<T>, b: &Image<T>) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.range() != b.range() {
        return Err(Error::RangeTagMismatch(format!("{} vs {}", a.range().name(), b.range().name())));
    }
    let k = PEAK / a.range().max();
    let conv = |img: &Image<T>| img.pixels().iter().map(|v| v.as_f64() * k).collect();
    Ok((conv(a), conv(b)))
}

/// `10 log10(255^2 / MSE)` in decibels; infinite for identical images.
pub fn psnr<T: Float>(s: &Image<T>, s_hat: &Image<T>) -> Result<f64> {
    let (a, b) = byte_pair(s, s_hat)?;
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

pub fn ssim<T: Float>(x: &Image<T>, y: &Image<T>, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    let (a, b) = byte_pair(x, y)?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    match cfg.mode {
        SsimMode::Global => {
            let n = a.len() as f64;
            let mx = a.iter().sum::<f64>() / n;
            let my = b.iter().sum::<f64>() / n;
            let vx = a.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / n;
            let vy = b.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / n;
            let cxy = a.iter().zip(&b).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
            Ok(ssim_formula(mx, my, vx, vy, cxy, c1, c2))
        }
        SsimMode::Windowed => {
            let (h, w) = x.shape();
            let k = cfg.window;
            if h < k || w < k {
                return Err(Error::ImageSmallerThanWindow { window: k });
            }
            let g = gaussian_window(k, cfg.sigma);
            let (oh, ow) = (h - k + 1, w - k + 1);
            let mut total = 0.0;
            for i in 0..oh {
                for j in 0..ow {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for p in 0..k {
                        for q in 0..k {
                            let wt = g[p] * g[q];
                            let idx = (i + p) * w + j + q;
                            let (u, v) = (a[idx], b[idx]);
                            mx += wt * u;
                            my += wt * v;
                            xx += wt * (u * u);
                            yy += wt * (v * v);
                            xy += wt * (u * v);
                        }
                    }
                    let vx = xx - mx * mx;
                    let vy = yy - my * my;
                    let cxy = xy - mx * my;
                    total += ssim_formula(mx, my, vx, vy, cxy, c1, c2);
                }
            }
            Ok(total / (oh * ow) as f64)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image rows in filename order plus their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
    pub cfg: SsimConfig,
    /// Range the inputs were in before rescaling to bytes.
    pub input_range: RangeTag,
}

struct Num(f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str(if self.0 > 0.0 { "inf" } else { "-inf" })
        } else {
            write!(f, "{:.6}", self.0)
        }
    }
}

fn json_num(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(Num(v).to_string())
    }
}

impl MetricTable {
    pub fn from_rows(rows: Vec<MetricRow>, cfg: SsimConfig, input_range: RangeTag) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = MetricRow {
            name: "mean".into(),
            psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        };
        MetricTable {
            rows,
            mean,
            cfg,
            input_range,
        }
    }

    fn header(&self) -> String {
        format!(
            "# {} peak=255 input_range={} rescaled_to=byte",
            self.cfg.describe(),
            self.input_range.name()
        )
    }

    /// Tab-separated table with a header comment and a final mean row.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\nfilename\tpsnr_db\tssim\n", self.header());
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            out.push_str(&format!("{}\t{}\t{}\n", r.name, Num(r.psnr_db), Num(r.ssim)));
        }
        out
    }

    /// The same rows as one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            let rec = json!({
                "filename": r.name,
                "psnr_db": json_num(r.psnr_db),
                "ssim": json_num(r.ssim),
                "ssim_mode": self.cfg.mode.as_str(),
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

/// Compares every image in `sr_dir` with the same-named image in `hr_dir`.
pub fn evaluate_folder(sr_dir: &Path, hr_dir: &Path, cfg: &SsimConfig) -> Result<MetricTable> {
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let sr: Vec<String> = list_images(sr_dir)?.iter().map(|p| name(p)).collect();
    let hr: Vec<String> = list_images(hr_dir)?.iter().map(|p| name(p)).collect();
    for f in &sr {
        if !hr.contains(f) {
            return Err(Error::MissingCounterpart(format!("{f} has no counterpart in {}", hr_dir.display())));
        }
    }
    for f in &hr {
        if !sr.contains(f) {
            return Err(Error::MissingCounterpart(format!("{f} has no counterpart in {}", sr_dir.display())));
        }
    }
    let mut rows = Vec::with_capacity(sr.len());
    for f in &sr {
        let a = load_image(&sr_dir.join(f))?;
        let b = load_image(&hr_dir.join(f))?;
        rows.push(MetricRow {
            name: f.clone(),
            psnr_db: psnr(&a, &b)?,
            ssim: ssim(&a, &b, cfg)?,
        });
    }
    Ok(MetricTable::from_rows(rows, cfg.clone(), RangeTag::Unit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn byte(h: usize, w: usize, px: Vec<f64>) -> Image<f64> {
        Image::new(h, w, px, RangeTag::Byte).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = byte(2, 2, vec![10.0, 20.0, 30.0, 40.0]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = byte(2, 2, vec![11.0, 19.0, 31.0, 39.0]);
        assert!((psnr(&a, &b).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-12);
        assert!((psnr(&a, &b).unwrap() - 48.1308).abs() < 1e-3);
        let z = byte(2, 2, vec![0.0; 4]);
        let f = byte(2, 2, vec![255.0; 4]);
        assert_eq!(psnr(&z, &f).unwrap(), 0.0);
        let u = Image::new(2, 2, vec![0.0; 4], RangeTag::Unit).unwrap();
        assert!(matches!(psnr(&z, &u), Err(Error::RangeTagMismatch(_))));
        let small = byte(2, 3, vec![0.0; 6]);
        assert!(matches!(psnr(&z, &small), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn unit_images_are_rescaled() {
        let a = Image::new(2, 2, vec![0.0f64, 0.5, 1.0, 0.25], RangeTag::Unit).unwrap();
        let b = Image::new(2, 2, vec![1.0 / 255.0, 0.5 + 1.0 / 255.0, 1.0 - 1.0 / 255.0, 0.25 - 1.0 / 255.0], RangeTag::Unit).unwrap();
        assert!((psnr(&a, &b).unwrap() - 48.1308).abs() < 1e-3);
    }

    #[test]
    fn ssim_examples() {
        let z = byte(4, 4, vec![0.0; 16]);
        let f = byte(4, 4, vec![255.0; 16]);
        let cfg = SsimConfig::global();
        let c1 = cfg.c1();
        assert!((c1 - 6.5025).abs() < 1e-12);
        let v = ssim(&z, &f, &cfg).unwrap();
        assert!((v - c1 / (255.0 * 255.0 + c1)).abs() < 1e-15);
        assert!((v - 9.9998e-5).abs() < 1e-8);
        let x = byte(4, 4, (0..16).map(|v| (v * 13 % 256) as f64).collect());
        assert_eq!(ssim(&x, &x, &cfg).unwrap(), 1.0);
        assert!(matches!(ssim(&x, &x, &SsimConfig::default()), Err(Error::ImageSmallerThanWindow { window: 11 })));
    }

    #[test]
    fn global_ssim_matches_direct_statistics() {
        let px: Vec<f64> = (0..64).map(|v| ((v * 97 + 13) % 256) as f64).collect();
        let py: Vec<f64> = (0..64).map(|v| ((v * 31 + 200) % 256) as f64).collect();
        let (x, y) = (byte(8, 8, px.clone()), byte(8, 8, py.clone()));
        let n = 64.0;
        let (mut sx, mut sy) = (0.0, 0.0);
        for k in 0..64 {
            sx += px[k];
            sy += py[k];
        }
        let (mx, my) = (sx / n, sy / n);
        let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
        for k in 0..64 {
            vx += (px[k] - mx).powi(2) / n;
            vy += (py[k] - my).powi(2) / n;
            cxy += (px[k] - mx) * (py[k] - my) / n;
        }
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let oracle = (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        assert!((ssim(&x, &y, &SsimConfig::global()).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn gaussian_window_is_normalised() {
        let g = gaussian_window(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(g[0], g[10]);
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (prop::collection::vec(0.0f64..=255.0, 256), prop::collection::vec(0.0f64..=255.0, 256))
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric((a, b) in pair()) {
            let (x, y) = (byte(16, 16, a), byte(16, 16, b));
            prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
            for cfg in [SsimConfig::global(), SsimConfig::default()] {
                prop_assert_eq!(ssim(&x, &y, &cfg).unwrap(), ssim(&y, &x, &cfg).unwrap());
            }
        }

        #[test]
        fn windowed_self_similarity_is_exact(a in prop::collection::vec(0.0f64..=255.0, 196)) {
            let x = byte(14, 14, a);
            prop_assert_eq!(ssim(&x, &x, &SsimConfig::default()).unwrap(), 1.0);
        }

        #[test]
        fn psnr_falls_with_noise_amplitude(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<f64> = (0..256).map(|_| rng.gen_range(64.0..192.0)).collect();
            let noise: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = byte(16, 16, base.clone());
            let mut last = f64::INFINITY;
            for amp in [1.0, 4.0, 16.0] {
                let noisy: Vec<f64> = base.iter().zip(&noise).map(|(b, n)| b + amp * n).collect();
                let p = psnr(&x, &byte(16, 16, noisy)).unwrap();
                prop_assert!(p < last);
                last = p;
            }
        }
    }

    #[test]
    fn table_mean_and_formats() {
        let rows = vec![
            MetricRow { name: "a.png".into(), psnr_db: 30.0, ssim: 0.9 },
            MetricRow { name: "b.png".into(), psnr_db: 40.0, ssim: 0.7 },
        ];
        let t = MetricTable::from_rows(rows, SsimConfig::global(), RangeTag::Unit);
        assert_eq!(t.mean.psnr_db, 35.0);
        assert!((t.mean.ssim - 0.8).abs() < 1e-15);
        let tsv = t.to_tsv();
        assert!(tsv.starts_with("# ssim_mode=global"));
        assert!(tsv.trim_end().ends_with("mean\t35.000000\t0.800000"));
        assert_eq!(t.to_jsonl().lines().count(), 3);
    }
}
