//! Run configuration: bracketed sections of `key = value` lines.

use std::collections::BTreeSet;
use std::path::Path;

use waveboost::data::DatasetSpec;
use waveboost::losses::Variant;
use waveboost::manifest::Manifest;
use waveboost::metrics::SsimConfig;
use waveboost::networks::PipelineMode;
use waveboost::trainer::TrainConfig;
use waveboost::{Error, Result};

pub const SECTIONS: [&str; 8] = ["dataset", "generator", "critic", "encoder", "train", "loss", "metrics", "report"];

/// Experiment list for `report`: every variant crossed with every rho.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportSpec {
    pub variants: Vec<Variant>,
    pub rho: Vec<usize>,
}

impl ReportSpec {
    fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        let v: Vec<String> = self.variants.iter().map(Variant::to_string).collect();
        let r: Vec<String> = self.rho.iter().map(usize::to_string).collect();
        m.set("variants", v.join(","));
        m.set("rho", r.join(","));
        m
    }
}

fn default_report(rho: usize) -> ReportSpec {
    ReportSpec {
        variants: vec![
            Variant::CnnVgg,
            Variant::Wgan,
            Variant::Perceptual,
            Variant::WganVgg,
            Variant::WganMaP,
        ],
        rho: vec![rho],
    }
}

fn split_list<T: std::str::FromStr>(raw: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let out: Vec<T> = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::InvalidConfig(format!("bad entry `{}` in `report.{key}`: {e}", s.trim())))
        })
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::InvalidConfig(format!("`report.{key}` is empty")));
    }
    Ok(out)
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<PipelineMode>,
    pub scale: Option<usize>,
}

/// Fully resolved configuration with defaults applied.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub report: ReportSpec,
}

fn allowed_keys() -> BTreeSet<String> {
    let mut m = TrainConfig::default().run_manifest();
    m.nest("dataset", &DatasetSpec::default().to_manifest());
    m.nest("report", &default_report(1).to_manifest());
    m.keys().map(str::to_string).collect()
}

/// Parses the section format into dotted keys, rejecting unknown sections
/// and keys.
pub fn parse_sections(text: &str) -> Result<Manifest> {
    let allowed = allowed_keys();
    let mut out = Manifest::new();
    let mut section: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(Error::InvalidConfig(format!("line {}: unknown section `{name}`", n + 1)));
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        let sec = section
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: key `{k}` appears before any section", n + 1)))?;
        let full = format!("{sec}.{k}");
        if !allowed.contains(&full) {
            return Err(Error::InvalidConfig(format!("line {}: unknown key `{k}` in section [{sec}]", n + 1)));
        }
        out.set(full, v.trim());
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_manifest(m: &Manifest, o: &Overrides) -> Result<Self> {
        let mut m = m.clone();
        if let Some(seed) = o.seed {
            m.set("train.seed", seed);
        }
        if let Some(mode) = o.mode {
            m.set("dataset.mode", mode);
            m.set("generator.mode", mode);
        }
        if let Some(scale) = o.scale {
            m.set("dataset.scale", scale);
            m.set("generator.scale", scale);
        }
        let dataset = DatasetSpec::from_manifest(&m.section("dataset"))?;
        let train = TrainConfig::from_run_manifest(&m)?;
        if (dataset.mode, dataset.scale) != (train.generator.mode, train.generator.scale) {
            return Err(Error::InvalidConfig(format!(
                "dataset uses {} x{} but the generator uses {} x{}",
                dataset.mode, dataset.scale, train.generator.mode, train.generator.scale
            )));
        }
        let r = m.section("report");
        let mut report = default_report(train.generator.rho);
        if let Some(raw) = r.get("variants") {
            report.variants = split_list(raw, "variants")?;
        }
        if let Some(raw) = r.get("rho") {
            report.rho = split_list(raw, "rho")?;
        }
        Ok(RunConfig { dataset, train, report })
    }

    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let m = match path {
            None => Manifest::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", p.display())))?;
                parse_sections(&text)?
            }
        };
        Self::from_manifest(&m, o)
    }

    pub fn ssim(&self) -> &SsimConfig {
        &self.train.ssim
    }

    /// Effective configuration as dotted keys.
    pub fn manifest(&self) -> Manifest {
        let mut m = self.train.run_manifest();
        m.nest("dataset", &self.dataset.to_manifest());
        m.nest("report", &self.report.to_manifest());
        m
    }

    /// Effective configuration in the same format [`parse_sections`] reads.
    pub fn to_text(&self) -> String {
        let m = self.manifest();
        let mut out = String::new();
        for sec in SECTIONS {
            out.push_str(&format!("[{sec}]\n"));
            for (k, v) in m.section(sec).iter() {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push('\n');
        }
        out
    }
}
