use std::path::Path;

use super::{train, ModelCheckpoint, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{Term, Variant};
use crate::networks::{complexity_report, ComplexityReport, Generator, PipelineMode};
use crate::nn::stream_seed;

/// One named run of the matrix.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub name: String,
    pub train: TrainConfig,
}

/// Pretrained encoders for the feature-loss variants: `perceptual` for
/// the perceptual term, `vgg` for the texture-pretrained term.
#[derive(Clone, Debug, Default)]
pub struct Encoders {
    pub perceptual: Option<ModelCheckpoint>,
    pub vgg: Option<ModelCheckpoint>,
}

impl Encoders {
    fn for_variant(&self, v: Variant) -> Option<&ModelCheckpoint> {
        if v.terms().contains(&Term::Perceptual) {
            self.perceptual.as_ref()
        } else if v.terms().contains(&Term::Vgg) {
            self.vgg.as_ref()
        } else {
            None
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentRow {
    pub name: String,
    pub variant: Variant,
    pub rho: usize,
    pub complexity: Option<ComplexityReport>,
    pub steps: usize,
    pub final_generator_loss: Option<f64>,
    pub final_wasserstein: Option<f64>,
    pub mean_generator_loss: Option<f64>,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
    pub bicubic_psnr: Option<f64>,
    pub bicubic_ssim: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
    /// Effective configuration of every run, as `name.section.key = value`.
    pub configs: Vec<(String, String)>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}

impl ExperimentReport {
    pub const COLUMNS: [&'static str; 16] = [
        "name",
        "variant",
        "rho",
        "status",
        "steps",
        "final_generator_loss",
        "mean_generator_loss",
        "final_wasserstein",
        "val_psnr_db",
        "val_ssim",
        "bicubic_psnr_db",
        "bicubic_ssim",
        "parameters",
        "memory_bytes",
        "flops",
        "inference_seconds",
    ];

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (name, cfg) in &self.configs {
            for line in cfg.lines() {
                out.push_str(&format!("# {name}.{line}\n"));
            }
        }
        out.push_str(&Self::COLUMNS.join("\t"));
        out.push('\n');
        for r in &self.rows {
            let c = r.complexity.as_ref();
            let fields = [
                r.name.clone(),
                r.variant.to_string(),
                r.rho.to_string(),
                match &r.error {
                    None => "ok".into(),
                    Some(e) => format!("failed: {}", e.replace(['\t', '\n'], " ")),
                },
                r.steps.to_string(),
                opt(r.final_generator_loss),
                opt(r.mean_generator_loss),
                opt(r.final_wasserstein),
                opt(r.val_psnr),
                opt(r.val_ssim),
                opt(r.bicubic_psnr),
                opt(r.bicubic_ssim),
                c.map(|c| c.parameter_count.to_string()).unwrap_or_else(|| "-".into()),
                c.map(|c| c.memory_bytes_f32.to_string()).unwrap_or_else(|| "-".into()),
                c.map(|c| c.flops_estimate.to_string()).unwrap_or_else(|| "-".into()),
                c.map(|c| format!("{:.6}", c.inference_seconds)).unwrap_or_else(|| "-".into()),
            ];
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

fn complexity(cfg: &TrainConfig, dataset: &Dataset) -> Result<ComplexityReport> {
    let gen = Generator::new(cfg.generator.clone())?;
    let params = gen.init::<f32>(stream_seed(cfg.seed, "generator"));
    let patch = dataset
        .train
        .first()
        .map(|p| p.hr.height())
        .ok_or_else(|| Error::EmptyDataset("no training pairs".into()))?;
    let side = match cfg.generator.mode {
        PipelineMode::PreInterpolated => patch / 2,
        PipelineMode::Progressive => patch / (2 * cfg.generator.scale),
    };
    complexity_report(&gen, &params, &[1, 4, side, side])
}

/// Trains and evaluates every configuration on the same dataset. A failed
/// run is recorded in its row and the remaining runs still execute.
pub fn run_experiment_matrix(
    specs: &[ExperimentConfig],
    dataset: &Dataset,
    encoders: &Encoders,
    out_root: Option<&Path>,
) -> Result<ExperimentReport> {
    if specs.is_empty() {
        return Err(Error::InvalidConfig("experiment list is empty".into()));
    }
    let mut rows = Vec::with_capacity(specs.len());
    let mut configs = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut cfg = spec.train.clone();
        cfg.out_dir = out_root.map(|r| r.join(&spec.name));
        configs.push((spec.name.clone(), cfg.run_manifest().to_text()));
        let mut row = ExperimentRow {
            name: spec.name.clone(),
            variant: cfg.loss.variant,
            rho: cfg.generator.rho,
            complexity: None,
            steps: 0,
            final_generator_loss: None,
            final_wasserstein: None,
            mean_generator_loss: None,
            val_psnr: None,
            val_ssim: None,
            bicubic_psnr: None,
            bicubic_ssim: None,
            error: None,
        };
        let result = complexity(&cfg, dataset).and_then(|c| {
            row.complexity = Some(c);
            train(dataset, &cfg, None, encoders.for_variant(cfg.loss.variant))
        });
        match result {
            Ok(out) => {
                let losses: Vec<f64> = out.log.iter().filter_map(|r| r.generator_loss).collect();
                row.steps = out.log.len();
                row.final_generator_loss = losses.last().copied();
                row.mean_generator_loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
                row.final_wasserstein = out.log.last().and_then(|r| r.wasserstein_estimate);
                if let Some(v) = out.validation.last() {
                    row.val_psnr = Some(v.psnr);
                    row.val_ssim = Some(v.ssim);
                    row.bicubic_psnr = Some(v.bicubic_psnr);
                    row.bicubic_ssim = Some(v.bicubic_ssim);
                }
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    Ok(ExperimentReport { rows, configs })
}
