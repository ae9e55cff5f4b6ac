use std::fs;
use std::path::{Path, PathBuf};

use waveboost::data::synthetic::synthetic_textures;
use waveboost::data::{build_dataset, load_image, save_image, Dataset};
use waveboost::losses::{Term, Variant};
use waveboost::metrics::{evaluate_folder, psnr, ssim};
use waveboost::networks::PipelineMode;
use waveboost::trainer::{
    finetune, load_generator, pretrain_perceptual, run_experiment_matrix, train, upscale_image, Encoders,
    ExperimentConfig, ModelCheckpoint, TrainConfig, TrainOutcome,
};
use waveboost::{Error, Result};

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.cfg";

/// Images in the texture corpus that stands in for natural-image
/// pretraining of the VGG-style encoder.
const TEXTURE_IMAGES: usize = 32;

fn write_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    Ok(())
}

fn load_checkpoint(dir: &Path) -> Result<ModelCheckpoint> {
    ModelCheckpoint::load(dir)
}

/// Adds the dataset section to the final checkpoint so the whole
/// effective configuration travels with it.
fn finish(out: &Path, cfg: &RunConfig, mut outcome: TrainOutcome) -> Result<TrainOutcome> {
    outcome.checkpoint.manifest.nest("dataset", &cfg.dataset.to_manifest());
    outcome.checkpoint.save(&out.join("final"))?;
    Ok(outcome)
}

fn texture_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let size = (2 * cfg.dataset.patch_size).max(64);
    let images = synthetic_textures(TEXTURE_IMAGES, size, cfg.train.seed)
        .into_iter()
        .enumerate()
        .map(|(i, img)| (format!("texture_{i:03}.png"), img))
        .collect();
    Dataset::from_images(images, &cfg.dataset)
}

/// Pretrains the encoder a feature term needs: the perceptual encoder on
/// the run's own data, the VGG-style one on the texture corpus.
fn pretrain_for(term: Term, cfg: &RunConfig, dataset: &Dataset, out: &Path) -> Result<ModelCheckpoint> {
    let mut tc = cfg.train.clone();
    tc.max_steps = None;
    let (dir, data) = match term {
        Term::Vgg => (out.join("vgg_encoder"), texture_dataset(cfg)?),
        _ => (out.join("encoder"), dataset.clone()),
    };
    tc.out_dir = Some(dir);
    eprintln!("pretraining {} encoder", if term == Term::Vgg { "vgg-style" } else { "perceptual" });
    Ok(pretrain_perceptual(&data, &tc)?.checkpoint)
}

fn feature_term(v: Variant) -> Option<Term> {
    v.terms().iter().copied().find(|t| *t != Term::Adversarial)
}

fn resolve_encoder(
    cfg: &RunConfig,
    dataset: &Dataset,
    out: &Path,
    given: Option<&Path>,
    parent: Option<&ModelCheckpoint>,
) -> Result<Option<ModelCheckpoint>> {
    if let Some(p) = given {
        return load_checkpoint(p).map(Some);
    }
    let Some(term) = feature_term(cfg.train.loss.variant) else {
        return Ok(None);
    };
    if parent.is_some_and(|p| p.has_prefix("encoder")) {
        return Ok(None);
    }
    pretrain_for(term, cfg, dataset, out).map(Some)
}

pub fn pretrain(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dataset = build_dataset(&cfg.dataset)?;
    write_config(out, cfg)?;
    let mut tc = cfg.train.clone();
    tc.out_dir = Some(out.to_path_buf());
    let outcome = pretrain_perceptual(&dataset, &tc)?;
    let mut ck = outcome.checkpoint;
    ck.manifest.nest("dataset", &cfg.dataset.to_manifest());
    ck.save(&out.join("final"))?;
    println!(
        "encoder\t{}\tsteps\t{}\tbest_val_mse\t{}",
        out.join("final").display(),
        outcome.log.len(),
        outcome.val_mse.iter().copied().fold(f64::INFINITY, f64::min)
    );
    Ok(())
}

fn print_outcome(out: &Path, o: &TrainOutcome) {
    println!("checkpoint\t{}", out.join("final").display());
    println!("steps\t{}", o.log.len());
    if let Some(v) = o.validation.last() {
        println!("val_psnr_db\t{:.4}\tbicubic_psnr_db\t{:.4}", v.psnr, v.bicubic_psnr);
        println!("val_ssim\t{:.4}\tbicubic_ssim\t{:.4}", v.ssim, v.bicubic_ssim);
    }
}

fn train_config(cfg: &RunConfig, out: &Path) -> TrainConfig {
    let mut tc = cfg.train.clone();
    tc.out_dir = Some(out.to_path_buf());
    tc
}

pub fn train_cmd(cfg: &RunConfig, out: &Path, encoder: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let resume = resume.map(load_checkpoint).transpose()?;
    let encoder_ck = encoder.map(load_checkpoint).transpose()?;
    let dataset = build_dataset(&cfg.dataset)?;
    write_config(out, cfg)?;
    let encoder_ck = match encoder_ck {
        Some(e) => Some(e),
        None => resolve_encoder(cfg, &dataset, out, None, resume.as_ref())?,
    };
    let o = train(&dataset, &train_config(cfg, out), resume.as_ref(), encoder_ck.as_ref())?;
    let o = finish(out, cfg, o)?;
    print_outcome(out, &o);
    Ok(())
}

pub fn finetune_cmd(cfg: &RunConfig, out: &Path, parent: &Path, encoder: Option<&Path>) -> Result<()> {
    let parent = load_checkpoint(parent)?;
    let encoder_ck = encoder.map(load_checkpoint).transpose()?;
    let dataset = build_dataset(&cfg.dataset)?;
    write_config(out, cfg)?;
    let encoder_ck = match encoder_ck {
        Some(e) => Some(e),
        None => resolve_encoder(cfg, &dataset, out, None, Some(&parent))?,
    };
    let o = finetune(&parent, &dataset, &train_config(cfg, out), encoder_ck.as_ref())?;
    let o = finish(out, cfg, o)?;
    print_outcome(out, &o);
    Ok(())
}

pub fn sr(
    cfg: &RunConfig,
    input: &Path,
    checkpoint: &Path,
    out: &Path,
    reference: Option<&Path>,
    requested: (Option<PipelineMode>, Option<usize>),
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let (gen, params) = load_generator(&ck)?;
    let g = gen.config();
    if requested.0.is_some_and(|m| m != g.mode) || requested.1.is_some_and(|s| s != g.scale) {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint {} was trained for {} x{}",
            checkpoint.display(),
            g.mode,
            g.scale
        )));
    }
    let lr = load_image(input)?;
    let reference = reference.map(load_image).transpose()?;
    let result = upscale_image(&gen, &params, &lr)?;
    if let Some(hr) = &reference {
        if hr.shape() != result.shape() {
            return Err(Error::ShapeMismatch(format!(
                "reference is {:?} but the output is {:?}",
                hr.shape(),
                result.shape()
            )));
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_image(&result, out)?;
    if let Some(hr) = reference {
        // score what was written, so quantisation is included
        let written = load_image(out)?;
        println!("psnr_db\t{:.4}", psnr(&written, &hr)?);
        println!("ssim\t{:.4}\t{}", ssim(&written, &hr, cfg.ssim())?, cfg.ssim().mode.as_str());
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, sr_dir: &Path, hr_dir: &Path, jsonl: bool, out: Option<&Path>) -> Result<()> {
    let table = evaluate_folder(sr_dir, hr_dir, cfg.ssim())?;
    let text = if jsonl { table.to_jsonl() } else { table.to_tsv() };
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let name = if jsonl { "metrics.jsonl" } else { "metrics.tsv" };
        fs::write(out.join(name), &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn report(cfg: &RunConfig, out: &Path, encoder: Option<&Path>, vgg_encoder: Option<&Path>) -> Result<()> {
    let perceptual = encoder.map(load_checkpoint).transpose()?;
    let vgg = vgg_encoder.map(load_checkpoint).transpose()?;
    let dataset = build_dataset(&cfg.dataset)?;
    write_config(out, cfg)?;
    let mut specs = Vec::new();
    for &variant in &cfg.report.variants {
        for &rho in &cfg.report.rho {
            let mut tc = cfg.train.clone();
            tc.set_variant(variant);
            tc.generator.rho = rho;
            specs.push(ExperimentConfig {
                name: format!("{variant}_rho{rho}"),
                train: tc,
            });
        }
    }
    let needs = |term: Term| cfg.report.variants.iter().any(|v| v.terms().contains(&term));
    let encoders = Encoders {
        perceptual: match perceptual {
            None if needs(Term::Perceptual) => Some(pretrain_for(Term::Perceptual, cfg, &dataset, out)?),
            other => other,
        },
        vgg: match vgg {
            None if needs(Term::Vgg) => Some(pretrain_for(Term::Vgg, cfg, &dataset, out)?),
            other => other,
        },
    };
    let runs: PathBuf = out.join("runs");
    let report = run_experiment_matrix(&specs, &dataset, &encoders, Some(&runs))?;
    let mut text = String::new();
    for (k, v) in cfg.dataset.to_manifest().iter() {
        text.push_str(&format!("# dataset.{k} = {v}\n"));
    }
    text.push_str(&report.to_tsv());
    fs::write(out.join("report.tsv"), &text)?;
    print!("{text}");
    if report.failures() > 0 {
        eprintln!("{} of {} runs failed", report.failures(), report.rows.len());
    }
    Ok(())
}
