use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use waveboost::data::load_image;
use waveboost::data::synthetic::{synthetic_shapes, write_corpus};
use waveboost::trainer::ModelCheckpoint;
use waveboost::{Image, RangeTag};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_waveboost"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "\
[dataset]
patch_size = 16
patches_per_image = 2
[generator]
base_width = 8
rho = 1
[critic]
base_width = 8
n_stages = 2
attention_stage = 1
[encoder]
filters = 4,4,8,8,8,8
[train]
batch = 4
epochs = 1
max_steps = 2
lr = 0.001
checkpoint_every = 0
[loss]
variant = WGAN
critic_steps = 1
";

/// Writes a synthetic corpus and a small config pointing at it.
fn setup(dir: &Path, extra: &str) -> PathBuf {
    let data = dir.join("data");
    write_corpus(&data, &synthetic_shapes(6, 32, 4), "shape").unwrap();
    let cfg = dir.join("run.cfg");
    let text = SMALL.replacen("[dataset]\n", &format!("[dataset]\nroot = {}\n", data.display()), 1);
    fs::write(&cfg, format!("{text}{extra}")).unwrap();
    cfg
}

fn save_gray(path: &Path, h: usize, w: usize, f: impl Fn(usize, usize) -> f32) {
    let px = (0..h * w).map(|i| f(i / w, i % w)).collect();
    waveboost::data::save_image(&Image::new(h, w, px, RangeTag::Unit).unwrap(), path).unwrap();
}

#[test]
fn decompose_writes_four_bands_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("gray.png");
    save_gray(&img, 8, 6, |_, _| 128.0 / 255.0);
    let out = dir.path().join("sb");
    let o = run(&["decompose", p(&img), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for band in ["LL", "LH", "HL", "HH"] {
        let b = load_image(&out.join(format!("gray_{band}.png"))).unwrap();
        assert_eq!(b.shape(), (4, 3));
        let want = if band == "LL" { 128.0 / 255.0 } else { 0.5 };
        assert!(b.pixels().iter().all(|&v| (v - want).abs() < 1e-4), "{band}");
    }
    let m = fs::read_to_string(out.join("subbands.txt")).unwrap();
    assert!(m.contains("encoding.detail = 0.5 + c / 2"));
    assert!(m.contains("metrics.ssim_mode"));
}

#[test]
fn odd_input_exits_two_naming_the_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("odd.png");
    save_gray(&img, 7, 6, |y, x| ((y + x) % 3) as f32 / 2.0);
    let o = run(&["decompose", p(&img), "--out", p(&dir.path().join("sb"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("height is 7"), "{}", stderr(&o));
}

#[test]
fn round_trip_is_exact_in_eight_bits_and_with_raw() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("shape.png");
    let img = &synthetic_shapes(1, 24, 8)[0];
    waveboost::data::save_image(img, &src).unwrap();
    let orig = load_image(&src).unwrap();
    for raw in [false, true] {
        let sb = dir.path().join(format!("sb{raw}"));
        let mut args = vec!["decompose", p(&src), "--out", p(&sb)];
        if raw {
            args.push("--raw");
        }
        assert_eq!(code(&run(&args)), 0);
        let back = dir.path().join(format!("back{raw}.png"));
        let o = run(&["reconstruct", p(&sb), "--out", p(&back)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let rec = load_image(&back).unwrap();
        let err = orig.pixels().iter().zip(rec.pixels()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err * 255.0 <= 1.0, "raw={raw} err={err}");
        assert_eq!(orig.pixels(), rec.pixels(), "raw={raw}");
    }
}

#[test]
fn reconstruct_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("s.png");
    save_gray(&src, 8, 8, |y, x| (y * 8 + x) as f32 / 64.0);
    let sb = dir.path().join("sb");
    assert_eq!(code(&run(&["decompose", p(&src), "--out", p(&sb)])), 0);
    let back = dir.path().join("b.png");

    let manifest = sb.join("subbands.txt");
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replace("parent_height = 8", "parent_height = 10")).unwrap();
    let o = run(&["reconstruct", p(&sb), "--out", p(&back)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("parent shape"), "{}", stderr(&o));
    fs::write(&manifest, text).unwrap();

    fs::remove_file(sb.join("s_HH.png")).unwrap();
    let o = run(&["reconstruct", p(&sb), "--out", p(&back)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("s_HH.png"), "{}", stderr(&o));
    assert!(!back.exists());
}

#[test]
fn config_errors_exit_one_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, text.replace("[loss]\n", "[loss]\nbetta = 2\n")).unwrap();
    let out = dir.path().join("out");
    let o = run(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("betta"), "{}", stderr(&o));
    assert!(!out.exists());

    fs::write(&cfg, text.replace("lr = 0.001", "lr = -1")).unwrap();
    assert_eq!(code(&run(&["train", "--config", p(&cfg), "--out", p(&out)])), 1);
    assert!(!out.exists());

    assert_eq!(code(&run(&["train", "--scale", "3"])), 1);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, text.replace("lr = 0.001", "lr = 1e30").replace("max_steps = 2", "max_steps = 20")).unwrap();
    let o = run(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("out"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn train_is_deterministic_and_feeds_sr_eval_and_finetune() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["train", "--config", p(&cfg), "--seed", "7", "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("val_psnr_db"));
    }
    let ca = ModelCheckpoint::load(&a.join("final")).unwrap();
    let cb = ModelCheckpoint::load(&b.join("final")).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(ca.manifest.get("train.seed"), Some("7"));
    assert!(ca.manifest.get("dataset.patch_size").is_some());
    assert!(fs::read_to_string(a.join("config.cfg")).unwrap().contains("seed = 7"));

    let hr = &synthetic_shapes(1, 64, 11)[0];
    let lr = waveboost::data::bicubic_resize(hr, 32, 32).unwrap();
    let (lr_path, hr_path) = (dir.path().join("lr.png"), dir.path().join("hr.png"));
    waveboost::data::save_image(&lr, &lr_path).unwrap();
    waveboost::data::save_image(hr, &hr_path).unwrap();
    let sr_dir = dir.path().join("sr");
    let sr_path = sr_dir.join("hr.png");
    let ck = a.join("final");
    let o = run(&["sr", p(&lr_path), "--checkpoint", p(&ck), "--reference", p(&hr_path), "--out", p(&sr_path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(load_image(&sr_path).unwrap().shape(), (64, 64));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("psnr_db\t") && lines[1].starts_with("ssim\t"));

    let o = run(&["sr", p(&lr_path), "--checkpoint", p(&ck), "--scale", "4", "--out", p(&sr_path)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let hr_dir = dir.path().join("hr");
    fs::create_dir_all(&hr_dir).unwrap();
    fs::copy(&hr_path, hr_dir.join("hr.png")).unwrap();
    let o = run(&["eval", "--sr", p(&sr_dir), "--hr", p(&hr_dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("hr.png\t")));

    let child = dir.path().join("child");
    let o = run(&["finetune", "--config", p(&cfg), "--parent", p(&ck), "--out", p(&child)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cc = ModelCheckpoint::load(&child.join("final")).unwrap();
    assert_eq!(cc.manifest.get("parent"), Some(ca.id().as_str()));

    let bad = dir.path().join("bad");
    fs::create_dir_all(&bad).unwrap();
    for entry in fs::read_dir(&ck).unwrap() {
        let e = entry.unwrap();
        fs::copy(e.path(), bad.join(e.file_name())).unwrap();
    }
    let victim = bad.join("generator.head.weight.mbt");
    let mut bytes = fs::read(&victim).unwrap();
    bytes[0] = b'X';
    fs::write(&victim, bytes).unwrap();
    let o = run(&["sr", p(&lr_path), "--checkpoint", p(&bad), "--out", p(&sr_path)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("generator.head.weight.mbt"), "{}", stderr(&o));
}

#[test]
fn feature_variants_pretrain_an_encoder_when_none_is_given() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, text.replace("variant = WGAN", "variant = WGAN-MA-P")).unwrap();
    let out = dir.path().join("out");
    let o = run(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("encoder/final").join("manifest.txt").exists());
    let ck = ModelCheckpoint::load(&out.join("final")).unwrap();
    assert!(ck.has_prefix("encoder"));

    let enc = dir.path().join("enc");
    let o = run(&["pretrain-perceptual", "--config", p(&cfg), "--out", p(&enc)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        ModelCheckpoint::load(&enc.join("final")).unwrap().manifest.get("kind"),
        Some("encoder")
    );
}

#[test]
fn report_tabulates_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "[report]\nvariants = WGAN\nrho = 1,2\n");
    let out = dir.path().join("rep");
    let o = run(&["report", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tsv = fs::read_to_string(out.join("report.tsv")).unwrap();
    assert_eq!(tsv, stdout(&o));
    let rows: Vec<&str> = tsv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].contains("parameters\tmemory_bytes\tflops\tinference_seconds"));
    assert!(tsv.contains("# dataset.patch_size = 16"));
    assert!(tsv.contains("# WGAN_rho2.generator.rho = 2"));
}
