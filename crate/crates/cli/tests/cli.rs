use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sscan_cli::{EXIT_INVALID, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
use sscan_core::hsi::{load_cube, save_cube, synthetic_scene, HsiCube};
use sscan_core::network::{save_checkpoint, ModelConfig, SscanModel};

fn sscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sscan"))
        .args(args)
        .env("SSCAN_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> u8 {
    o.status.code().expect("exit code") as u8
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Scene {
    dir: tempfile::TempDir,
    clean: PathBuf,
}

impl Scene {
    fn new(h: usize, w: usize, bands: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let clean = dir.path().join("clean.hsic");
        save_cube(&synthetic_scene(h, w, bands, 4).unwrap(), &clean).unwrap();
        Self { dir, clean }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn noisy(&self, name: &str, sigma: &str, seed: &str) -> (PathBuf, Output) {
        let out = self.path(name);
        let o = sscan(&["simulate-noise", "--input", p(&self.clean), "--output", p(&out), "--sigma", sigma, "--seed", seed]);
        (out, o)
    }
}

#[test]
fn zero_sigma_keeps_payload() {
    let s = Scene::new(16, 16, 4);
    let (out, o) = s.noisy("n.hsic", "0", "3");
    assert_eq!(code(&o), EXIT_OK);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&s.clean).unwrap());
    assert!(stdout(&o).starts_with("MPSNR=inf"), "{}", stdout(&o));
}

#[test]
fn noise_is_reproducible_and_calibrated() {
    let s = Scene::new(64, 64, 8);
    let (a, o) = s.noisy("a.hsic", "25", "9");
    let (b, _) = s.noisy("b.hsic", "25", "9");
    let (c, _) = s.noisy("c.hsic", "25", "10");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let text = stdout(&o);
    let mpsnr: f64 = text.split_whitespace().next().unwrap().trim_start_matches("MPSNR=").parse().unwrap();
    assert!((mpsnr - 20.17).abs() <= 0.1, "{text}");
}

#[test]
fn evaluate_self_is_ideal() {
    let s = Scene::new(16, 16, 4);
    let report = s.path("r.txt");
    let o = sscan(&["evaluate", "--clean", p(&s.clean), "--input", p(&s.clean), "--report", p(&report)]);
    assert_eq!(code(&o), EXIT_OK);
    assert_eq!(stdout(&o).trim(), "MPSNR=inf MSSIM=1.0000 SAM=0.0000 ERGAS=0.0000");
    assert!(std::fs::read_to_string(report).unwrap().contains("mpsnr"));
}

#[test]
fn evaluate_rejects_mismatched_and_malformed() {
    let s = Scene::new(16, 16, 4);
    let other = s.path("other.hsic");
    save_cube(&synthetic_scene(16, 16, 5, 1).unwrap(), &other).unwrap();
    let o = sscan(&["evaluate", "--clean", p(&s.clean), "--input", p(&other)]);
    assert_eq!(code(&o), EXIT_INVALID);
    let junk = s.path("junk.hsic");
    std::fs::write(&junk, b"not a cube").unwrap();
    let o = sscan(&["evaluate", "--clean", p(&s.clean), "--input", p(&junk)]);
    assert_eq!(code(&o), EXIT_IO);
}

#[test]
fn denoise_with_fresh_checkpoint_is_identity() {
    let s = Scene::new(20, 18, 6);
    let ckpt = s.path("m.ssck");
    save_checkpoint(&SscanModel::new(ModelConfig::tiny()).unwrap(), &ckpt).unwrap();
    let out = s.path("d.hsic");
    let o = sscan(&["denoise", "--checkpoint", p(&ckpt), "--input", p(&s.clean), "--output", p(&out), "--tile", "8", "--margin", "2"]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_cube(&out).unwrap(), load_cube(&s.clean).unwrap());
}

#[test]
fn denoise_band_mismatch_names_counts() {
    let s = Scene::new(8, 8, 5);
    let ckpt = s.path("m.ssck");
    save_checkpoint(&SscanModel::new(ModelConfig::tiny()).unwrap(), &ckpt).unwrap();
    let o = sscan(&["denoise", "--checkpoint", p(&ckpt), "--input", p(&s.clean), "--output", p(&s.path("d.hsic"))]);
    assert_eq!(code(&o), EXIT_INVALID);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains('5') && err.contains('6'), "{err}");
}

fn pgm_pixels(bytes: &[u8]) -> (usize, usize, Vec<u8>) {
    let mut lines = 0;
    let split = bytes
        .iter()
        .position(|&c| {
            lines += usize::from(c == b'\n');
            lines == 4
        })
        .unwrap();
    let header = String::from_utf8_lossy(&bytes[..split]);
    let dims: Vec<usize> = header.lines().nth(2).unwrap().split(' ').map(|v| v.parse().unwrap()).collect();
    (dims[0], dims[1], bytes[split + 1..].to_vec())
}

#[test]
fn error_map_of_white_noise_is_uniform() {
    let s = Scene::new(64, 64, 6);
    let (noisy, _) = s.noisy("n.hsic", "50", "2");
    let map = s.path("e.pgm");
    let o = sscan(&["error-map", "--clean", p(&s.clean), "--input", p(&noisy), "--output", p(&map), "--bands", "0,2,4"]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&map).unwrap();
    assert!(bytes.starts_with(b"P5\n# max-error-anchor "));
    let (w, h, px) = pgm_pixels(&bytes);
    assert_eq!((w, h, px.len()), (64, 64, 64 * 64));
    let quadrant = |qy: usize, qx: usize| {
        let mut sum = 0.0;
        for y in qy * 32..qy * 32 + 32 {
            for x in qx * 32..qx * 32 + 32 {
                sum += px[y * 64 + x] as f64;
            }
        }
        sum / 1024.0
    };
    let means = [quadrant(0, 0), quadrant(0, 1), quadrant(1, 0), quadrant(1, 1)];
    let (lo, hi) = means.iter().fold((f64::MAX, 0.0f64), |(l, h), &m| (l.min(m), h.max(m)));
    assert!(hi / lo <= 1.1, "{means:?}");
}

#[test]
fn error_map_rejects_bad_band() {
    let s = Scene::new(8, 8, 4);
    let o = sscan(&["error-map", "--clean", p(&s.clean), "--input", p(&s.clean), "--output", p(&s.path("e.pgm"))]);
    assert_eq!(code(&o), EXIT_INVALID);
    assert!(String::from_utf8_lossy(&o.stderr).contains("band 57"));
}

#[test]
fn gradcheck_default_passes() {
    let o = sscan(&["gradcheck"]);
    assert_eq!(code(&o), EXIT_OK, "{}", stdout(&o));
    assert!(stdout(&o).contains("all "));
}

#[test]
fn gradcheck_restricted_to_one_op() {
    let o = sscan(&["gradcheck", "--ops", "conv2d"]);
    assert_eq!(code(&o), EXIT_OK);
    let text = stdout(&o);
    let checks: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|l| l.contains("conv2d")), "{text}");
}

#[test]
fn gradcheck_fault_is_named() {
    let o = sscan(&["gradcheck", "--ops", "sigmoid,relu", "--inject-fault", "sigmoid"]);
    assert_eq!(code(&o), EXIT_NUMERICAL);
    let err = String::from_utf8_lossy(&o.stderr);
    let failure = err.lines().find(|l| l.contains("gradient check failed")).expect("failure line");
    assert!(failure.contains("sigmoid") && !failure.contains("relu"), "{err}");
    assert!(stdout(&o).lines().any(|l| l.starts_with("PASS") && l.contains("relu")));
}

#[test]
fn exit_codes_are_distinct() {
    let codes = [EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL, EXIT_INVALID];
    for (i, a) in codes.iter().enumerate() {
        assert!(codes[i + 1..].iter().all(|b| a != b));
    }
    let o = sscan(&["evaluate", "--clean", "/nonexistent/a.hsic", "--input", "/nonexistent/b.hsic"]);
    assert_eq!(code(&o), EXIT_IO);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/a.hsic"));
    assert_eq!(code(&sscan(&["train", "--bogus"])), EXIT_USAGE);
}

#[test]
fn train_zero_epochs_succeeds() {
    let s = Scene::new(16, 16, 6);
    let (noisy, _) = s.noisy("n.hsic", "25", "1");
    let dir = s.path("ckpt");
    let o = sscan(&[
        "train", "--input", p(&s.clean), "--clean", p(&s.clean), "--noisy", p(&noisy), "--checkpoint", p(&dir),
        "--epochs", "0", "--channels", "8", "--group-channels", "4", "--n-ssab", "1",
    ]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("no epochs run"));
}

#[test]
fn short_training_run_writes_best_checkpoint() {
    let s = Scene::new(24, 24, 6);
    let (noisy, _) = s.noisy("n.hsic", "25", "1");
    let dir = s.path("ckpt");
    let log = s.path("train.log");
    let args = [
        "train", "--input", p(&s.clean), "--clean", p(&s.clean), "--noisy", p(&noisy), "--checkpoint", p(&dir),
        "--report", p(&log), "--epochs", "2", "--channels", "8", "--group-channels", "4", "--n-ssab", "1",
        "--batch", "2", "--patch", "8", "--patches-per-epoch", "4", "--seed", "5",
    ];
    let o = sscan(&args);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("MPSNR gain over noisy input"));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);
    let first = std::fs::read(dir.join("best.ssck")).unwrap();
    sscan(&args);
    assert_eq!(std::fs::read(dir.join("best.ssck")).unwrap(), first);
}

#[test]
fn prepare_normalizes_crops_and_splits() {
    let s = Scene::new(20, 16, 3);
    let raw = s.path("raw.hsic");
    let scaled = load_cube(&s.clean).unwrap();
    let scaled = scaled.with_data(scaled.data().iter().map(|v| v * 4000.0 + 100.0).collect()).unwrap();
    save_cube(&scaled, &raw).unwrap();
    let (train, test) = (s.path("train.hsic"), s.path("test.hsic"));
    let o = sscan(&[
        "prepare", "--input", p(&raw), "--output", p(&train), "--crop", "2", "1", "18", "12",
        "--split-rows", "10", "--test-output", p(&test),
    ]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let (a, b) = (load_cube(&train).unwrap(), load_cube(&test).unwrap());
    assert_eq!(a.dims(), (10, 12, 3));
    assert_eq!(b.dims(), (8, 12, 3));
    let all = |c: &HsiCube| c.data().iter().all(|v| (0.0..=1.0).contains(v));
    assert!(all(&a) && all(&b));
    assert!(a.band_scale().is_some());
}

#[test]
fn help_lists_defaults() {
    let o = sscan(&["train", "--help"]);
    let text = stdout(&o);
    for flag in ["--sigma", "--seed", "--k", "--overlap", "--n-ssab", "--channels", "--group-channels", "--epochs", "--batch", "--patch", "--lr", "--decay-epoch"] {
        assert!(text.contains(flag), "{flag} missing");
    }
    assert!(text.matches("[default:").count() >= 12, "{text}");
}
