use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cdiffuse::audio::{read_wav, write_wav, AudioClip};
use cdiffuse::schedule::NoiseSchedule;

fn cdiffuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdiffuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_tone(path: &Path, noise: f64) {
    let samples = (0..4000)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            0.3 * (2.0 * std::f64::consts::PI * 440.0 * t).sin() + noise * ((i * 7919 % 101) as f64 / 50.0 - 1.0)
        })
        .collect();
    write_wav(&AudioClip::new(samples, 16_000).unwrap(), path).unwrap();
}

#[test]
fn schedule_dump_round_trips() {
    let out = cdiffuse(&["schedule", "dump"]);
    assert!(out.status.success());
    let s = NoiseSchedule::from_table(&stdout(&out)).unwrap();
    assert_eq!(s.steps(), 50);
    assert!((s.beta(50) - 0.035).abs() < 1e-15);

    let out = cdiffuse(&["schedule", "dump", "--T", "4", "--beta-start", "0.1", "--beta-end", "0.4", "--m", "zero"]);
    let s = NoiseSchedule::from_table(&stdout(&out)).unwrap();
    assert_eq!(s.m(3), 0.0);

    let out = cdiffuse(&["schedule", "dump", "--fast"]);
    assert_eq!(NoiseSchedule::from_table(&stdout(&out)).unwrap().steps(), 6);
    let out = cdiffuse(&["schedule", "dump", "--fast", "0.01,0.2"]);
    assert_eq!(NoiseSchedule::from_table(&stdout(&out)).unwrap().steps(), 2);
}

#[test]
fn invalid_input_is_a_one_line_diagnostic() {
    for args in [
        vec!["schedule", "dump", "--fast", "0.5,2"],
        vec!["schedule", "dump", "--T", "0"],
        vec!["metrics", "--est", "/nonexistent/a.wav", "--ref", "/nonexistent/b.wav"],
    ] {
        let out = cdiffuse(&args);
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert!(err.starts_with("error: ") && err.lines().count() == 1, "{err}");
    }
}

#[test]
fn verify_passes() {
    let out = cdiffuse(&["verify", "--fuzz", "10", "--seed", "3"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows.len() >= 10);
    assert!(rows.iter().all(|r| r.ends_with("\tpass")), "{text}");
}

#[test]
fn train_enhance_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    write_tone(Path::new(&p("clean.wav")), 0.0);
    write_tone(Path::new(&p("noisy.wav")), 0.1);
    fs::write(p("tiny.cfg"), "iterations = 20\nbatch_size = 2\nhidden = 16\nseed = 4\n").unwrap();

    let (cfg, ckpt, clean, noisy, enh) = (p("tiny.cfg"), p("net.ckpt"), p("clean.wav"), p("noisy.wav"), p("enh.wav"));
    let out = cdiffuse(&["train", "--config", &cfg, "--synthetic", "--out", &ckpt]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(p("net.ckpt.trace.tsv")).unwrap();
    assert_eq!(trace.lines().count(), 20);

    for extra in [vec!["--ckpt", ckpt.as_str()], vec!["--oracle", "0.045,0.01", "--full"]] {
        let mut args = vec!["enhance", "--in", &noisy, "--out", &enh, "--config", &cfg];
        args.extend(extra);
        let out = cdiffuse(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let enhanced = read_wav(Path::new(&enh)).unwrap();
        assert_eq!(enhanced.samples.len(), 4000);
        assert_eq!(enhanced.sample_rate, 16_000);
    }

    let out = cdiffuse(&["metrics", "--est", &noisy, "--ref", &clean]);
    assert!(out.status.success());
    let text = stdout(&out);
    let value = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .unwrap()
    };
    assert!(value("si_sdr=").is_finite());
    assert!(value("seg_snr=").is_finite());

    let out = cdiffuse(&["metrics", "--est", &clean, "--ref", &clean]);
    assert!(stdout(&out).contains("si_sdr=100.0000"));
}
