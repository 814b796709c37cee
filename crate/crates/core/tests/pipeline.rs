use cdiffuse::sampler::{enhance, EnhanceOptions};
use cdiffuse::schedule::{build_schedule, FAST_GAMMA};
use cdiffuse::trainer::{init_predictor, run_training, GaussianTask, TrainConfig};
use cdiffuse::{seeded_rng, Predictor, TrainablePredictor};

#[test]
fn trained_checkpoint_enhances_identically_after_reload() {
    let config = TrainConfig::parse("iterations = 30\nbatch_size = 4\nhidden = 24\nseed = 9\n").unwrap();
    let mut task = GaussianTask {
        frame: 128,
        clean_var: 1.0,
        noise_var: 0.25,
    };
    let outcome = run_training(&config, &mut task, init_predictor(&config)).unwrap();
    assert_eq!(outcome.trace.len(), 30);

    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.ckpt");
    let trace = dir.path().join("net.tsv");
    outcome.write(&ckpt, &trace).unwrap();
    let loaded = TrainablePredictor::load(&ckpt, 128).unwrap();
    assert_eq!(loaded, outcome.best);

    let full = build_schedule(&config.schedule).unwrap();
    let fast = full.fast_sampling(&FAST_GAMMA).unwrap();
    let y: Vec<f64> = (0..300).map(|i| (i as f64 * 0.05).sin() * 0.5).collect();
    let a: Predictor = outcome.best.into();
    let b: Predictor = loaded.into();
    for s in [&full, &fast] {
        let out_a = enhance(s, &a, &y, &mut seeded_rng(1), EnhanceOptions::default()).unwrap();
        let out_b = enhance(s, &b, &y, &mut seeded_rng(1), EnhanceOptions::default()).unwrap();
        assert_eq!(out_a, out_b);
        assert_eq!(out_a.len(), y.len());
        assert!(out_a.iter().all(|v| v.is_finite()));
    }
}
