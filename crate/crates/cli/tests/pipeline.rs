mod common;

use std::path::Path;

use common::{cli, files_below, read_pfds, read_pnm, s, tree_differences};
use spinodal::reduce::compose_pipeline;
use spinodal_cli::commands::read_report;
use spinodal_cli::models;
use spinodal_cli::CliError;

const SMALL: &[&str] = &[
    "--set", "grid.nx=16",
    "--set", "grid.ny=16",
    "--set", "sim.steps=200",
    "--set", "sim.stride=20",
    "--set", "sweep.seed=11",
];

fn generate(out: &Path, samples: usize, jobs: usize) -> Result<(), CliError> {
    let n = format!("sweep.samples={samples}");
    let j = jobs.to_string();
    let mut args = vec!["generate", "--out", s(out), "--jobs", &j, "--set", &n];
    args.extend_from_slice(SMALL);
    cli(&args)
}

fn dims(path: &Path) -> Vec<u64> {
    read_pfds(&std::fs::read(path).unwrap()).unwrap().dims
}

#[test]
fn generate_shape_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a, 2, 1).unwrap();
    generate(&b, 2, 2).unwrap();
    assert_eq!(dims(&a.join("frames.pfds")), vec![2, 10, 16, 16]);
    assert!(tree_differences(&a, &b).is_empty());

    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("# spinodal manifest v1 samples=2 seed=11 grid=16x16"));
    assert_eq!(manifest.lines().count(), 3);

    let frames = read_pfds(&std::fs::read(a.join("frames.pfds")).unwrap()).unwrap();
    assert!(frames.values.iter().all(|v| v.is_finite()));
}

#[test]
fn resumed_runs_match_fresh_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let fresh = tmp.path().join("fresh");
    generate(&fresh, 4, 1).unwrap();

    // Interrupted: one sample and the assembled outputs are missing.
    let resumed = tmp.path().join("resumed");
    generate(&resumed, 4, 1).unwrap();
    std::fs::remove_file(resumed.join("samples/000002.pfds")).unwrap();
    std::fs::remove_file(resumed.join("frames.pfds")).unwrap();
    std::fs::remove_file(resumed.join("manifest.txt")).unwrap();
    generate(&resumed, 4, 1).unwrap();
    assert!(tree_differences(&fresh, &resumed).is_empty());

    // Extended in place from a smaller sweep.
    let grown = tmp.path().join("grown");
    generate(&grown, 2, 1).unwrap();
    generate(&grown, 4, 1).unwrap();
    assert!(tree_differences(&fresh, &grown).is_empty());
}

#[test]
fn resume_with_other_settings_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), 1, 1).unwrap();
    let mut args = vec!["generate", "--out", s(tmp.path()), "--set", "sweep.samples=1"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "sim.noise=0.02"]);
    let err = cli(&args).unwrap_err();
    assert_eq!(err.exit_code(), 5);
}

#[test]
fn partial_generation_keeps_good_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let err = cli(&[
        "generate", "--out", s(tmp.path()), "--jobs", "1",
        "--set", "grid.nx=16", "--set", "grid.ny=16",
        "--set", "sim.steps=20", "--set", "sim.stride=10", "--set", "sim.dt=5",
        "--set", "sweep.samples=6", "--set", "sweep.kappa_min=0.01",
    ])
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let manifest = std::fs::read_to_string(tmp.path().join("manifest.txt")).unwrap();
    let failed = manifest.lines().filter(|l| l.contains(" failed ")).count();
    assert!(failed > 0 && failed < 6, "{manifest}");
    assert_eq!(dims(&tmp.path().join("frames.pfds")), vec![6 - failed as u64, 2, 16, 16]);
}

/// Settings for the toy reduction and forecasting stages.
const MODELS: &[&str] = &[
    "--set", "ae1.code=8",
    "--set", "ae1.batch_size=8",
    "--set", "ae1.max_epochs=4",
    "--set", "ae1.learning_rate=0.01",
    "--set", "ae2.code=3",
    "--set", "ae2.batch_size=8",
    "--set", "ae2.max_epochs=4",
    "--set", "pca.components=4",
    "--set", "seq.hidden=6",
    "--set", "seq.layers=1",
    "--set", "seq.horizon=2",
    "--set", "seq.horizon_sweep=1,3",
    "--set", "seq.stride=all",
    "--set", "seq.batch_size=2",
    "--set", "seq.max_epochs=3",
    "--set", "seq.validation_fraction=0.34",
];

fn step(args: &[&str]) {
    let mut all = args.to_vec();
    all.extend_from_slice(MODELS);
    cli(&all).unwrap_or_else(|e| panic!("{args:?}: {e}"));
}

#[test]
fn toy_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let data = d.join("data");
    generate(&data, 6, 1).unwrap();
    let frames = data.join("frames.pfds");
    let manifest = data.join("manifest.txt");
    let p = |name: &str| d.join(name);

    step(&["train-ae", "--stage", "1", "--data", s(&frames), "--out", s(&p("ae1"))]);
    step(&["encode", "--model", s(&p("ae1")), "--data", s(&frames), "--out", s(&p("codes.pfds"))]);
    assert_eq!(dims(&p("codes.pfds")), vec![6, 10, 8]);

    step(&["fit-pca", "--data", s(&p("codes.pfds")), "--out", s(&p("pca"))]);
    assert_eq!(models::read_header(&p("pca")).unwrap().get("components").unwrap(), "4");
    let pca_report = read_report(&p("pca/report.txt")).unwrap();
    assert_eq!(pca_report.explained_variance.len(), 4);

    step(&["transform", "--model", s(&p("pca")), "--data", s(&p("codes.pfds")), "--out", s(&p("latent.pfds"))]);
    assert_eq!(dims(&p("latent.pfds")), vec![6, 10, 4]);

    step(&["train-seq", "--latent", s(&p("latent.pfds")), "--manifest", s(&manifest), "--out", s(&p("seq"))]);
    let seq_report = read_report(&p("seq/report.txt")).unwrap();
    let horizons: Vec<usize> = seq_report.horizon_loss.iter().map(|h| h.0).collect();
    assert_eq!(horizons, vec![1, 2, 3]);
    // Ten frames, horizon 2: everything before the last two is context.
    assert_eq!(seq_report.value("context_len"), Some(8.0));

    // Sliding windows over a fixed context: same held-out samples, one
    // validation window per offset instead of one tail each.
    step(&[
        "train-seq", "--latent", s(&p("latent.pfds")), "--manifest", s(&manifest), "--out", s(&p("seq_windows")),
        "--set", "seq.context_len=4", "--set", "seq.windows=true",
    ]);
    let windowed = read_report(&p("seq_windows/report.txt")).unwrap();
    assert_eq!(windowed.value("context_len"), Some(4.0));
    assert_eq!(windowed.value("validation_samples"), seq_report.value("validation_samples"));
    assert_eq!(seq_report.value("validation_windows"), seq_report.value("validation_samples"));
    // 10 frames, windows of 4 + 2: five offsets per held-out sample.
    assert_eq!(windowed.value("validation_windows").unwrap(), 5.0 * windowed.value("validation_samples").unwrap());

    step(&[
        "predict", "--model", s(&p("seq")), "--latent", s(&p("latent.pfds")),
        "--manifest", s(&manifest), "--out", s(&p("pred.pfds")),
    ]);
    assert_eq!(dims(&p("pred.pfds")), vec![6, 2, 4]);

    step(&[
        "decode", "--stage1", s(&p("ae1")), "--stage2", s(&p("pca")),
        "--latent", s(&p("pred.pfds")), "--out", s(&p("images.pfds")),
    ]);
    let images = read_pfds(&std::fs::read(p("images.pfds")).unwrap()).unwrap();
    assert_eq!(images.dims, vec![6, 2, 16, 16]);
    assert!(images.values.iter().all(|v| (0.0..=1.0).contains(v)));

    step(&["render", "--data", s(&p("images.pfds")), "--out", s(&p("png")), "--sample", "1"]);
    let rendered = files_below(&p("png"));
    assert_eq!(rendered.len(), 2);
    for f in rendered {
        let img = read_pnm(&std::fs::read(p("png").join(f)).unwrap()).unwrap();
        assert_eq!((img.width, img.height), (16, 16));
    }

    // Per-frame error against an external recomputation.
    step(&[
        "evaluate", "--stage1", s(&p("ae1")), "--stage2", s(&p("pca")),
        "--data", s(&frames), "--out", s(&p("eval.txt")), "--per-frame", s(&p("frame_mse.pfds")),
    ]);
    let per_frame = read_pfds(&std::fs::read(p("frame_mse.pfds")).unwrap()).unwrap();
    assert_eq!(per_frame.dims, vec![6, 10]);
    let (ae1, _) = models::load_autoencoder(&p("ae1")).unwrap();
    let pipeline = compose_pipeline(ae1, models::load_second_stage(&p("pca")).unwrap()).unwrap();
    let raw = read_pfds(&std::fs::read(&frames).unwrap()).unwrap();
    let x = ndarray::Array2::from_shape_vec((60, 256), raw.values).unwrap();
    let recon = pipeline.decode(pipeline.encode(x.view()).unwrap().view()).unwrap();
    for (i, reported) in per_frame.values.iter().enumerate() {
        let mut acc = 0.0;
        for j in 0..256 {
            let d = x[[i, j]] - recon[[i, j]];
            acc += d * d;
        }
        assert!((acc / 256.0 - reported).abs() <= 1e-12, "frame {i}");
    }
    let report = read_report(&p("eval.txt")).unwrap();
    let mean: f64 = per_frame.values.iter().sum::<f64>() / 60.0;
    assert!((report.value("mean_frame_mse").unwrap() - mean).abs() < 1e-15);
    assert!(report.value("end_to_end_mse").unwrap().is_finite());

    // Autoencoder as the second stage.
    step(&["train-ae", "--stage", "2", "--data", s(&p("codes.pfds")), "--out", s(&p("ae2"))]);
    step(&["transform", "--model", s(&p("ae2")), "--data", s(&p("codes.pfds")), "--out", s(&p("latent2.pfds"))]);
    assert_eq!(dims(&p("latent2.pfds")), vec![6, 10, 3]);
    step(&[
        "decode", "--stage1", s(&p("ae1")), "--stage2", s(&p("ae2")),
        "--latent", s(&p("latent2.pfds")), "--out", s(&p("images2.pfds")),
    ]);
    assert_eq!(dims(&p("images2.pfds")), vec![6, 10, 16, 16]);
}

#[test]
fn replicated_channel_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let data = d.join("data");
    generate(&data, 4, 1).unwrap();
    let frames = data.join("frames.pfds");
    step(&[
        "train-ae", "--stage", "1", "--data", s(&frames), "--out", s(&d.join("ae1")),
        "--set", "frames.channels=3",
    ]);
    let (ae1, frame) = models::load_autoencoder(&d.join("ae1")).unwrap();
    assert_eq!(ae1.input_dim(), 16 * 16 * 3);
    assert_eq!(frame.unwrap().channels, 3);
    step(&["encode", "--model", s(&d.join("ae1")), "--data", s(&frames), "--out", s(&d.join("codes.pfds"))]);
    step(&["fit-pca", "--data", s(&d.join("codes.pfds")), "--out", s(&d.join("pca"))]);
    step(&[
        "transform", "--model", s(&d.join("pca")), "--data", s(&d.join("codes.pfds")),
        "--out", s(&d.join("latent.pfds")),
    ]);
    step(&[
        "decode", "--stage1", s(&d.join("ae1")), "--stage2", s(&d.join("pca")),
        "--latent", s(&d.join("latent.pfds")), "--out", s(&d.join("images.pfds")),
    ]);
    assert_eq!(dims(&d.join("images.pfds")), vec![4, 10, 16, 16]);
    step(&["render", "--data", s(&d.join("images.pfds")), "--out", s(&d.join("ppm")), "--channels", "3"]);
    let files = files_below(&d.join("ppm"));
    assert_eq!(files.len(), 40);
    let img = read_pnm(&std::fs::read(d.join("ppm").join(&files[0])).unwrap()).unwrap();
    assert_eq!(img.magic, "P6");
}

#[test]
fn pipeline_artifacts_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |root: &Path| {
        let data = root.join("data");
        generate(&data, 4, 1).unwrap();
        let frames = data.join("frames.pfds");
        step(&["train-ae", "--stage", "1", "--data", s(&frames), "--out", s(&root.join("ae1"))]);
        step(&["encode", "--model", s(&root.join("ae1")), "--data", s(&frames), "--out", s(&root.join("codes.pfds"))]);
        step(&["fit-pca", "--data", s(&root.join("codes.pfds")), "--out", s(&root.join("pca"))]);
    };
    run(&tmp.path().join("a"));
    run(&tmp.path().join("b"));
    assert!(tree_differences(&tmp.path().join("a"), &tmp.path().join("b")).is_empty());
}
