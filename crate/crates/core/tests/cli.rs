use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metanerf::config::{Manifest, RunConfig};
use metanerf::encoding::HashGridConfig;
use metanerf::field::{load_checkpoint, FieldModel, MlpConfig};
use metanerf::meta::Algorithm;
use metanerf::metrics::EvalReport;
use metanerf::render::Image;
use metanerf::scenes::Category;

fn metanerf(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metanerf"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = metanerf(cwd, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn tiny_config(category: Category, train_scenes: usize) -> RunConfig {
    let mut cfg = RunConfig::new("data".into(), "out".into());
    cfg.seed = 2;
    cfg.data.category = category;
    cfg.data.train_scenes = train_scenes;
    cfg.data.views_per_scene = 4;
    cfg.grid = HashGridConfig {
        levels: 3,
        table_size_log2: 9,
        base_resolution: 4,
        max_resolution: 16,
        ..HashGridConfig::default()
    };
    cfg.mlp = MlpConfig {
        density_hidden_width: 8,
        color_hidden_width: 8,
        geo_feature_dim: 3,
        direction_frequencies: 1,
        ..MlpConfig::default()
    };
    cfg.render.samples_per_ray = 8;
    cfg.eval_render.samples_per_ray = 8;
    cfg.meta_inner.steps = 2;
    cfg.meta_inner.rays_per_batch = 32;
    cfg.adapt_inner.steps = 3;
    cfg.adapt_inner.rays_per_batch = 32;
    cfg.outer.outer_iterations = 2;
    cfg.outer.scenes_per_iteration = 2;
    cfg.outer.checkpoint_every = 1;
    cfg
}

/// A workspace with a generated category and a config file.
fn workspace(category: &str, scenes: usize, cfg: &RunConfig) -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let n = scenes.to_string();
    ok(tmp.path(), &["gen-data", category, "--scenes", &n, "--frames", "12", "--size", "12", "--seed", "3", "--out", "data"]);
    fs::write(tmp.path().join("run.toml"), cfg.to_toml()).unwrap();
    tmp
}

#[test]
fn gen_data_layout_counts_and_repeatability() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    let args = ["gen-data", "sphere", "--scenes", "40", "--frames", "100", "--seed", "7"];
    let out = ok(&a, &args);
    ok(&b, &args);
    let tree = files(&a.join("data"));
    let scenes: std::collections::BTreeSet<_> = tree.keys().map(|p| p.components().nth(1).unwrap()).collect();
    assert_eq!(scenes.len(), 40);
    assert_eq!(tree.keys().filter(|p| p.extension().is_some_and(|e| e == "ppm")).count(), 4000);
    assert_eq!(tree, files(&b.join("data")));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("sphere_0039/meta.json"), "{stdout}");
}

#[test]
fn gen_data_rejects_bad_arguments() {
    let tmp = tempfile::tempdir().unwrap();
    let out = metanerf(tmp.path(), &["gen-data", "sphere", "--scenes", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
    assert_eq!(metanerf(tmp.path(), &["gen-data", "cone"]).status.code(), Some(2));
    assert_eq!(metanerf(tmp.path(), &["gen-data", "box", "--frames", "4"]).status.code(), Some(2));
    assert!(!tmp.path().join("data").exists());
}

#[test]
fn meta_train_zero_iterations_writes_the_seeded_init() {
    let mut cfg = tiny_config(Category::Torus, 2);
    cfg.outer.outer_iterations = 0;
    let tmp = workspace("torus", 3, &cfg);
    ok(tmp.path(), &["meta-train", "run.toml"]);
    let ckpt = load_checkpoint(&tmp.path().join("out/meta_iter_0.ckpt")).unwrap();
    let model = FieldModel::new(cfg.grid, cfg.mlp).unwrap();
    assert!(ckpt.params.bit_eq(&model.init_params(cfg.seed)));
    let echoed = RunConfig::from_toml(&fs::read_to_string(tmp.path().join("out/config.resolved.toml")).unwrap()).unwrap();
    assert_eq!(echoed.outer.outer_iterations, 0);
}

#[test]
fn meta_train_writes_series_and_manifest() {
    let cfg = tiny_config(Category::Sphere, 3);
    let tmp = workspace("sphere", 4, &cfg);
    ok(tmp.path(), &["meta-train", "run.toml", "--outer-iterations", "3", "--seed", "5"]);
    for i in 0..=3 {
        assert!(tmp.path().join(format!("out/meta_iter_{i}.ckpt")).is_file());
    }
    let m = Manifest::load(&tmp.path().join("out/manifest.toml")).unwrap();
    assert_eq!(m.config.seed, 5);
    assert_eq!(m.config.outer.outer_iterations, 3);
    assert_eq!(m.iterations.len(), 3);
    assert_eq!(m.checkpoints.len(), 4);
    assert_eq!(m.run.train_scenes, vec!["sphere_0000", "sphere_0001", "sphere_0002"]);
    assert!(m.iterations.iter().all(|l| l.scenes.len() == 2 && l.mean_final_loss.is_finite()));
}

#[test]
fn meta_train_guards_exit_2_before_compute() {
    let mut cfg = tiny_config(Category::Sphere, 2);
    cfg.grid = HashGridConfig::default();
    cfg.mlp = MlpConfig::default();
    cfg.outer.algorithm = Algorithm::Maml2;
    let tmp = workspace("sphere", 2, &cfg);
    let out = metanerf(tmp.path(), &["meta-train", "run.toml"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!tmp.path().join("out").exists());

    fs::write(tmp.path().join("bad.toml"), cfg.to_toml() + "\n[extra]\nkey = 1\n").unwrap();
    assert_eq!(metanerf(tmp.path(), &["meta-train", "bad.toml"]).status.code(), Some(2));
    let missing = RunConfig::new("nowhere".into(), "out".into());
    fs::write(tmp.path().join("missing.toml"), missing.to_toml()).unwrap();
    let out = metanerf(tmp.path(), &["meta-train", "missing.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("does not exist"));
}

#[test]
fn meta_train_non_finite_loss_names_the_scene() {
    let mut cfg = tiny_config(Category::Sphere, 2);
    cfg.meta_inner.learning_rate = 1e30;
    cfg.meta_inner.optimizer = metanerf::optim::OptimizerKind::Sgd;
    cfg.meta_inner.steps = 6;
    let tmp = workspace("sphere", 2, &cfg);
    let out = metanerf(tmp.path(), &["meta-train", "run.toml"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("sphere_000"), "{}", stderr(&out));
}

#[test]
fn adapt_eval_reports_every_test_scene() {
    let cfg = tiny_config(Category::Box, 2);
    let tmp = workspace("box", 10, &cfg);
    ok(tmp.path(), &["meta-train", "run.toml"]);
    ok(tmp.path(), &["adapt-eval", "run.toml", "--checkpoint", "out/meta_iter_2.ckpt", "--out", "meta.csv"]);
    let meta = EvalReport::load(&tmp.path().join("meta.csv")).unwrap();
    assert_eq!(meta.rows.len(), 8);
    assert_eq!(meta.summary.quartiles.len(), 4);
    assert_eq!(meta.label.outer_iteration, Some(2));
    assert_eq!(meta.label.algorithm.as_deref(), Some("reptile"));
    assert_eq!(meta.label.checkpoint.as_deref(), Some("meta_iter_2.ckpt"));
    assert!(tmp.path().join("meta.config.toml").is_file());

    ok(tmp.path(), &["adapt-eval", "run.toml", "--init", "random"]);
    let random = EvalReport::load(&tmp.path().join("out/report_random_v2.csv")).unwrap();
    assert_eq!(random.label.arm, "random");
    let ids = |r: &EvalReport| r.rows.iter().map(|x| x.scene_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&meta), ids(&random));

    for v in ["3", "6"] {
        ok(tmp.path(), &["adapt-eval", "run.toml", "--init", "random", "--views", v]);
        let r = EvalReport::load(&tmp.path().join(format!("out/report_random_v{v}.csv"))).unwrap();
        assert_eq!(r.n_views(), Some(v.parse().unwrap()));
    }
    let out = metanerf(tmp.path(), &["adapt-eval", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn adapt_eval_marks_failed_scenes_and_continues() {
    let cfg = tiny_config(Category::Sphere, 2);
    let tmp = workspace("sphere", 4, &cfg);
    fs::write(tmp.path().join("data/sphere/sphere_0002/frames/frame_0003.ppm"), b"P6\n1 1\n255\n").unwrap();
    let out = metanerf(tmp.path(), &["adapt-eval", "run.toml", "--init", "random", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sphere_0002"), "{}", stderr(&out));
    let r = EvalReport::load(&tmp.path().join("r.csv")).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r.rows[0].psnr.is_nan());
    assert!(r.rows[1].psnr.is_finite());
    assert_eq!(r.summary.failed, vec!["sphere_0002".to_string()]);
    assert_eq!(r.summary.count, 1);
}

#[test]
fn adapt_eval_rejects_mismatched_checkpoint() {
    let cfg = tiny_config(Category::Sphere, 2);
    let tmp = workspace("sphere", 3, &cfg);
    ok(tmp.path(), &["meta-train", "run.toml"]);
    let mut other = cfg.clone();
    other.mlp.color_hidden_width = 12;
    fs::write(tmp.path().join("other.toml"), other.to_toml()).unwrap();
    let out = metanerf(tmp.path(), &["adapt-eval", "other.toml", "--checkpoint", "out/meta_iter_2.ckpt"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn render_poses_and_errors() {
    let cfg = tiny_config(Category::Cylinder, 2);
    let tmp = workspace("cylinder", 2, &cfg);
    ok(tmp.path(), &["meta-train", "run.toml"]);
    let ckpt = "out/meta_iter_2.ckpt";
    for i in 0..8 {
        let az = (i * 45).to_string();
        let file = format!("sweep/az_{i}.ppm");
        ok(tmp.path(), &["render", "--checkpoint", ckpt, "--azimuth", &az, "--size", "10", "--samples", "8", "--out", &file]);
        let img = Image::read_ppm(&tmp.path().join(file)).unwrap();
        assert_eq!((img.width(), img.height()), (10, 10));
    }
    ok(tmp.path(), &["render", "--checkpoint", ckpt, "--scene", "data/cylinder/cylinder_0001", "--frame", "5", "--out", "f.ppm"]);
    assert_eq!(Image::read_ppm(&tmp.path().join("f.ppm")).unwrap().width(), 12);
    let m = "1,0,0,0, 0,1,0,0, 0,0,1,3, 0,0,0,1";
    ok(tmp.path(), &["render", "--checkpoint", ckpt, "--matrix", m, "--size", "6", "--out", "m.ppm"]);

    let bad_pose: [&[&str]; 4] = [
        &["--matrix", "1 0 0 0"],
        &["--matrix", "2 0 0 0 0 1 0 0 0 0 1 3 0 0 0 1"],
        &["--azimuth", "10", "--elevation", "95"],
        &["--azimuth", "10", "--matrix", m],
    ];
    for extra in bad_pose {
        let mut args = vec!["render", "--checkpoint", ckpt, "--out", "x.ppm"];
        args.extend_from_slice(extra);
        assert_eq!(metanerf(tmp.path(), &args).status.code(), Some(2), "{extra:?}");
    }
    let out = metanerf(tmp.path(), &["render", "--checkpoint", "gone/meta_iter_9.ckpt", "--azimuth", "0", "--out", "x.ppm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("gone/meta_iter_9.ckpt"), "{}", stderr(&out));
    assert!(!tmp.path().join("x.ppm").exists());
}

#[test]
fn report_table_delta_and_curve() {
    let cfg = tiny_config(Category::Sphere, 2);
    let tmp = workspace("sphere", 4, &cfg);
    ok(tmp.path(), &["meta-train", "run.toml"]);
    ok(tmp.path(), &["adapt-eval", "run.toml", "--init", "random", "--out", "random.csv"]);
    for i in [2, 0, 1] {
        let ckpt = format!("out/meta_iter_{i}.ckpt");
        ok(tmp.path(), &["adapt-eval", "run.toml", "--checkpoint", &ckpt, "--out", &format!("meta_{i}.csv")]);
    }

    let one = ok(tmp.path(), &["report", "random.csv"]);
    let table = String::from_utf8_lossy(&one.stdout);
    let random = EvalReport::load(&tmp.path().join("random.csv")).unwrap();
    assert!(table.contains(&format!("{:.3}", random.summary.psnr.mean)));
    assert!(!table.contains("delta"));

    let two = ok(tmp.path(), &["report", "random.csv", "meta_2.csv", "--out", "table.txt"]);
    let table = String::from_utf8_lossy(&two.stdout);
    assert!(table.lines().next().unwrap().contains("delta"));
    assert_eq!(fs::read_to_string(tmp.path().join("table.txt")).unwrap(), table);

    ok(tmp.path(), &["report", "meta_2.csv", "meta_0.csv", "meta_1.csv", "random.csv", "--curve", "curve.csv"]);
    let curve = fs::read_to_string(tmp.path().join("curve.csv")).unwrap();
    let iters: Vec<&str> = curve.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(iters, ["0", "1", "2"]);

    fs::write(tmp.path().join("broken.csv"), "scene_id,psnr\nx,1\n").unwrap();
    assert_eq!(metanerf(tmp.path(), &["report", "random.csv", "broken.csv"]).status.code(), Some(2));
    assert_eq!(metanerf(tmp.path(), &["report", "absent.csv"]).status.code(), Some(1));
}
