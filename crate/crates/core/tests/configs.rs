use std::path::Path;

use metanerf::config::RunConfig;

#[test]
fn shipped_configs_parse_and_fit_their_guards() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "toml") {
            continue;
        }
        let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let model = cfg.model().unwrap();
        cfg.outer.check_second_order(model.param_count(), cfg.meta_inner.steps).unwrap();
        assert!(cfg.data.train_scenes >= cfg.outer.scenes_per_iteration);
        assert!(cfg.paths.dataset_root.starts_with(&dir));
        seen += 1;
    }
    assert_eq!(seen, 3);
}
