use horizon_core::config::Config;
use std::path::Path;

#[test]
fn shipped_configs_parse_and_build_their_maps() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            let cfg = Config::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let m = cfg.map().unwrap();
            cfg.domain_for(&m).unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
