use std::path::PathBuf;

use pqcrit::config::KeyValueConfig;
use pqcrit::eigen::parse_eigen_sequence;
use pqcrit::fem::parse_fem_function;
use pqcrit::mesh::parse_mesh;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, String)> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "{}", dir.display());
    out
}

#[test]
fn corpus_seeds_parse() {
    for (name, text) in seeds("mesh") {
        let m = parse_mesh(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parse_mesh(&m.to_text()).unwrap().checksum(), m.checksum());
    }
    for (name, text) in seeds("fem_function") {
        parse_fem_function(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, text) in seeds("config") {
        let c = KeyValueConfig::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(KeyValueConfig::parse(&c.to_text()).unwrap(), c);
    }
    for (name, text) in seeds("eigen_json") {
        parse_eigen_sequence(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn truncated_seeds_fail_cleanly() {
    for target in ["mesh", "fem_function", "config", "eigen_json"] {
        for (_, text) in seeds(target) {
            for cut in (0..text.len()).step_by(7).filter(|c| text.is_char_boundary(*c)) {
                let t = &text[..cut];
                let _ = parse_mesh(t);
                let _ = parse_fem_function(t);
                let _ = KeyValueConfig::parse(t);
                let _ = parse_eigen_sequence(t);
            }
        }
    }
}
