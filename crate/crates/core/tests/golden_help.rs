//! `--help` output of every subcommand against checked-in golden files.
//! Set `UPDATE_GOLDEN=1` to rewrite them.

use std::fs;
use std::path::PathBuf;

const SUBCOMMANDS: [&str; 6] = [
    "geometry-demo",
    "selectable",
    "heatmap",
    "majority",
    "keyscan",
    "lm-train",
];

fn golden_path(sub: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{sub}.help.txt"))
}

#[test]
fn help_matches_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for sub in SUBCOMMANDS {
        let text = lngeom::cli::help_text(sub).expect("known subcommand");
        let path = golden_path(sub);
        if update {
            fs::write(&path, &text).unwrap();
            continue;
        }
        let want = fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{}: {e}; run with UPDATE_GOLDEN=1", path.display()));
        assert_eq!(text, want, "help for {sub} drifted from {}", path.display());
    }
}

#[test]
fn every_flag_shows_its_default() {
    for sub in SUBCOMMANDS {
        let text = lngeom::cli::help_text(sub).unwrap();
        for line in text.lines().map(str::trim_start) {
            // Value flags list a default; paths and switches are optional.
            let is_value_flag = line.starts_with("--") && line.contains('<');
            let optional = ["<PATH>", "--threads", "--help"]
                .iter()
                .any(|m| line.contains(m));
            if is_value_flag && !optional {
                assert!(line.contains("[default: "), "{sub}: {line}");
            }
        }
    }
}
