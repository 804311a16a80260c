//! Golden corpus: each `tests/corpus/NAME.src` surface program must lower to
//! exactly the IR recorded in `tests/corpus/NAME.ir.json`.
//!
//! To regenerate after an intentional lowering change:
//!
//! ```text
//! UPDATE_CORPUS=1 cargo test -p capsuleguard --test corpus
//! ```

use std::fs;
use std::path::PathBuf;

use capsuleguard::frontend::parse_program;
use capsuleguard::ir::Program;

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

#[test]
fn every_corpus_program_lowers_to_its_recorded_ir() {
    let update = std::env::var_os("UPDATE_CORPUS").is_some();
    let mut checked = 0;
    for entry in fs::read_dir(corpus_dir()).expect("corpus directory exists") {
        let path = entry.expect("readable dir entry").path();
        if path.extension().and_then(|e| e.to_str()) != Some("src") {
            continue;
        }
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let source = fs::read_to_string(&path).expect("readable source");
        let program = match parse_program(&source) {
            Ok(p) => p,
            Err(e) => panic!("{name}.src failed to parse: {e}"),
        };
        assert_eq!(program.validate(), vec![], "{name}.src lowered to invalid IR");

        let golden_path = path.with_extension("ir.json");
        let rendered = program.to_json() + "\n";
        if update {
            fs::write(&golden_path, &rendered).expect("write golden file");
        }
        let golden = fs::read_to_string(&golden_path)
            .unwrap_or_else(|_| panic!("{name}.ir.json missing; run with UPDATE_CORPUS=1"));
        assert_eq!(rendered, golden, "{name}.src no longer lowers to {name}.ir.json");

        // The recorded JSON must itself round-trip through the IR parser.
        let reparsed = Program::from_json(&golden).expect("golden IR parses");
        assert_eq!(reparsed, program, "{name}.ir.json does not round-trip");
        checked += 1;
    }
    assert!(checked >= 5, "expected at least 5 corpus programs, found {checked}");
}
