use cascade_cli::examples::EXAMPLES;
use cascade_cli::scenario::parse_scenario;

const BASE: &str = r#"[model]
modes = 2
gamma = 0.2
kerr = 0.2

[solver]
kind = "linearized"

[sweep]
n_last = [0.01, 0.1]

[outputs]
quantities = ["g2"]
"#;

fn with(from: &str, to: &str) -> String {
    assert!(BASE.contains(from), "fixture lacks {from:?}");
    BASE.replace(from, to)
}

#[test]
fn base_config_is_valid() {
    let s = parse_scenario(BASE, "base").unwrap();
    assert_eq!(s.sweep.len(), 2);
}

#[test]
fn unknown_key_reports_its_line() {
    let e = parse_scenario(&with("kerr = 0.2", "kerr = 0.2\nkerrr = 1.0"), "x").unwrap_err();
    assert_eq!(e.line, Some(5), "{e}");
    assert!(e.message.contains("kerrr"), "{e}");
}

#[test]
fn syntax_error_reports_its_line() {
    let e = parse_scenario(&with("gamma = 0.2", "gamma = = 0.2"), "x").unwrap_err();
    assert_eq!(e.line, Some(3), "{e}");
}

#[test]
fn wrong_type_reports_its_line() {
    let e = parse_scenario(&with("modes = 2", "modes = \"two\""), "x").unwrap_err();
    assert_eq!(e.line, Some(2), "{e}");
}

#[test]
fn wigner_needs_full_quantum_solver() {
    let e = parse_scenario(&with("[\"g2\"]", "[\"g2\", \"wigner\"]"), "x").unwrap_err();
    assert_eq!(e.line, Some(13), "{e}");
    assert!(e.message.contains("wigner"), "{e}");
}

#[test]
fn full_quantum_needs_a_truncation() {
    let e = parse_scenario(&with("\"linearized\"", "\"full-quantum-steady\""), "x").unwrap_err();
    assert!(e.message.contains("truncation"), "{e}");
    assert_eq!(e.line, Some(7), "{e}");
}

#[test]
fn truncation_is_rejected_for_linearized() {
    let e = parse_scenario(&with("kind = \"linearized\"", "kind = \"linearized\"\ntruncation = 5"), "x").unwrap_err();
    assert_eq!(e.line, Some(8), "{e}");
}

#[test]
fn sweep_needs_exactly_one_axis() {
    let both = with("n_last = [0.01, 0.1]", "n_last = [0.01, 0.1]\ndrive = [0.1]");
    assert!(parse_scenario(&both, "x").is_err());
    let none = with("n_last = [0.01, 0.1]", "delta = [0.0]");
    assert!(parse_scenario(&none, "x").is_err());
}

#[test]
fn duan_pair_is_checked() {
    let same = with("[\"g2\"]", "[\"duan\"]\nduan_pair = [2, 2]");
    assert!(parse_scenario(&same, "x").unwrap_err().message.contains("same mode"));
    let out_of_range = with("[\"g2\"]", "[\"duan\"]\nduan_pair = [1, 3]");
    assert_eq!(parse_scenario(&out_of_range, "x").unwrap_err().line, Some(14));
    let ok = parse_scenario(&with("[\"g2\"]", "[\"duan\"]\nduan_pair = [2, 1]"), "x").unwrap();
    assert_eq!(ok.outputs.duan, Some((1, 0)));
}

#[test]
fn bistability_needs_a_drive_axis() {
    assert!(parse_scenario(&with("[\"g2\"]", "[\"bistability\"]"), "x").is_err());
    let drive = with("n_last = [0.01, 0.1]", "drive = [0.1, 0.2]").replace("[\"g2\"]", "[\"bistability\"]");
    assert!(parse_scenario(&drive, "x").unwrap().outputs.bistability);
}

#[test]
fn bundled_examples_parse_and_round_trip() {
    assert!(!EXAMPLES.is_empty());
    for ex in EXAMPLES {
        let s = parse_scenario(ex.text, "unused").unwrap_or_else(|e| panic!("{}: {e}", ex.name));
        assert_eq!(s.name, ex.name);
        assert!(!ex.summary().is_empty(), "{} has no summary comment", ex.name);
        let again = parse_scenario(&s.to_toml(), "other").unwrap();
        assert_eq!(s, again, "{} does not round-trip", ex.name);
    }
}

#[test]
fn shipped_files_match_bundled_examples() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut on_disk: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path().file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    on_disk.sort();
    let mut bundled: Vec<String> = EXAMPLES.iter().map(|e| e.name.to_string()).collect();
    bundled.sort();
    assert_eq!(on_disk, bundled);
}
