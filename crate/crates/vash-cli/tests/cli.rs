//! End-to-end command tests: recording transcripts into skill files,
//! running them, listing, compiling, and exit-code mapping through the
//! binary.

use std::path::PathBuf;
use std::process::Command;

use vash_cli::{cmd_compile, cmd_list, cmd_record, cmd_run, RunBinding, SkillRepository};

fn fixture_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn site(name: &str) -> PathBuf {
    fixture_root().join("sites").join(name).join("site.json")
}

fn transcript(name: &str) -> PathBuf {
    fixture_root().join("transcripts").join(name)
}

fn run_capture<F: FnOnce(&mut Vec<u8>) -> Result<(), vash_cli::CliError>>(
    f: F,
) -> Result<String, vash_cli::CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(String::from_utf8(buf).unwrap())
}

#[test]
fn record_then_run_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let skills = dir.path().join("skills");

    let out = run_capture(|buf| {
        cmd_record(&site("grocery"), &transcript("recipe.jsonl"), &skills, buf)
    })
    .unwrap();
    // Recording surfaced the in-demo return, the iterated prices, and
    // the returned sum.
    let lines: Vec<serde_json::Value> =
        out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["function"], "recipe");
    assert_eq!(lines[2]["rows"][0]["number"], 9.75);

    // Both functions were persisted, inner first.
    assert!(skills.join("price.wt").exists());
    assert!(skills.join("recipe.wt").exists());
    let index = std::fs::read_to_string(skills.join("index.txt")).unwrap();
    assert_eq!(index, "price\nrecipe\n");

    // Saved skill files hold one flattened declaration each and reload
    // to the same programs (file-level print/parse identity).
    let repo = SkillRepository::load(&skills).unwrap();
    assert_eq!(repo.skills.len(), 2);
    let recipe_src = std::fs::read_to_string(skills.join("recipe.wt")).unwrap();
    assert!(!recipe_src.contains("function price"));

    // Running the stored skill reproduces the recorded result.
    let out = run_capture(|buf| {
        cmd_run(
            "recipe",
            RunBinding::Values(vec!["Spaghetti Carbonara".into()]),
            &site("grocery"),
            &skills,
            None,
            buf,
        )
    })
    .unwrap();
    let record: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(record["function"], "recipe");
    assert_eq!(record["rows"][0]["number"], 9.75);

    // A different recipe sums its own fixture prices (hand total).
    let out = run_capture(|buf| {
        cmd_run(
            "recipe",
            RunBinding::Values(vec!["Chocolate Cookies".into()]),
            &site("grocery"),
            &skills,
            None,
            buf,
        )
    })
    .unwrap();
    let record: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(record["rows"][0]["number"], 14.6);

    let listing = run_capture(|buf| cmd_list(&skills, buf)).unwrap();
    assert_eq!(listing, "price(param : String)\nrecipe(param : String)\n");
}

#[test]
fn run_with_selection_iterates() {
    let dir = tempfile::tempdir().unwrap();
    let skills = dir.path().join("skills");
    run_capture(|buf| cmd_record(&site("stock"), &transcript("stocks.jsonl"), &skills, buf))
        .unwrap();

    let out = run_capture(|buf| {
        cmd_run(
            "stocks",
            RunBinding::Selection {
                selector: ".symbol".into(),
                url: "https://news.test/".into(),
            },
            &site("stock"),
            &skills,
            None,
            buf,
        )
    })
    .unwrap();
    let record: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    let quotes: Vec<&str> =
        record["rows"].as_array().unwrap().iter().map(|r| r["text"].as_str().unwrap()).collect();
    // GOOG, MSFT, AAPL in page order.
    assert_eq!(quotes, vec!["2718.28", "411.22", "123.45"]);
}

#[test]
fn unknown_skill_and_arity_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let skills = dir.path().join("skills");
    std::fs::create_dir_all(&skills).unwrap();

    let err = run_capture(|buf| {
        cmd_run("nosuch", RunBinding::None, &site("stock"), &skills, None, buf)
    })
    .unwrap_err();
    assert_eq!(err.code, vash_cli::EXIT_INPUT);

    run_capture(|buf| cmd_record(&site("stock"), &transcript("stocks.jsonl"), &skills, buf))
        .unwrap();
    let err = run_capture(|buf| {
        cmd_run("stocks", RunBinding::None, &site("stock"), &skills, None, buf)
    })
    .unwrap_err();
    assert_eq!(err.code, vash_cli::EXIT_TYPE);
}

#[test]
fn compile_reports_positions_and_prints_canonical_form() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.wt");
    std::fs::write(&good, "function f ( ) { @load ( url = \"https://x.test/\" ) ; }").unwrap();
    let out = run_capture(|buf| cmd_compile(&good, None, buf)).unwrap();
    assert_eq!(out, "function f() {\n  @load(url=\"https://x.test/\");\n}\n");

    let recursive = dir.path().join("loop.wt");
    std::fs::write(&recursive, "function f() { f(); }").unwrap();
    let err = run_capture(|buf| cmd_compile(&recursive, None, buf)).unwrap_err();
    assert_eq!(err.code, vash_cli::EXIT_TYPE);
    assert!(err.message.contains("cannot call itself"));

    let broken = dir.path().join("broken.wt");
    std::fs::write(&broken, "function (").unwrap();
    let err = run_capture(|buf| cmd_compile(&broken, None, buf)).unwrap_err();
    assert_eq!(err.code, vash_cli::EXIT_INPUT);
    assert!(err.message.contains("1:"), "position in `{}`", err.message);
}

#[test]
fn empty_repository_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let skills = dir.path().join("skills");
    std::fs::create_dir_all(&skills).unwrap();
    let listing = run_capture(|buf| cmd_list(&skills, buf)).unwrap();
    assert_eq!(listing, "");
}

#[test]
fn binary_exit_codes_and_json_diagnostics() {
    let bin = env!("CARGO_BIN_EXE_vash");
    let dir = tempfile::tempdir().unwrap();
    let skills = dir.path().join("skills");

    // Malformed transcript line: exit 2 naming the line.
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"kind\":\"navigate\",\"url\":\"https://news.test/\"}\n{nope}\n").unwrap();
    let output = Command::new(bin)
        .args(["record", "--site"])
        .arg(site("stock"))
        .arg("--transcript")
        .arg(&bad)
        .arg("--skills")
        .arg(&skills)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains(":2:"), "line number in `{stderr}`");

    // Happy path through the binary, then a timer-less --until: exit 1.
    let output = Command::new(bin)
        .args(["record", "--site"])
        .arg(site("stock"))
        .arg("--transcript")
        .arg(transcript("stocks.jsonl"))
        .arg("--skills")
        .arg(&skills)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));

    let output = Command::new(bin)
        .args(["run", "stocks", "--with-value", "AAPL", "--until", "2d", "--site"])
        .arg(site("stock"))
        .arg("--skills")
        .arg(&skills)
        .arg("--json")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let diag: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&output.stderr).trim()).unwrap();
    assert_eq!(diag["code"], 1);

    // VASH_SKILLS supplies the default repository.
    let output = Command::new(bin)
        .args(["list"])
        .env("VASH_SKILLS", &skills)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&output.stdout), "stocks(param : String)\n");
}
