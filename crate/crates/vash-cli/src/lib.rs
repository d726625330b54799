//! Batch command-line orchestration over the core library: transcript
//! ingestion, the on-disk skill repository, skill execution and timers.
//!
//! Exit codes: 0 success, 1 runtime error, 2 input or parse error,
//! 3 type error.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use webtalk::lang::{
    parse_program, print_program, signature_of, typecheck, FunctionDecl, Program, SignatureMap,
    Statement,
};
use webtalk::recorder::{start_recorder_with_skills, DemoEvent};
use webtalk::runtime::{
    compile, execute_entry, fire_timers, ExecOptions, FunctionMap, NotifyRecord, VirtualClock,
};
use webtalk::lang::{Arg, Call, CallStatement, Field, Sink, Stream, TimeOfDay, ValueExpr};
use webtalk::page::SiteManifest;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_TYPE: i32 = 3;

/// A diagnosed failure carrying the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl CliError {
    pub fn input(message: impl Into<String>) -> CliError {
        CliError { code: EXIT_INPUT, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> CliError {
        CliError { code: EXIT_RUNTIME, message: message.into() }
    }

    pub fn types(message: impl Into<String>) -> CliError {
        CliError { code: EXIT_TYPE, message: message.into() }
    }
}

type CliResult<T> = Result<T, CliError>;

// ---------------------------------------------------------------------------
// Skill repository

const INDEX_FILE: &str = "index.txt";

/// Skills persisted as one canonical `.wt` file per function, with an
/// index recording creation order.
pub struct SkillRepository {
    pub dir: PathBuf,
    /// Loaded functions in index order.
    pub skills: Vec<FunctionDecl>,
}

impl SkillRepository {
    /// Loads and validates every skill. Each file must hold exactly one
    /// function declaration named after the file; all bodies must
    /// typecheck against the full repository.
    pub fn load(dir: impl AsRef<Path>) -> CliResult<SkillRepository> {
        let dir = dir.as_ref().to_path_buf();
        let mut names: Vec<String> = Vec::new();
        let index_path = dir.join(INDEX_FILE);
        if index_path.exists() {
            let raw = fs::read_to_string(&index_path)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", index_path.display())))?;
            names = raw.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        } else if dir.exists() {
            let mut found: Vec<String> = fs::read_dir(&dir)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", dir.display())))?
                .filter_map(|entry| {
                    let path = entry.ok()?.path();
                    if path.extension().is_some_and(|e| e == "wt") {
                        Some(path.file_stem()?.to_string_lossy().into_owned())
                    } else {
                        None
                    }
                })
                .collect();
            found.sort();
            names = found;
        }

        let mut skills: Vec<FunctionDecl> = Vec::new();
        for name in &names {
            let path = dir.join(format!("{name}.wt"));
            let source = fs::read_to_string(&path)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
            let program = parse_program(&source)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let [Statement::FunctionDecl(decl)] = &program.items[..] else {
                return Err(CliError::input(format!(
                    "{}: a skill file holds exactly one function declaration",
                    path.display()
                )));
            };
            if &decl.name != name {
                return Err(CliError::input(format!(
                    "{}: declares `{}`, want `{name}`",
                    path.display(),
                    decl.name
                )));
            }
            if skills.iter().any(|s| s.name == decl.name) {
                return Err(CliError::input(format!("duplicate skill `{}`", decl.name)));
            }
            skills.push(decl.clone());
        }

        // Check each body against the rest of the repository; names are
        // global, so registration order does not matter.
        for decl in &skills {
            let sigs: SignatureMap = skills
                .iter()
                .filter(|s| s.name != decl.name)
                .map(|s| (s.name.clone(), signature_of(s)))
                .collect();
            let program = Program { items: vec![Statement::FunctionDecl(decl.clone())] };
            let errors = typecheck(&program, &sigs);
            if !errors.is_empty() {
                let joined =
                    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ");
                return Err(CliError::types(format!("skill `{}`: {joined}", decl.name)));
            }
        }
        Ok(SkillRepository { dir, skills })
    }

    pub fn get(&self, name: &str) -> Option<&FunctionDecl> {
        self.skills.iter().find(|s| s.name == name)
    }

    pub fn function_map(&self) -> FunctionMap {
        self.skills.iter().map(|s| (s.name.clone(), s.clone())).collect()
    }

    /// Writes one skill file in canonical form, with nested declarations
    /// hoisted out (they are saved on their own). Appends to the index.
    pub fn save(&mut self, decl: &FunctionDecl) -> CliResult<()> {
        if self.get(&decl.name).is_some() {
            return Err(CliError::input(format!("skill `{}` already exists", decl.name)));
        }
        fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::input(format!("cannot create {}: {e}", self.dir.display())))?;
        let flattened = FunctionDecl {
            name: decl.name.clone(),
            params: decl.params.clone(),
            body: decl
                .body
                .iter()
                .filter(|s| !matches!(s, Statement::FunctionDecl(_)))
                .cloned()
                .collect(),
        };
        let text = print_program(&Program { items: vec![Statement::FunctionDecl(flattened.clone())] });
        let path = self.dir.join(format!("{}.wt", decl.name));
        fs::write(&path, text)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
        let index_path = self.dir.join(INDEX_FILE);
        let mut index = if index_path.exists() {
            fs::read_to_string(&index_path)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", index_path.display())))?
        } else {
            String::new()
        };
        if !index.is_empty() && !index.ends_with('\n') {
            index.push('\n');
        }
        index.push_str(&decl.name);
        index.push('\n');
        fs::write(&index_path, index)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", index_path.display())))?;
        self.skills.push(flattened);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Commands

fn load_manifest(site: &Path) -> CliResult<Arc<SiteManifest>> {
    SiteManifest::load(site)
        .map(Arc::new)
        .map_err(|e| CliError::input(format!("site manifest: {e}")))
}

pub fn notify_line(record: &NotifyRecord) -> String {
    serde_json::to_string(record).expect("notify records serialize")
}

/// `record`: feed a transcript through the recorder, save completed
/// functions as skills, and print run-during-record notifies.
pub fn cmd_record(
    site: &Path,
    transcript: &Path,
    skills_dir: &Path,
    out: &mut impl std::io::Write,
) -> CliResult<()> {
    let manifest = load_manifest(site)?;
    let mut repo = SkillRepository::load(skills_dir)?;
    let mut recorder = start_recorder_with_skills(&manifest, repo.skills.clone());
    let raw = fs::read_to_string(transcript)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", transcript.display())))?;
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let event: DemoEvent = serde_json::from_str(line).map_err(|e| {
            CliError::input(format!("{}:{}: {e}", transcript.display(), lineno + 1))
        })?;
        recorder.feed(&event).map_err(|e| {
            CliError::runtime(format!("{}:{}: {e}", transcript.display(), lineno + 1))
        })?;
    }
    let output = recorder
        .finish()
        .map_err(|e| CliError::runtime(format!("{}: {e}", transcript.display())))?;
    for decl in &output.functions {
        repo.save(decl)?;
    }
    for record in &output.notifies {
        let _ = writeln!(out, "{}", notify_line(record));
    }
    Ok(())
}

/// How `run` binds the skill's input.
pub enum RunBinding {
    None,
    Values(Vec<String>),
    Selection { selector: String, url: String },
}

/// `run`: execute a stored skill, optionally iterating a page selection
/// or driving the virtual clock for timer skills.
pub fn cmd_run(
    skill: &str,
    binding: RunBinding,
    site: &Path,
    skills_dir: &Path,
    until_minutes: Option<u64>,
    out: &mut impl std::io::Write,
) -> CliResult<()> {
    let manifest = load_manifest(site)?;
    let repo = SkillRepository::load(skills_dir)?;
    let decl = repo
        .get(skill)
        .ok_or_else(|| CliError::input(format!("unknown skill `{skill}`")))?;

    let entry: Vec<Statement> = match binding {
        RunBinding::None | RunBinding::Values(_) => {
            let values = match binding {
                RunBinding::Values(v) => v,
                _ => Vec::new(),
            };
            if values.len() != decl.params.len() {
                return Err(CliError::types(format!(
                    "skill `{skill}` takes {} value(s), got {}",
                    decl.params.len(),
                    values.len()
                )));
            }
            let args = decl
                .params
                .iter()
                .zip(values)
                .map(|(p, v)| Arg { name: Some(p.name.clone()), value: ValueExpr::Const(v) })
                .collect();
            vec![Statement::Call(CallStatement {
                binder: None,
                call: Call { callee: skill.to_string(), args },
            })]
        }
        RunBinding::Selection { selector, url } => {
            if decl.params.len() != 1 {
                return Err(CliError::types(format!(
                    "skill `{skill}` takes {} value(s); a selection supplies one per element",
                    decl.params.len()
                )));
            }
            vec![
                Statement::WebOp(webtalk::lang::WebOp::Load { url }),
                Statement::LetSelect { binder: "this".into(), selector },
                Statement::Stream(Stream {
                    binder: None,
                    timer: None,
                    source: Some("this".into()),
                    predicate: None,
                    sink: Sink::Call(Call {
                        callee: skill.to_string(),
                        args: vec![Arg {
                            name: None,
                            value: ValueExpr::FieldRef { var: "this".into(), field: Field::Text },
                        }],
                    }),
                }),
            ]
        }
    };

    let program = Program { items: entry };
    let plan = compile(&program, &repo.function_map()).map_err(|e| match e {
        webtalk::runtime::RuntimeError::Type(_) => CliError::types(e.to_string()),
        other => CliError::runtime(other.to_string()),
    })?;
    let outcome = execute_entry(&plan, &manifest, &ExecOptions::default())
        .map_err(|e| CliError::runtime(e.to_string()))?;
    for record in &outcome.notifies {
        let _ = writeln!(out, "{}", notify_line(record));
    }
    if let Some(until) = until_minutes {
        if outcome.timers.is_empty() {
            return Err(CliError::runtime(format!("skill `{skill}` schedules no timers")));
        }
        let mut clock = VirtualClock::starting_at(0, TimeOfDay::new(0, 0).expect("valid"));
        let notifies = fire_timers(
            &plan,
            &outcome.timers,
            &manifest,
            &mut clock,
            until,
            &ExecOptions::default(),
        )
        .map_err(|e| CliError::runtime(e.to_string()))?;
        for record in &notifies {
            let _ = writeln!(out, "{}", notify_line(record));
        }
    }
    Ok(())
}

/// `list`: one line per stored skill with its parameter signature.
pub fn cmd_list(skills_dir: &Path, out: &mut impl std::io::Write) -> CliResult<()> {
    let repo = SkillRepository::load(skills_dir)?;
    for decl in &repo.skills {
        let params = decl
            .params
            .iter()
            .map(|p| format!("{} : String", p.name))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(out, "{}({params})", decl.name);
    }
    Ok(())
}

/// `compile`: typecheck a source file and print its canonical form.
pub fn cmd_compile(
    file: &Path,
    skills_dir: Option<&Path>,
    out: &mut impl std::io::Write,
) -> CliResult<()> {
    let source = fs::read_to_string(file)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", file.display())))?;
    let program = parse_program(&source)
        .map_err(|e| CliError::input(format!("{}:{e}", file.display())))?;
    let sigs: SignatureMap = match skills_dir {
        Some(dir) => SkillRepository::load(dir)?
            .skills
            .iter()
            .map(|s| (s.name.clone(), signature_of(s)))
            .collect(),
        None => SignatureMap::new(),
    };
    let errors = typecheck(&program, &sigs);
    if !errors.is_empty() {
        let joined = errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n");
        return Err(CliError::types(joined));
    }
    let _ = write!(out, "{}", print_program(&program));
    Ok(())
}

/// Parses `3d`, `12h`, `45m`, or a bare minute count.
pub fn parse_duration_minutes(raw: &str) -> CliResult<u64> {
    let raw = raw.trim();
    let (digits, unit) = match raw.chars().last() {
        Some(c) if c.is_ascii_alphabetic() => (&raw[..raw.len() - 1], Some(c)),
        _ => (raw, None),
    };
    let n: u64 = digits
        .parse()
        .map_err(|_| CliError::input(format!("bad duration `{raw}`")))?;
    Ok(match unit {
        None | Some('m') => n,
        Some('h') => n * 60,
        Some('d') => n * 24 * 60,
        Some(other) => return Err(CliError::input(format!("bad duration unit `{other}`"))),
    })
}

/// Args helper for tests invoking skills directly.
pub fn value_args(decl: &FunctionDecl, values: &[&str]) -> BTreeMap<String, String> {
    decl.params
        .iter()
        .zip(values)
        .map(|(p, v)| (p.name.clone(), v.to_string()))
        .collect()
}
