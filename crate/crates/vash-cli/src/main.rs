use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vash_cli::{
    cmd_compile, cmd_list, cmd_record, cmd_run, parse_duration_minutes, CliError, RunBinding,
    EXIT_INPUT,
};

#[derive(Parser)]
#[command(name = "vash", about = "Record web demonstrations into skills and run them", version)]
struct Cli {
    /// Emit diagnostics as JSON on stderr.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SkillsDir {
    /// Skill repository directory (defaults to $VASH_SKILLS).
    #[arg(long)]
    skills: Option<PathBuf>,
}

impl SkillsDir {
    fn resolve(&self) -> Result<PathBuf, CliError> {
        if let Some(dir) = &self.skills {
            return Ok(dir.clone());
        }
        std::env::var_os("VASH_SKILLS")
            .map(PathBuf::from)
            .ok_or_else(|| CliError::input("pass --skills or set VASH_SKILLS"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert a demonstration transcript into stored skills.
    Record {
        /// Site manifest (site.json) describing the simulated web.
        #[arg(long)]
        site: PathBuf,
        /// Newline-delimited JSON transcript of demonstration events.
        #[arg(long)]
        transcript: PathBuf,
        #[command(flatten)]
        skills: SkillsDir,
    },
    /// Execute a stored skill.
    Run {
        skill: String,
        /// Positional parameter values, one per declared parameter.
        #[arg(long = "with-value")]
        with_value: Vec<String>,
        /// Iterate the skill over the elements matching this selector.
        #[arg(long = "with-selection", requires = "on")]
        with_selection: Option<String>,
        /// Page to open for --with-selection.
        #[arg(long)]
        on: Option<String>,
        #[arg(long)]
        site: PathBuf,
        #[command(flatten)]
        skills: SkillsDir,
        /// Advance the virtual clock (e.g. 3d, 12h, 45m) firing timers.
        #[arg(long)]
        until: Option<String>,
    },
    /// List stored skills with their signatures.
    List {
        #[command(flatten)]
        skills: SkillsDir,
    },
    /// Typecheck a source file and print its canonical form.
    Compile {
        file: PathBuf,
        #[command(flatten)]
        skills: SkillsDir,
    },
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match &cli.command {
        Command::Record { site, transcript, skills } => {
            cmd_record(site, transcript, &skills.resolve()?, &mut stdout)
        }
        Command::Run { skill, with_value, with_selection, on, site, skills, until } => {
            if with_selection.is_some() && !with_value.is_empty() {
                return Err(CliError::input("--with-value and --with-selection are exclusive"));
            }
            let binding = match (with_selection, on) {
                (Some(selector), Some(url)) => {
                    RunBinding::Selection { selector: selector.clone(), url: url.clone() }
                }
                _ if with_value.is_empty() => RunBinding::None,
                _ => RunBinding::Values(with_value.clone()),
            };
            let until_minutes = until.as_deref().map(parse_duration_minutes).transpose()?;
            cmd_run(skill, binding, site, &skills.resolve()?, until_minutes, &mut stdout)
        }
        Command::List { skills } => cmd_list(&skills.resolve()?, &mut stdout),
        Command::Compile { file, skills } => {
            // The repository is optional context here.
            let dir = skills
                .skills
                .clone()
                .or_else(|| std::env::var_os("VASH_SKILLS").map(PathBuf::from));
            cmd_compile(file, dir.as_deref(), &mut stdout)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Clap handles --help/--version printing.
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let mut stderr = std::io::stderr().lock();
            if cli.json {
                let diag = serde_json::json!({ "error": err.message, "code": err.code });
                let _ = writeln!(stderr, "{diag}");
            } else {
                let _ = writeln!(stderr, "vash: {err}");
            }
            ExitCode::from(err.code as u8)
        }
    }
}
