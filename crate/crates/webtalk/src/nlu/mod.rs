//! Template-based matching of utterance strings to canonical recorder
//! commands.
//!
//! The template list lives in `templates.txt` next to this module and is
//! the single source of truth shared by the documentation and the tests.
//! Open-domain slots (`<func>`, `<var>`) capture arbitrary words, which
//! are lowercased and joined with `_` to form identifiers.

use std::sync::OnceLock;

use thiserror::Error;

use crate::lang::{AggregateOp, CompareOp, Constant, Field, Predicate, TimeOfDay};

pub const TEMPLATES: &str = include_str!("templates.txt");

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    StartRecording { func: String },
    StopRecording,
    Run { func: String },
    RunWithThis { func: String, cond: Option<Condition>, time: Option<TimeOfDay> },
    RunWithVar { func: String, var: String },
    RunIf { func: String, cond: Condition },
    RunAt { func: String, time: TimeOfDay },
    ReturnThis { cond: Option<Condition> },
    ReturnVar { var: String },
    Aggregate { op: AggregateOp },
    NameThis { var: String },
    StartSelection,
    StopSelection,
}

/// A parsed condition phrase: which variable it constrains and the
/// comparison itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub subject: CondSubject,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CondSubject {
    This,
    Var(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum NluError {
    #[error("utterance matches no known command: `{0}`")]
    NoMatch(String),
    #[error("utterance is ambiguous between templates: `{0}`")]
    AmbiguousMatch(String),
    #[error("cannot read condition `{0}`")]
    MalformedPredicate(String),
    #[error("cannot read time `{0}`")]
    MalformedTime(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Literal(String),
    Slot(&'static str),
}

#[derive(Debug, Clone)]
struct Template {
    command: String,
    pieces: Vec<Piece>,
    literal_count: usize,
    order: usize,
}

fn templates() -> &'static Vec<Template> {
    static CACHE: OnceLock<Vec<Template>> = OnceLock::new();
    CACHE.get_or_init(|| {
        let mut parsed = Vec::new();
        for (order, line) in TEMPLATES.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (command, pattern) = line
                .split_once('\t')
                .expect("template line is `command<TAB>pattern`");
            let pieces: Vec<Piece> = pattern
                .split_whitespace()
                .map(|tok| match tok {
                    "<func>" => Piece::Slot("func"),
                    "<var>" => Piece::Slot("var"),
                    "<agg>" => Piece::Slot("agg"),
                    "<time>" => Piece::Slot("time"),
                    "<cond>" => Piece::Slot("cond"),
                    lit => Piece::Literal(lit.to_ascii_lowercase()),
                })
                .collect();
            let literal_count = pieces.iter().filter(|p| matches!(p, Piece::Literal(_))).count();
            parsed.push(Template { command: command.to_string(), pieces, literal_count, order });
        }
        let mut sorted = parsed;
        sorted.sort_by(|a, b| b.literal_count.cmp(&a.literal_count).then(a.order.cmp(&b.order)));
        sorted
    })
}

/// Splits an utterance into lowercase words; double-quoted spans stay
/// intact as single tokens (quotes preserved) so string constants survive.
fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if c == '"' {
            let mut tok = String::from('"');
            chars.next();
            for d in chars.by_ref() {
                tok.push(d);
                if d == '"' {
                    break;
                }
            }
            tokens.push(tok);
            continue;
        }
        let mut tok = String::new();
        while let Some(&d) = chars.peek() {
            if d.is_whitespace() {
                break;
            }
            tok.push(d);
            chars.next();
        }
        let trimmed = tok.trim_matches(|c: char| matches!(c, '.' | ',' | '?' | '!'));
        if !trimmed.is_empty() {
            tokens.push(trimmed.to_ascii_lowercase());
        }
    }
    tokens
}

/// Words that can never be part of an open-domain name; they anchor the
/// template structure instead.
const RESERVED: &[&str] = &["this", "recording", "selection"];

#[derive(Debug, Default, Clone)]
struct Captures {
    func: Option<String>,
    var: Option<String>,
    agg: Option<String>,
    time: Option<String>,
    cond: Option<String>,
}

fn try_match(pieces: &[Piece], tokens: &[String], captures: &mut Captures) -> bool {
    let Some((piece, rest)) = pieces.split_first() else {
        return tokens.is_empty();
    };
    match piece {
        Piece::Literal(lit) => match tokens.split_first() {
            Some((tok, rest_toks)) if tok == lit => try_match(rest, rest_toks, captures),
            _ => false,
        },
        Piece::Slot(slot) => {
            let max = tokens.len();
            for take in 1..=max {
                let captured = tokens[..take].join(" ");
                if matches!(*slot, "func" | "var")
                    && tokens[..take].iter().any(|t| RESERVED.contains(&t.as_str()))
                {
                    continue;
                }
                let mut attempt = captures.clone();
                match *slot {
                    "func" => attempt.func = Some(captured),
                    "var" => attempt.var = Some(captured),
                    "agg" => attempt.agg = Some(captured),
                    "time" => attempt.time = Some(captured),
                    "cond" => attempt.cond = Some(captured),
                    _ => unreachable!(),
                }
                if try_match(rest, &tokens[take..], &mut attempt) {
                    *captures = attempt;
                    return true;
                }
            }
            false
        }
    }
}

/// Multi-word names become identifiers: lowercased, spaces to `_`.
pub fn normalize_name(words: &str) -> String {
    words.split_whitespace().collect::<Vec<_>>().join("_").to_ascii_lowercase()
}

/// Matches `text` against the committed templates and builds the
/// command, parsing condition and time slots with their own grammars.
pub fn parse_utterance(text: &str) -> Result<Command, NluError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(NluError::NoMatch(text.to_string()));
    }
    let mut hits: Vec<(&Template, Captures)> = Vec::new();
    for template in templates() {
        let mut captures = Captures::default();
        if try_match(&template.pieces, &tokens, &mut captures) {
            hits.push((template, captures));
        }
    }
    let Some((best, captures)) = hits.first() else {
        return Err(NluError::NoMatch(text.to_string()));
    };
    let rivals = hits
        .iter()
        .filter(|(t, _)| t.literal_count == best.literal_count && t.command != best.command)
        .count();
    if rivals > 0 {
        return Err(NluError::AmbiguousMatch(text.to_string()));
    }

    let func = || normalize_name(captures.func.as_deref().unwrap_or_default());
    let var = || normalize_name(captures.var.as_deref().unwrap_or_default());
    let cond = |slot: &Option<String>| -> Result<Condition, NluError> {
        parse_condition(slot.as_deref().unwrap_or_default())
    };
    let time = |slot: &Option<String>| -> Result<TimeOfDay, NluError> {
        parse_time(slot.as_deref().unwrap_or_default())
    };

    let command = match best.command.as_str() {
        "start_recording" => Command::StartRecording { func: func() },
        "stop_recording" => Command::StopRecording,
        "run" => Command::Run { func: func() },
        "run_with_this" => Command::RunWithThis { func: func(), cond: None, time: None },
        "run_with_this_if" => Command::RunWithThis {
            func: func(),
            cond: Some(cond(&captures.cond)?),
            time: None,
        },
        "run_with_this_at" => Command::RunWithThis {
            func: func(),
            cond: None,
            time: Some(time(&captures.time)?),
        },
        "run_with_var" => Command::RunWithVar { func: func(), var: var() },
        "run_if" => Command::RunIf { func: func(), cond: cond(&captures.cond)? },
        "run_at" => Command::RunAt { func: func(), time: time(&captures.time)? },
        "return_this" => Command::ReturnThis { cond: None },
        "return_this_if" => Command::ReturnThis { cond: Some(cond(&captures.cond)?) },
        "return_var" => Command::ReturnVar { var: var() },
        "aggregate" => {
            let raw = captures.agg.as_deref().unwrap_or_default();
            let op = AggregateOp::from_name(&normalize_name(raw))
                .ok_or_else(|| NluError::NoMatch(text.to_string()))?;
            Command::Aggregate { op }
        }
        "name_this" => Command::NameThis { var: var() },
        "start_selection" => Command::StartSelection,
        "stop_selection" => Command::StopSelection,
        other => unreachable!("unknown template command `{other}`"),
    };
    Ok(command)
}

/// Parses a condition phrase: `this is <op> <constant>` or
/// `the <name> is <op> <constant>`. Bare numbers compare the `number`
/// field; quoted strings compare `text`.
pub fn parse_condition(slot: &str) -> Result<Condition, NluError> {
    let tokens = tokenize(slot);
    let bad = || NluError::MalformedPredicate(slot.to_string());

    let (subject, rest) = match tokens.split_first() {
        Some((t, rest)) if t == "this" => (CondSubject::This, rest),
        Some((t, rest)) if t == "the" => {
            // Everything up to `is` names the variable.
            let is_pos = rest.iter().position(|t| t == "is").ok_or_else(bad)?;
            if is_pos == 0 {
                return Err(bad());
            }
            (CondSubject::Var(normalize_name(&rest[..is_pos].join(" "))), &rest[is_pos..])
        }
        _ => return Err(bad()),
    };
    let rest = match rest.split_first() {
        Some((t, rest)) if t == "is" => rest,
        _ => return Err(bad()),
    };

    let phrases: [(&[&str], CompareOp); 6] = [
        (&["greater", "than"], CompareOp::Gt),
        (&["less", "than"], CompareOp::Lt),
        (&["at", "least"], CompareOp::Ge),
        (&["at", "most"], CompareOp::Le),
        (&["not", "equal", "to"], CompareOp::Ne),
        (&["equal", "to"], CompareOp::Eq),
    ];
    let (op, rest) = phrases
        .iter()
        .find_map(|(words, op)| {
            rest.strip_prefix(
                &words.iter().map(|w| w.to_string()).collect::<Vec<_>>()[..],
            )
            .map(|rest| (*op, rest))
        })
        .ok_or_else(bad)?;

    let [constant_tok] = rest else { return Err(bad()) };
    let ordering = matches!(op, CompareOp::Gt | CompareOp::Lt | CompareOp::Ge | CompareOp::Le);
    let predicate = if let Some(quoted) = constant_tok
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
    {
        if ordering {
            return Err(bad());
        }
        Predicate { field: Field::Text, op, constant: Constant::Text(quoted.to_string()) }
    } else {
        let value: f64 = constant_tok.parse().map_err(|_| bad())?;
        Predicate { field: Field::Number, op, constant: Constant::Number(value) }
    };
    Ok(Condition { subject, predicate })
}

/// The comparison alone, with the subject discarded.
pub fn parse_predicate(slot: &str) -> Result<Predicate, NluError> {
    parse_condition(slot).map(|c| c.predicate)
}

/// Parses `10am`, `12:30pm`, or 24-hour `HH:MM` into a normalized time.
pub fn parse_time(slot: &str) -> Result<TimeOfDay, NluError> {
    let raw = slot.trim().to_ascii_lowercase();
    let bad = || NluError::MalformedTime(slot.to_string());
    let (body, meridiem) = if let Some(b) = raw.strip_suffix("am") {
        (b.trim().to_string(), Some(false))
    } else if let Some(b) = raw.strip_suffix("pm") {
        (b.trim().to_string(), Some(true))
    } else {
        (raw.clone(), None)
    };
    let (hour_s, minute_s) = match body.split_once(':') {
        Some((h, m)) => (h.to_string(), m.to_string()),
        None => (body.clone(), "0".to_string()),
    };
    if body.contains(':') && minute_s.len() != 2 {
        return Err(bad());
    }
    let mut hour: u8 = hour_s.parse().map_err(|_| bad())?;
    let minute: u8 = minute_s.parse().map_err(|_| bad())?;
    match meridiem {
        Some(pm) => {
            if hour == 0 || hour > 12 {
                return Err(bad());
            }
            if pm && hour != 12 {
                hour += 12;
            }
            if !pm && hour == 12 {
                hour = 0;
            }
        }
        None => {
            if !body.contains(':') {
                // A bare number without am/pm is not a time.
                return Err(bad());
            }
        }
    }
    TimeOfDay::new(hour, minute).ok_or_else(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_forms_match() {
        assert_eq!(
            parse_utterance("Start recording stocks").unwrap(),
            Command::StartRecording { func: "stocks".into() }
        );
        assert_eq!(parse_utterance("stop recording").unwrap(), Command::StopRecording);
        assert_eq!(
            parse_utterance("run price with this").unwrap(),
            Command::RunWithThis { func: "price".into(), cond: None, time: None }
        );
        assert_eq!(
            parse_utterance("calculate the sum of this").unwrap(),
            Command::Aggregate { op: AggregateOp::Sum }
        );
        assert_eq!(
            parse_utterance("run stock with this at 10am every day").unwrap(),
            Command::RunWithThis {
                func: "stock".into(),
                cond: None,
                time: Some(TimeOfDay::new(10, 0).unwrap())
            }
        );
        assert_eq!(
            parse_utterance("please do something"),
            Err(NluError::NoMatch("please do something".into()))
        );
    }

    #[test]
    fn multi_word_names_normalize() {
        assert_eq!(
            parse_utterance("start recording get stock quote").unwrap(),
            Command::StartRecording { func: "get_stock_quote".into() }
        );
        assert_eq!(
            parse_utterance("run get stock quote with this").unwrap(),
            Command::RunWithThis { func: "get_stock_quote".into(), cond: None, time: None }
        );
    }

    #[test]
    fn longest_template_wins() {
        let c = parse_utterance("run f with this if this is greater than 3").unwrap();
        assert_eq!(
            c,
            Command::RunWithThis {
                func: "f".into(),
                cond: Some(Condition {
                    subject: CondSubject::This,
                    predicate: Predicate {
                        field: Field::Number,
                        op: CompareOp::Gt,
                        constant: Constant::Number(3.0)
                    }
                }),
                time: None
            }
        );
        // Never the bare-run reading with a mangled name.
        assert!(!matches!(c, Command::Run { .. }));
    }

    #[test]
    fn conditions_parse() {
        let p = parse_predicate("this is greater than 98.6").unwrap();
        assert_eq!(
            p,
            Predicate { field: Field::Number, op: CompareOp::Gt, constant: Constant::Number(98.6) }
        );
        let p = parse_predicate("this is equal to \"open\"").unwrap();
        assert_eq!(
            p,
            Predicate { field: Field::Text, op: CompareOp::Eq, constant: Constant::Text("open".into()) }
        );
        assert!(matches!(
            parse_predicate("this is greater than \"abc\""),
            Err(NluError::MalformedPredicate(_))
        ));
        let c = parse_condition("the sum is at least 30").unwrap();
        assert_eq!(c.subject, CondSubject::Var("sum".into()));
        assert_eq!(c.predicate.op, CompareOp::Ge);
    }

    #[test]
    fn times_parse() {
        assert_eq!(parse_time("10am").unwrap(), TimeOfDay::new(10, 0).unwrap());
        assert_eq!(parse_time("12:30pm").unwrap(), TimeOfDay::new(12, 30).unwrap());
        assert_eq!(parse_time("12am").unwrap(), TimeOfDay::new(0, 0).unwrap());
        assert_eq!(parse_time("12pm").unwrap(), TimeOfDay::new(12, 0).unwrap());
        assert_eq!(parse_time("09:59").unwrap(), TimeOfDay::new(9, 59).unwrap());
        assert!(matches!(parse_time("25:00"), Err(NluError::MalformedTime(_))));
        assert!(matches!(parse_time("10"), Err(NluError::MalformedTime(_))));
    }

    #[test]
    fn selection_and_naming() {
        assert_eq!(parse_utterance("start selection").unwrap(), Command::StartSelection);
        assert_eq!(parse_utterance("stop selection").unwrap(), Command::StopSelection);
        assert_eq!(
            parse_utterance("this is a zip code").unwrap(),
            Command::NameThis { var: "zip_code".into() }
        );
        assert_eq!(
            parse_utterance("return the sum").unwrap(),
            Command::ReturnVar { var: "sum".into() }
        );
        assert_eq!(
            parse_utterance("run price with the ingredients").unwrap(),
            Command::RunWithVar { func: "price".into(), var: "ingredients".into() }
        );
    }

    #[test]
    fn every_template_line_is_exercised_by_a_synthetic_utterance() {
        // Substitute plain fillers into each committed template and check
        // it parses to the right command kind; also verifies no template
        // is shadowed into ambiguity.
        for line in TEMPLATES.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (command, pattern) = line.split_once('\t').unwrap();
            let utterance = pattern
                .replace("<func>", "probe task")
                .replace("<var>", "basket")
                .replace("<agg>", "sum")
                .replace("<time>", "10am")
                .replace("<cond>", "this is greater than 3");
            let parsed = parse_utterance(&utterance)
                .unwrap_or_else(|e| panic!("template `{pattern}` failed: {e}"));
            let kind = match parsed {
                Command::StartRecording { .. } => "start_recording",
                Command::StopRecording => "stop_recording",
                Command::Run { .. } => "run",
                Command::RunWithThis { cond: Some(_), .. } => "run_with_this_if",
                Command::RunWithThis { time: Some(_), .. } => "run_with_this_at",
                Command::RunWithThis { .. } => "run_with_this",
                Command::RunWithVar { .. } => "run_with_var",
                Command::RunIf { .. } => "run_if",
                Command::RunAt { .. } => "run_at",
                Command::ReturnThis { cond: Some(_) } => "return_this_if",
                Command::ReturnThis { .. } => "return_this",
                Command::ReturnVar { .. } => "return_var",
                Command::Aggregate { .. } => "aggregate",
                Command::NameThis { .. } => "name_this",
                Command::StartSelection => "start_selection",
                Command::StopSelection => "stop_selection",
            };
            assert_eq!(kind, command, "utterance `{utterance}`");
        }
    }
}
