//! The code generator: consumes an ordered demonstration transcript (GUI
//! events plus utterances) and emits programs.
//!
//! Recording state is kept in a stack, one entry per open function
//! definition plus the top level. Completing a nested definition restores
//! the outer state and the page as it was when the nested recording
//! started, so the outer demonstration continues where it left off.
//!
//! Run commands issued mid-recording execute immediately: the statements
//! recorded so far (with parameters replaced by their concrete
//! demonstration values) plus the new statement run on a fresh session,
//! and the result is surfaced as an effect.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{
    AggregateOp, Arg, Call, CallStatement, Field, FunctionDecl, Param, Predicate, Program,
    Statement, Stream, Sink, TimeOfDay, ValueExpr, WebOp,
};
use crate::nlu::{self, Command, CondSubject, Condition, NluError};
use crate::page::{self, ElementPath, PageError, Session, SiteManifest};
use crate::runtime::{
    self, predicate_passes, ExecOptions, ExecutionPlan, FunctionMap, NotifyRecord, RuntimeError,
};
use crate::selector::{self, SelectorError};
use crate::table::{ElementTable, Row};

/// One entry of a demonstration transcript. Element paths are resolved
/// against the recording session's current document at event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DemoEvent {
    Navigate { url: String },
    Click { path: ElementPath },
    /// A keystroke burst; `value` is the resulting full content of the
    /// element. Consecutive bursts on one element collapse into a single
    /// statement.
    KeyInput { path: ElementPath, value: String },
    /// A native (range) selection of one or more elements.
    NativeSelect { paths: Vec<ElementPath> },
    Copy,
    Paste { path: ElementPath },
    /// Paste of content copied outside the browser.
    ExternalPaste { path: ElementPath, value: String },
    Utterance { text: String },
    /// A click while selection mode is active: toggles membership.
    SelectionClick { path: ElementPath },
}

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error(transparent)]
    NoMatchUtterance(NluError),
    #[error("function `{func}` already has its one explicit navigation")]
    SecondNavigation { func: String },
    #[error("a second pasted value differs from the implicit parameter; name the parameter explicitly")]
    SecondImplicitParam,
    #[error("no current selection to attach the condition to")]
    NoSelectionForCondition,
    #[error("no current selection for `{action}`")]
    NoSelection { action: &'static str },
    #[error("`stop recording` without a recording in progress")]
    StopWithoutStart,
    #[error("recording still open for {0:?}")]
    UnfinishedRecording(Vec<String>),
    #[error("clipboard is empty")]
    EmptyClipboard,
    #[error("page interaction is suspended while selection mode is active")]
    SelectionModeActive,
    #[error("not in selection mode")]
    NotInSelectionMode,
    #[error("cannot rename here: {0}")]
    CannotRename(String),
    #[error("`{0}` is reserved and cannot be used as a name")]
    ReservedName(String),
    #[error("function `{func}` already has a return statement")]
    MultipleReturns { func: String },
    #[error("a timer and a condition cannot be combined in one command")]
    CompoundUnsupported,
    #[error("function `{0}` is already defined")]
    DuplicateFunction(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{0}` is not a known variable here")]
    UnknownVariable(String),
    #[error("variable `{0}` is already defined")]
    RedefinedVariable(String),
    #[error("`{callee}` takes {expected} parameter(s); this command supplies {got}")]
    CallShape { callee: String, expected: usize, got: usize },
    #[error("naming a parameter requires an open recording")]
    NotRecording,
    #[error(transparent)]
    Page(#[from] PageError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error("run failed: {0}")]
    Runtime(#[from] RuntimeError),
}

/// What a fed event did: statements appended, functions completed,
/// values surfaced.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Recorded(Statement),
    FunctionCompleted(String),
    /// A result shown to the demonstrator (run results, returns).
    Notify(NotifyRecord),
    AggregateValue { op: AggregateOp, value: f64 },
    /// A timer statement was recorded; nothing runs until the time comes.
    TimerScheduled { time: TimeOfDay, func: String },
    SelectionChanged { size: usize },
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    concrete: String,
}

#[derive(Debug, Clone)]
enum ThisOrigin {
    None,
    /// `let this := @select(…)` emitted in this scope.
    Selection { stmt_index: usize, rows: ElementTable },
    /// An input element holds focus; `this` is its content.
    InputFocus { value: ValueExpr, concrete: String },
    /// The previous command was a run with a result.
    RunResult { rows: ElementTable },
}

#[derive(Debug, Clone)]
enum ClipboardOrigin {
    Depth {
        depth: usize,
        /// Index of the `let this := @select` the copy referred to, so a
        /// paste can tell whether that binding is still the live one.
        binding_stmt: Option<usize>,
    },
    /// Copied inside a recording that has since completed.
    Stale,
}

#[derive(Debug, Clone)]
struct Clipboard {
    text: String,
    origin: ClipboardOrigin,
}

struct FuncInfo {
    name: String,
    params: Vec<ParamSpec>,
    explicit_nav_used: bool,
    /// The start-of-recording page load may be overwritten by an explicit
    /// navigation that happens before anything else is recorded.
    auto_load_replaceable: bool,
    has_notify: bool,
    snapshot: Session,
}

struct Scope {
    func: Option<FuncInfo>,
    statements: Vec<Statement>,
    this_origin: ThisOrigin,
    /// Concrete values of named variables created in this scope.
    vars: BTreeMap<String, ElementTable>,
    /// The live selection belonging to this demonstration context.
    selection: Vec<ElementPath>,
    /// Pending input coalescing target: (element, statement index).
    last_input: Option<(ElementPath, usize)>,
}

impl Scope {
    fn new(func: Option<FuncInfo>) -> Scope {
        Scope {
            func,
            statements: Vec::new(),
            this_origin: ThisOrigin::None,
            vars: BTreeMap::new(),
            selection: Vec::new(),
            last_input: None,
        }
    }
}

/// Everything a finished transcript produced.
#[derive(Debug, Clone)]
pub struct RecorderOutput {
    /// Top-level statements and function declarations, in demonstration
    /// order; nested declarations stay inside their enclosing bodies.
    pub program: Program,
    /// Completed functions, inner before outer.
    pub functions: Vec<FunctionDecl>,
    /// Values surfaced while recording, in order.
    pub notifies: Vec<NotifyRecord>,
}

pub struct Recorder {
    manifest: Arc<SiteManifest>,
    live: Session,
    scopes: Vec<Scope>,
    clipboard: Option<Clipboard>,
    selection_mode: Option<Vec<ElementPath>>,
    /// Skills known before this session; callable but not re-emitted.
    preloaded: Vec<FunctionDecl>,
    completed: Vec<FunctionDecl>,
    notify_log: Vec<NotifyRecord>,
    options: ExecOptions,
}

pub fn start_recorder(manifest: &Arc<SiteManifest>) -> Recorder {
    start_recorder_with_skills(manifest, Vec::new())
}

/// A recorder that can call (and must not shadow) already-saved skills.
pub fn start_recorder_with_skills(
    manifest: &Arc<SiteManifest>,
    skills: Vec<FunctionDecl>,
) -> Recorder {
    Recorder {
        manifest: Arc::clone(manifest),
        live: page::open_session(manifest),
        scopes: vec![Scope::new(None)],
        clipboard: None,
        selection_mode: None,
        preloaded: skills,
        completed: Vec::new(),
        notify_log: Vec::new(),
        options: ExecOptions::default(),
    }
}

impl Recorder {
    /// Number of open function recordings.
    pub fn depth(&self) -> usize {
        self.scopes.len() - 1
    }

    pub fn live_session(&self) -> &Session {
        &self.live
    }

    fn scope(&mut self) -> &mut Scope {
        self.scopes.last_mut().expect("top scope always present")
    }

    fn scope_ref(&self) -> &Scope {
        self.scopes.last().expect("top scope always present")
    }

    fn completed_map(&self) -> FunctionMap {
        self.preloaded
            .iter()
            .chain(self.completed.iter())
            .map(|f| (f.name.clone(), f.clone()))
            .collect()
    }

    fn find_completed(&self, name: &str) -> Option<&FunctionDecl> {
        self.completed
            .iter()
            .chain(self.preloaded.iter())
            .find(|f| f.name == name)
    }

    fn emit(&mut self, stmt: Statement, effects: &mut Vec<Effect>) -> usize {
        let scope = self.scope();
        scope.statements.push(stmt.clone());
        effects.push(Effect::Recorded(stmt));
        scope.statements.len() - 1
    }

    fn scope_name(&self) -> String {
        self.scope_ref()
            .func
            .as_ref()
            .map(|f| f.name.clone())
            .unwrap_or_else(|| "<top>".to_string())
    }

    fn generate_selector(&self, path: &ElementPath) -> Result<String, RecorderError> {
        let doc = self.live.document()?;
        Ok(selector::generate_selector(doc, path)?.to_string())
    }

    /// Applies one transcript event.
    pub fn feed(&mut self, event: &DemoEvent) -> Result<Vec<Effect>, RecorderError> {
        let mut effects = Vec::new();
        match event {
            DemoEvent::Navigate { url } => self.on_navigate(url, &mut effects)?,
            DemoEvent::Click { path } => self.on_click(path, &mut effects)?,
            DemoEvent::KeyInput { path, value } => {
                self.guard_interactive()?;
                self.on_set_input(path, value.clone(), None, &mut effects)?
            }
            DemoEvent::NativeSelect { paths } => self.on_native_select(paths, &mut effects)?,
            DemoEvent::Copy => self.on_copy()?,
            DemoEvent::Paste { path } => self.on_paste(path, &mut effects)?,
            DemoEvent::ExternalPaste { path, value } => {
                self.guard_interactive()?;
                self.on_set_input(path, value.clone(), None, &mut effects)?
            }
            DemoEvent::Utterance { text } => self.on_utterance(text, &mut effects)?,
            DemoEvent::SelectionClick { path } => self.on_selection_click(path, &mut effects)?,
        }
        Ok(effects)
    }

    /// Closes the recorder; fails while a recording is still open.
    pub fn finish(self) -> Result<RecorderOutput, RecorderError> {
        if self.scopes.len() > 1 {
            let open = self
                .scopes
                .iter()
                .filter_map(|s| s.func.as_ref().map(|f| f.name.clone()))
                .collect();
            return Err(RecorderError::UnfinishedRecording(open));
        }
        let top = self.scopes.into_iter().next().expect("top scope");
        Ok(RecorderOutput {
            program: Program { items: top.statements },
            functions: self.completed,
            notifies: self.notify_log,
        })
    }

    fn guard_interactive(&self) -> Result<(), RecorderError> {
        if self.selection_mode.is_some() {
            return Err(RecorderError::SelectionModeActive);
        }
        Ok(())
    }

    // -- GUI events ---------------------------------------------------------

    fn on_navigate(&mut self, url: &str, effects: &mut Vec<Effect>) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        self.live.navigate(url)?;
        let scope = self.scope();
        scope.this_origin = ThisOrigin::None;
        scope.selection.clear();
        scope.last_input = None;
        if let Some(func) = scope.func.as_mut() {
            if func.auto_load_replaceable {
                // The start-of-recording page was never interacted with;
                // the explicit navigation is the function's entry point.
                scope.statements[0] = Statement::WebOp(WebOp::Load { url: url.to_string() });
                func.auto_load_replaceable = false;
                func.explicit_nav_used = true;
                effects.push(Effect::Recorded(scope.statements[0].clone()));
            } else if !func.explicit_nav_used {
                func.explicit_nav_used = true;
                func.auto_load_replaceable = false;
                self.emit(Statement::WebOp(WebOp::Load { url: url.to_string() }), effects);
            } else {
                return Err(RecorderError::SecondNavigation { func: func.name.clone() });
            }
        }
        Ok(())
    }

    fn on_click(&mut self, path: &ElementPath, effects: &mut Vec<Effect>) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        let selector = self.generate_selector(path)?;
        self.live.click(path)?;
        let scope = self.scope();
        scope.this_origin = ThisOrigin::None;
        scope.selection.clear();
        scope.last_input = None;
        if let Some(func) = scope.func.as_mut() {
            func.auto_load_replaceable = false;
        }
        self.emit(Statement::WebOp(WebOp::Click { selector }), effects);
        Ok(())
    }

    /// Shared by typing, pasting, and external pastes. `value_expr` is
    /// what the emitted statement should carry; `None` means a constant
    /// of the typed text.
    fn on_set_input(
        &mut self,
        path: &ElementPath,
        concrete: String,
        value_expr: Option<ValueExpr>,
        effects: &mut Vec<Effect>,
    ) -> Result<(), RecorderError> {
        let selector = self.generate_selector(path)?;
        self.live.set_input(path, &concrete)?;
        let expr = value_expr.unwrap_or_else(|| ValueExpr::Const(concrete.clone()));
        let scope = self.scope();
        scope.selection.clear();
        if let Some(func) = scope.func.as_mut() {
            func.auto_load_replaceable = false;
        }
        let coalesced = match scope.last_input {
            Some((ref p, idx)) if p == path && idx + 1 == scope.statements.len() => Some(idx),
            _ => None,
        };
        match coalesced {
            Some(idx) => {
                let Statement::WebOp(WebOp::SetInput { value, .. }) = &mut scope.statements[idx]
                else {
                    unreachable!("coalescing target is a set_input");
                };
                match value {
                    // Typing over the implicit paste parameter replaces
                    // the paste: the statement holds the typed constant
                    // and the parameter disappears if nothing else uses
                    // it.
                    ValueExpr::ParamRef(name)
                        if name == "param" && matches!(expr, ValueExpr::Const(_)) =>
                    {
                        *value = expr.clone();
                        let still_used = scope
                            .statements
                            .iter()
                            .any(|s| references_param(s, "param"));
                        if !still_used {
                            if let Some(func) = scope.func.as_mut() {
                                func.params.retain(|p| p.name != "param");
                            }
                        }
                    }
                    // Typing into an explicitly named parameter's input
                    // updates that parameter's demonstration value.
                    ValueExpr::ParamRef(name) if matches!(expr, ValueExpr::Const(_)) => {
                        let name = name.clone();
                        if let Some(func) = scope.func.as_mut() {
                            if let Some(p) = func.params.iter_mut().find(|p| p.name == name) {
                                p.concrete = concrete.clone();
                            }
                        }
                    }
                    _ => *value = expr.clone(),
                }
                let stmt = scope.statements[idx].clone();
                scope.this_origin = ThisOrigin::InputFocus {
                    value: match &stmt {
                        Statement::WebOp(WebOp::SetInput { value, .. }) => value.clone(),
                        _ => expr,
                    },
                    concrete,
                };
                effects.push(Effect::Recorded(stmt));
            }
            None => {
                scope.this_origin =
                    ThisOrigin::InputFocus { value: expr.clone(), concrete: concrete.clone() };
                let idx = {
                    let stmt = Statement::WebOp(WebOp::SetInput { selector, value: expr });
                    scope.statements.push(stmt.clone());
                    effects.push(Effect::Recorded(stmt));
                    scope.statements.len() - 1
                };
                self.scope().last_input = Some((path.clone(), idx));
            }
        }
        Ok(())
    }

    fn on_native_select(
        &mut self,
        paths: &[ElementPath],
        effects: &mut Vec<Effect>,
    ) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        let mut set: Vec<ElementPath> = paths.to_vec();
        set.sort();
        set.dedup();
        if set.is_empty() {
            let scope = self.scope();
            scope.selection.clear();
            scope.this_origin = ThisOrigin::None;
            effects.push(Effect::SelectionChanged { size: 0 });
            return Ok(());
        }
        self.bind_selection(set, effects)
    }

    /// Emits `let this := @select(…)` for a selection set and updates the
    /// scope's `this`.
    fn bind_selection(
        &mut self,
        set: Vec<ElementPath>,
        effects: &mut Vec<Effect>,
    ) -> Result<(), RecorderError> {
        let doc = self.live.document()?;
        let selector = if set.len() == 1 {
            selector::generate_selector(doc, &set[0])?
        } else {
            selector::selection_set_selector(doc, &set)?
        };
        let rows = self.live.read_elements(&set)?;
        let size = set.len();
        let scope = self.scope();
        scope.selection = set;
        scope.last_input = None;
        if let Some(func) = scope.func.as_mut() {
            func.auto_load_replaceable = false;
        }
        let idx = self.emit(
            Statement::LetSelect { binder: "this".into(), selector: selector.to_string() },
            effects,
        );
        self.scope().this_origin = ThisOrigin::Selection { stmt_index: idx, rows };
        effects.push(Effect::SelectionChanged { size });
        Ok(())
    }

    fn on_copy(&mut self) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        let depth = self.depth();
        let scope = self.scope_ref();
        if scope.selection.is_empty() {
            return Err(RecorderError::NoSelection { action: "copy" });
        }
        let rows = self.live.read_elements(&scope.selection)?;
        let text = rows.rows.iter().map(|r| r.text.clone()).collect::<Vec<_>>().join("\n");
        let binding_stmt = match scope.this_origin {
            ThisOrigin::Selection { stmt_index, .. } => Some(stmt_index),
            _ => None,
        };
        self.clipboard = Some(Clipboard {
            text,
            origin: ClipboardOrigin::Depth { depth, binding_stmt },
        });
        Ok(())
    }

    fn on_paste(&mut self, path: &ElementPath, effects: &mut Vec<Effect>) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        let depth = self.depth();
        let clipboard = self.clipboard.clone().ok_or(RecorderError::EmptyClipboard)?;
        let value_expr = match clipboard.origin {
            ClipboardOrigin::Depth { depth: d, binding_stmt } if d == depth => {
                // Same-function copy: the value refers to the selected
                // element, provided that selection is still the live
                // `this` binding. Otherwise the literal text is pasted.
                let scope = self.scope_ref();
                let binding_current = binding_stmt.is_some_and(|idx| {
                    !scope.statements[idx + 1..].iter().any(binds_this)
                });
                if binding_current {
                    ValueExpr::FieldRef { var: "this".into(), field: Field::Text }
                } else {
                    ValueExpr::Const(clipboard.text.clone())
                }
            }
            ClipboardOrigin::Depth { depth: d, .. } if d < depth => {
                let scope = self.scope();
                let func = scope.func.as_mut().expect("depth > origin implies a function");
                match func.params.iter().find(|p| p.name == "param") {
                    Some(existing) if existing.concrete == clipboard.text => {}
                    Some(_) => return Err(RecorderError::SecondImplicitParam),
                    None => func
                        .params
                        .push(ParamSpec { name: "param".into(), concrete: clipboard.text.clone() }),
                }
                ValueExpr::ParamRef("param".into())
            }
            // Copied in a recording that already completed, or in some
            // deeper context: paste the literal text.
            _ => ValueExpr::Const(clipboard.text.clone()),
        };
        self.on_set_input(path, clipboard.text, Some(value_expr), effects)
    }

    fn on_selection_click(
        &mut self,
        path: &ElementPath,
        effects: &mut Vec<Effect>,
    ) -> Result<(), RecorderError> {
        let Some(set) = self.selection_mode.as_mut() else {
            return Err(RecorderError::NotInSelectionMode);
        };
        if self.live.document()?.resolve(path).is_none() {
            return Err(PageError::DanglingPath(path.0.clone()).into());
        }
        match set.iter().position(|p| p == path) {
            Some(i) => {
                set.remove(i);
            }
            None => set.push(path.clone()),
        }
        effects.push(Effect::SelectionChanged { size: set.len() });
        Ok(())
    }

    // -- Utterances ---------------------------------------------------------

    fn on_utterance(&mut self, text: &str, effects: &mut Vec<Effect>) -> Result<(), RecorderError> {
        let command = nlu::parse_utterance(text).map_err(RecorderError::NoMatchUtterance)?;
        match command {
            Command::StartRecording { func } => self.cmd_start_recording(func, effects),
            Command::StopRecording => self.cmd_stop_recording(effects),
            Command::Run { func } => self.cmd_run_plain(func, effects),
            Command::RunWithThis { func, cond, time } => {
                self.cmd_run_with_this(func, cond, time, effects)
            }
            Command::RunWithVar { func, var } => self.cmd_run_with_var(func, var, effects),
            Command::RunIf { func, cond } => self.cmd_run_if(func, cond, effects),
            Command::RunAt { func, time } => self.cmd_run_at(func, time, effects),
            Command::ReturnThis { cond } => self.cmd_return_this(cond, effects),
            Command::ReturnVar { var } => self.cmd_return_var(var, effects),
            Command::Aggregate { op } => self.cmd_aggregate(op, effects),
            Command::NameThis { var } => self.cmd_name_this(var, effects),
            Command::StartSelection => {
                self.guard_interactive()?;
                self.selection_mode = Some(Vec::new());
                Ok(())
            }
            Command::StopSelection => self.cmd_stop_selection(effects),
        }
    }

    fn cmd_start_recording(
        &mut self,
        func: String,
        effects: &mut Vec<Effect>,
    ) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        if func.is_empty() || func == "this" || func == "param" {
            return Err(RecorderError::ReservedName(func));
        }
        let open = self.scopes.iter().any(|s| s.func.as_ref().is_some_and(|f| f.name == func));
        if open || self.find_completed(&func).is_some() {
            return Err(RecorderError::DuplicateFunction(func));
        }
        let snapshot = self.live.clone();
        let current_url = self.live.current.as_ref().map(|d| d.url.clone());
        let mut scope = Scope::new(Some(FuncInfo {
            name: func,
            params: Vec::new(),
            explicit_nav_used: false,
            auto_load_replaceable: current_url.is_some(),
            has_notify: false,
            snapshot,
        }));
        if let Some(url) = current_url {
            let stmt = Statement::WebOp(WebOp::Load { url });
            scope.statements.push(stmt.clone());
            effects.push(Effect::Recorded(stmt));
        }
        self.scopes.push(scope);
        Ok(())
    }

    fn cmd_stop_recording(&mut self, effects: &mut Vec<Effect>) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        if self.depth() == 0 {
            return Err(RecorderError::StopWithoutStart);
        }
        let scope = self.scopes.pop().expect("depth checked");
        let func = scope.func.expect("non-top scope has a function");
        let decl = FunctionDecl {
            name: func.name.clone(),
            params: func.params.iter().map(|p| Param { name: p.name.clone() }).collect(),
            body: scope.statements,
        };
        self.completed.push(decl.clone());
        // The inner demonstration ran on its own view of the page; the
        // outer context resumes exactly where it paused.
        self.live = func.snapshot;
        if let Some(clip) = self.clipboard.as_mut() {
            if matches!(clip.origin, ClipboardOrigin::Depth { depth, .. } if depth > self.scopes.len() - 1)
            {
                clip.origin = ClipboardOrigin::Stale;
            }
        }
        let outer = self.scope();
        outer.last_input = None;
        let stmt = Statement::FunctionDecl(decl);
        outer.statements.push(stmt.clone());
        effects.push(Effect::Recorded(stmt));
        effects.push(Effect::FunctionCompleted(func.name));
        Ok(())
    }

    fn cmd_return_this(
        &mut self,
        cond: Option<Condition>,
        effects: &mut Vec<Effect>,
    ) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        let predicate = match cond {
            Some(c) => {
                if c.subject != CondSubject::This {
                    return Err(RecorderError::NoSelectionForCondition);
                }
                Some(c.predicate)
            }
            None => None,
        };
        let rows = self.require_this_table("return")?;
        self.mark_notify()?;
        self.emit(
            Statement::Stream(Stream {
                binder: None,
                timer: None,
                source: Some("this".into()),
                predicate: predicate.clone(),
                sink: Sink::Notify,
            }),
            effects,
        );
        self.surface_filtered(rows, predicate.as_ref(), effects);
        Ok(())
    }

    fn cmd_return_var(&mut self, var: String, effects: &mut Vec<Effect>) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        let rows = self
            .scope_ref()
            .vars
            .get(&var)
            .cloned()
            .ok_or_else(|| RecorderError::UnknownVariable(var.clone()))?;
        self.mark_notify()?;
        self.emit(
            Statement::Stream(Stream {
                binder: None,
                timer: None,
                source: Some(var),
                predicate: None,
                sink: Sink::Notify,
            }),
            effects,
        );
        self.surface_filtered(rows, None, effects);
        Ok(())
    }

    fn mark_notify(&mut self) -> Result<(), RecorderError> {
        if let Some(func) = self.scope().func.as_mut() {
            if func.has_notify {
                return Err(RecorderError::MultipleReturns { func: func.name.clone() });
            }
            func.has_notify = true;
        }
        Ok(())
    }

    fn surface_filtered(
        &mut self,
        rows: ElementTable,
        predicate: Option<&Predicate>,
        effects: &mut Vec<Effect>,
    ) {
        let filtered: Vec<Row> = rows
            .rows
            .into_iter()
            .filter(|r| predicate.map_or(true, |p| predicate_passes(p, r)))
            .collect();
        if !filtered.is_empty() {
            let record = NotifyRecord {
                function: self.scope_name(),
                rows: filtered,
                virtual_time: 0,
            };
            self.notify_log.push(record.clone());
            effects.push(Effect::Notify(record));
        }
    }

    fn cmd_aggregate(&mut self, op: AggregateOp, effects: &mut Vec<Effect>) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        let rows = self.require_this_table("aggregate")?;
        let binder = op.name().to_string();
        let scope = self.scope_ref();
        if scope.vars.contains_key(&binder)
            || scope.func.as_ref().is_some_and(|f| f.params.iter().any(|p| p.name == binder))
        {
            return Err(RecorderError::RedefinedVariable(binder));
        }
        let value = runtime::aggregate(op, &rows)?;
        self.emit(
            Statement::LetAggregate { binder: binder.clone(), op, source: "this".into() },
            effects,
        );
        self.scope()
            .vars
            .insert(binder, ElementTable::scalar(Row::from_number(value)));
        effects.push(Effect::AggregateValue { op, value });
        Ok(())
    }

    fn cmd_name_this(&mut self, var: String, effects: &mut Vec<Effect>) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        if var.is_empty() || var == "this" || var == "param" {
            return Err(RecorderError::ReservedName(var));
        }
        let scope = self.scope_ref();
        if scope.vars.contains_key(&var)
            || scope.func.as_ref().is_some_and(|f| f.params.iter().any(|p| p.name == var))
        {
            return Err(RecorderError::RedefinedVariable(var));
        }
        match scope.this_origin.clone() {
            ThisOrigin::InputFocus { value, concrete } => {
                let Some((_, idx)) = scope.last_input.clone() else {
                    return Err(RecorderError::CannotRename(
                        "the focused input's statement is no longer current".into(),
                    ));
                };
                let scope = self.scope();
                if scope.func.is_none() {
                    return Err(RecorderError::NotRecording);
                }
                match value {
                    ValueExpr::Const(_) => {
                        let func = scope.func.as_mut().expect("checked above");
                        func.params.push(ParamSpec { name: var.clone(), concrete: concrete.clone() });
                        set_input_value(&mut scope.statements[idx], ValueExpr::ParamRef(var.clone()));
                    }
                    ValueExpr::ParamRef(old) if old == "param" => {
                        // Promote the implicit parameter to the given name.
                        let func = scope.func.as_mut().expect("checked above");
                        for p in func.params.iter_mut() {
                            if p.name == "param" {
                                p.name = var.clone();
                            }
                        }
                        rename_param(&mut scope.statements, "param", &var);
                    }
                    _ => {
                        return Err(RecorderError::CannotRename(
                            "the input already refers to a named value".into(),
                        ))
                    }
                }
                let stmt = self.scope_ref().statements[idx].clone();
                self.scope().this_origin = ThisOrigin::InputFocus {
                    value: ValueExpr::ParamRef(var),
                    concrete,
                };
                effects.push(Effect::Recorded(stmt));
                Ok(())
            }
            ThisOrigin::Selection { stmt_index, rows } => {
                let scope = self.scope();
                if references_this(&scope.statements[stmt_index + 1..]) {
                    return Err(RecorderError::CannotRename(
                        "the selection was already used under its implicit name".into(),
                    ));
                }
                let Statement::LetSelect { binder, .. } = &mut scope.statements[stmt_index] else {
                    return Err(RecorderError::CannotRename("no pending selection binding".into()));
                };
                *binder = var.clone();
                let stmt = scope.statements[stmt_index].clone();
                scope.vars.insert(var, rows);
                scope.this_origin = ThisOrigin::None;
                effects.push(Effect::Recorded(stmt));
                Ok(())
            }
            _ => Err(RecorderError::NoSelection { action: "name" }),
        }
    }

    fn cmd_stop_selection(&mut self, effects: &mut Vec<Effect>) -> Result<(), RecorderError> {
        let Some(set) = self.selection_mode.take() else {
            return Err(RecorderError::NotInSelectionMode);
        };
        let mut set = set;
        set.sort();
        set.dedup();
        if set.is_empty() {
            let scope = self.scope();
            scope.selection.clear();
            scope.this_origin = ThisOrigin::None;
            effects.push(Effect::SelectionChanged { size: 0 });
            return Ok(());
        }
        self.bind_selection(set, effects)
    }

    // -- Run commands -------------------------------------------------------

    fn known_signature(&self, func: &str) -> Result<(usize, bool), RecorderError> {
        if self.scopes.iter().any(|s| s.func.as_ref().is_some_and(|f| f.name == func)) {
            // Calling a definition that is still being recorded would be
            // recursion once assembled.
            return Err(RecorderError::Runtime(RuntimeError::Type(vec![
                crate::lang::TypeError::RecursiveCall {
                    scope: self.scope_name(),
                    name: func.to_string(),
                },
            ])));
        }
        let decl = self
            .find_completed(func)
            .ok_or_else(|| RecorderError::UnknownFunction(func.to_string()))?;
        Ok((decl.params.len(), decl.returns_result()))
    }

    fn expect_shape(&self, callee: &str, expected: usize, got: usize) -> Result<(), RecorderError> {
        if expected != got {
            return Err(RecorderError::CallShape { callee: callee.to_string(), expected, got });
        }
        Ok(())
    }

    /// `this` as a table for iteration/conditions: a run result, an
    /// emitted selection, or a fresh `@select` for the live selection.
    fn require_this_table(&mut self, action: &'static str) -> Result<ElementTable, RecorderError> {
        match self.scope_ref().this_origin.clone() {
            ThisOrigin::RunResult { rows } => Ok(rows),
            ThisOrigin::Selection { rows, .. } => Ok(rows),
            _ => {
                let selection = self.scope_ref().selection.clone();
                if selection.is_empty() {
                    return Err(RecorderError::NoSelection { action });
                }
                let mut effects = Vec::new();
                self.bind_selection(selection, &mut effects)?;
                match self.scope_ref().this_origin.clone() {
                    ThisOrigin::Selection { rows, .. } => Ok(rows),
                    _ => unreachable!("bind_selection sets a selection origin"),
                }
            }
        }
    }

    fn row_arg() -> Vec<Arg> {
        vec![Arg { name: None, value: ValueExpr::FieldRef { var: "this".into(), field: Field::Text } }]
    }

    fn cmd_run_plain(&mut self, func: String, effects: &mut Vec<Effect>) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        let (arity, returns) = self.known_signature(&func)?;

        // A focused input supplies `this` as the single argument.
        if let ThisOrigin::InputFocus { value, concrete } = self.scope_ref().this_origin.clone() {
            self.expect_shape(&func, arity, 1)?;
            let binder = (returns && self.depth() >= 1).then(|| "this".to_string());
            let call = Call { callee: func.clone(), args: vec![Arg { name: None, value }] };
            self.emit(Statement::Call(CallStatement { binder, call }), effects);
            let rows = self.execute_rows(&func, vec![vec![concrete]], effects)?;
            if returns {
                self.scope().this_origin = ThisOrigin::RunResult { rows };
            }
            return Ok(());
        }

        self.expect_shape(&func, arity, 0)?;
        let binder = (returns && self.depth() >= 1).then(|| "this".to_string());
        self.emit(
            Statement::Call(CallStatement {
                binder,
                call: Call { callee: func.clone(), args: Vec::new() },
            }),
            effects,
        );
        let rows = self.execute_rows(&func, vec![vec![]], effects)?;
        if returns {
            self.scope().this_origin = ThisOrigin::RunResult { rows };
        }
        Ok(())
    }

    fn cmd_run_with_this(
        &mut self,
        func: String,
        cond: Option<Condition>,
        time: Option<TimeOfDay>,
        effects: &mut Vec<Effect>,
    ) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        if cond.is_some() && time.is_some() {
            return Err(RecorderError::CompoundUnsupported);
        }
        let (arity, returns) = self.known_signature(&func)?;

        if let ThisOrigin::InputFocus { .. } = self.scope_ref().this_origin {
            if cond.is_none() && time.is_none() {
                // "with this" while an input holds focus: a single call
                // with the input's content.
                return self.cmd_run_plain(func, effects);
            }
        }

        let predicate = match cond {
            Some(c) => {
                if c.subject != CondSubject::This {
                    return Err(RecorderError::NoSelectionForCondition);
                }
                Some(c.predicate)
            }
            None => None,
        };
        self.expect_shape(&func, arity, 1)?;
        let rows = self.require_this_table("run with this")?;

        if let Some(time) = time {
            self.emit(
                Statement::Stream(Stream {
                    binder: None,
                    timer: Some(time),
                    source: Some("this".into()),
                    predicate: None,
                    sink: Sink::Call(Call { callee: func.clone(), args: Self::row_arg() }),
                }),
                effects,
            );
            effects.push(Effect::TimerScheduled { time, func });
            return Ok(());
        }

        let binder = (returns && self.depth() >= 1).then(|| "this".to_string());
        self.emit(
            Statement::Stream(Stream {
                binder,
                timer: None,
                source: Some("this".into()),
                predicate: predicate.clone(),
                sink: Sink::Call(Call { callee: func.clone(), args: Self::row_arg() }),
            }),
            effects,
        );
        let passing: Vec<Vec<String>> = rows
            .rows
            .iter()
            .filter(|r| predicate.as_ref().map_or(true, |p| predicate_passes(p, r)))
            .map(|r| vec![r.text.clone()])
            .collect();
        let result = self.execute_rows(&func, passing, effects)?;
        if returns {
            self.scope().this_origin = ThisOrigin::RunResult { rows: result };
        }
        Ok(())
    }

    fn cmd_run_with_var(
        &mut self,
        func: String,
        var: String,
        effects: &mut Vec<Effect>,
    ) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        let (arity, returns) = self.known_signature(&func)?;
        self.expect_shape(&func, arity, 1)?;
        let rows = self
            .scope_ref()
            .vars
            .get(&var)
            .cloned()
            .ok_or_else(|| RecorderError::UnknownVariable(var.clone()))?;
        let binder = (returns && self.depth() >= 1).then(|| "this".to_string());
        self.emit(
            Statement::Stream(Stream {
                binder,
                timer: None,
                source: Some(var),
                predicate: None,
                sink: Sink::Call(Call { callee: func.clone(), args: Self::row_arg() }),
            }),
            effects,
        );
        let args: Vec<Vec<String>> = rows.rows.iter().map(|r| vec![r.text.clone()]).collect();
        let result = self.execute_rows(&func, args, effects)?;
        if returns {
            self.scope().this_origin = ThisOrigin::RunResult { rows: result };
        }
        Ok(())
    }

    fn cmd_run_if(
        &mut self,
        func: String,
        cond: Condition,
        effects: &mut Vec<Effect>,
    ) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        let (arity, returns) = self.known_signature(&func)?;
        self.expect_shape(&func, arity, 0)?;
        let (source, rows) = match &cond.subject {
            CondSubject::This => {
                if matches!(self.scope_ref().this_origin, ThisOrigin::None | ThisOrigin::InputFocus { .. })
                    && self.scope_ref().selection.is_empty()
                {
                    return Err(RecorderError::NoSelectionForCondition);
                }
                let rows = self.require_this_table("run if")?;
                ("this".to_string(), rows)
            }
            CondSubject::Var(v) => {
                let rows = self
                    .scope_ref()
                    .vars
                    .get(v)
                    .cloned()
                    .ok_or_else(|| RecorderError::UnknownVariable(v.clone()))?;
                (v.clone(), rows)
            }
        };
        let binder = (returns && self.depth() >= 1).then(|| "this".to_string());
        self.emit(
            Statement::Stream(Stream {
                binder,
                timer: None,
                source: Some(source),
                predicate: Some(cond.predicate.clone()),
                sink: Sink::Call(Call { callee: func.clone(), args: Vec::new() }),
            }),
            effects,
        );
        let passing: Vec<Vec<String>> = rows
            .rows
            .iter()
            .filter(|r| predicate_passes(&cond.predicate, r))
            .map(|_| Vec::new())
            .collect();
        let result = self.execute_rows(&func, passing, effects)?;
        if returns {
            self.scope().this_origin = ThisOrigin::RunResult { rows: result };
        }
        Ok(())
    }

    fn cmd_run_at(
        &mut self,
        func: String,
        time: TimeOfDay,
        effects: &mut Vec<Effect>,
    ) -> Result<(), RecorderError> {
        self.guard_interactive()?;
        let (arity, _) = self.known_signature(&func)?;
        self.expect_shape(&func, arity, 0)?;
        self.emit(
            Statement::Stream(Stream {
                binder: None,
                timer: Some(time),
                source: None,
                predicate: None,
                sink: Sink::Call(Call { callee: func.clone(), args: Vec::new() }),
            }),
            effects,
        );
        effects.push(Effect::TimerScheduled { time, func });
        Ok(())
    }

    // -- Run-during-record execution -----------------------------------------

    /// Executes the current demonstration context plus one call per
    /// argument list, surfacing the concatenated results. Inside a
    /// recording, the whole function recorded so far re-runs from the
    /// beginning on a fresh session with concrete parameter values; at
    /// the top level the calls run directly against the captured rows.
    fn execute_rows(
        &mut self,
        callee: &str,
        arg_rows: Vec<Vec<String>>,
        effects: &mut Vec<Effect>,
    ) -> Result<ElementTable, RecorderError> {
        let functions = self.completed_map();
        let result = if self.depth() >= 1 {
            let scope = self.scope_ref();
            let func = scope.func.as_ref().expect("depth >= 1");
            let mut entry: Vec<Statement> = scope
                .statements
                .iter()
                .filter(|s| !matches!(s, Statement::FunctionDecl(_)))
                .cloned()
                .collect();
            let concrete: BTreeMap<String, String> =
                func.params.iter().map(|p| (p.name.clone(), p.concrete.clone())).collect();
            for stmt in &mut entry {
                substitute_params(stmt, &concrete);
            }
            // The new statement is last; rebind it so its outcome can be
            // read back regardless of the recorded binding form.
            force_result_binder(entry.last_mut().expect("statement just recorded"));
            let plan = ExecutionPlan { functions, entry };
            let out = runtime::execute_entry(&plan, &self.manifest, &self.options)?;
            out.bindings.get(RESULT_BINDER).cloned().unwrap_or_default()
        } else {
            let plan = ExecutionPlan { functions, entry: Vec::new() };
            let decl = self
                .find_completed(callee)
                .ok_or_else(|| RecorderError::UnknownFunction(callee.to_string()))?;
            let param_names: Vec<String> = decl.params.iter().map(|p| p.name.clone()).collect();
            let mut table = ElementTable::empty();
            for values in &arg_rows {
                let args: BTreeMap<String, String> =
                    param_names.iter().cloned().zip(values.iter().cloned()).collect();
                match runtime::invoke_with(&plan, callee, &args, &self.manifest, &self.options) {
                    Ok(invocation) => {
                        if let Some(rows) = invocation.result {
                            table.extend(rows);
                        }
                    }
                    Err(err) => table.rows.push(Row { text: err.to_string(), number: None }),
                }
            }
            table
        };
        if !result.is_empty() {
            let record =
                NotifyRecord { function: callee.to_string(), rows: result.rows.clone(), virtual_time: 0 };
            self.notify_log.push(record.clone());
            effects.push(Effect::Notify(record));
        }
        Ok(result)
    }
}

const RESULT_BINDER: &str = "__run_result";

fn force_result_binder(stmt: &mut Statement) {
    match stmt {
        Statement::Stream(s) => s.binder = Some(RESULT_BINDER.into()),
        Statement::Call(c) => c.binder = Some(RESULT_BINDER.into()),
        _ => {}
    }
}

fn set_input_value(stmt: &mut Statement, new_value: ValueExpr) {
    if let Statement::WebOp(WebOp::SetInput { value, .. }) = stmt {
        *value = new_value;
    }
}

fn rename_param(statements: &mut [Statement], from: &str, to: &str) {
    for stmt in statements {
        match stmt {
            Statement::WebOp(WebOp::SetInput { value, .. }) => rename_in_value(value, from, to),
            Statement::Call(c) => {
                for arg in &mut c.call.args {
                    rename_in_value(&mut arg.value, from, to);
                }
            }
            Statement::Stream(s) => {
                if let Sink::Call(c) = &mut s.sink {
                    for arg in &mut c.args {
                        rename_in_value(&mut arg.value, from, to);
                    }
                }
            }
            _ => {}
        }
    }
}

fn rename_in_value(value: &mut ValueExpr, from: &str, to: &str) {
    if let ValueExpr::ParamRef(name) = value {
        if name == from {
            *name = to.to_string();
        }
    }
}

fn substitute_params(stmt: &mut Statement, concrete: &BTreeMap<String, String>) {
    let subst = |value: &mut ValueExpr| {
        if let ValueExpr::ParamRef(name) = value {
            if let Some(v) = concrete.get(name) {
                *value = ValueExpr::Const(v.clone());
            }
        }
    };
    match stmt {
        Statement::WebOp(WebOp::SetInput { value, .. }) => subst(value),
        Statement::Call(c) => c.call.args.iter_mut().for_each(|a| subst(&mut a.value)),
        Statement::Stream(s) => {
            if let Sink::Call(c) = &mut s.sink {
                c.args.iter_mut().for_each(|a| subst(&mut a.value));
            }
        }
        _ => {}
    }
}

/// Whether the statement (re)binds the `this` variable.
fn binds_this(stmt: &Statement) -> bool {
    match stmt {
        Statement::LetSelect { binder, .. } => binder == "this",
        Statement::Stream(s) => s.binder.as_deref() == Some("this"),
        Statement::Call(c) => c.binder.as_deref() == Some("this"),
        _ => false,
    }
}

/// Whether the statement references the named parameter.
fn references_param(stmt: &Statement, name: &str) -> bool {
    fn value_uses(value: &ValueExpr, name: &str) -> bool {
        matches!(value, ValueExpr::ParamRef(p) if p == name)
    }
    match stmt {
        Statement::WebOp(WebOp::SetInput { value, .. }) => value_uses(value, name),
        Statement::Call(c) => c.call.args.iter().any(|a| value_uses(&a.value, name)),
        Statement::Stream(s) => {
            matches!(&s.sink, Sink::Call(c) if c.args.iter().any(|a| value_uses(&a.value, name)))
        }
        _ => false,
    }
}

/// Whether any statement reads the `this` variable.
fn references_this(statements: &[Statement]) -> bool {
    fn value_uses(value: &ValueExpr) -> bool {
        matches!(value, ValueExpr::FieldRef { var, .. } if var == "this")
    }
    statements.iter().any(|stmt| match stmt {
        Statement::WebOp(WebOp::SetInput { value, .. }) => value_uses(value),
        Statement::LetAggregate { source, .. } => source == "this",
        Statement::Stream(s) => {
            s.source.as_deref() == Some("this")
                || matches!(&s.sink, Sink::Call(c) if c.args.iter().any(|a| value_uses(&a.value)))
        }
        Statement::Call(c) => c.call.args.iter().any(|a| value_uses(&a.value)),
        _ => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{print_program, typecheck, SignatureMap};
    use std::path::PathBuf;

    fn fixture_root() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
    }

    fn load_site(name: &str) -> Arc<SiteManifest> {
        Arc::new(SiteManifest::load(fixture_root().join("sites").join(name).join("site.json")).unwrap())
    }

    fn read_transcript(name: &str) -> Vec<DemoEvent> {
        let raw = std::fs::read_to_string(fixture_root().join("transcripts").join(name)).unwrap();
        raw.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    fn run_transcript(site: &str, transcript: &str) -> (RecorderOutput, Vec<Effect>) {
        let manifest = load_site(site);
        let mut recorder = start_recorder(&manifest);
        let mut effects = Vec::new();
        for event in read_transcript(transcript) {
            effects.extend(recorder.feed(&event).unwrap());
        }
        (recorder.finish().unwrap(), effects)
    }

    fn assert_typechecks(output: &RecorderOutput) {
        let errors = typecheck(&output.program, &SignatureMap::new());
        assert!(errors.is_empty(), "emitted program must typecheck: {errors:?}");
    }

    #[test]
    fn stock_transcript_matches_golden() {
        let (output, _) = run_transcript("stock", "stocks.jsonl");
        let golden =
            std::fs::read_to_string(fixture_root().join("golden/stocks.wt")).unwrap();
        assert_eq!(print_program(&output.program), golden);
        assert_typechecks(&output);
        assert_eq!(output.functions.len(), 1);
        // Recording surfaced the quote twice: once for the return during
        // recording, once for the final run (GOOG was selected).
        assert_eq!(output.notifies.len(), 2);
        assert_eq!(output.notifies[0].rows[0].text, "123.45");
        assert_eq!(output.notifies[1].rows[0].text, "2718.28");
    }

    #[test]
    fn recipe_transcript_matches_golden_with_nesting() {
        let (output, effects) = run_transcript("grocery", "recipe.jsonl");
        assert_typechecks(&output);
        assert_eq!(
            output.functions.iter().map(|f| f.name.clone()).collect::<Vec<_>>(),
            vec!["price", "recipe"],
            "inner function completes first"
        );
        // The recipe function is the second top-level item (after the
        // blog selection) and prints exactly in the golden nested form.
        let decl = output
            .program
            .items
            .iter()
            .find_map(|s| match s {
                Statement::FunctionDecl(f) if f.name == "recipe" => Some(f.clone()),
                _ => None,
            })
            .unwrap();
        let golden =
            std::fs::read_to_string(fixture_root().join("golden/recipe.wt")).unwrap();
        let printed = print_program(&Program { items: vec![Statement::FunctionDecl(decl)] });
        assert_eq!(printed, golden);
        assert_eq!(printed.lines().count(), 18);
        // Run-during-record surfaced the three prices, then the sum.
        let sums: Vec<f64> = effects
            .iter()
            .filter_map(|e| match e {
                Effect::AggregateValue { value, .. } => Some(*value),
                _ => None,
            })
            .collect();
        assert_eq!(sums, vec![9.75]);
        // Notify log: the return while recording `price`, the iterated
        // run's popup, then the returned sum.
        let log: Vec<(String, Vec<f64>)> = output
            .notifies
            .iter()
            .map(|n| {
                (n.function.clone(), n.rows.iter().map(|r| r.number.unwrap()).collect())
            })
            .collect();
        assert_eq!(
            log,
            vec![
                ("price".to_string(), vec![2.50]),
                ("price".to_string(), vec![2.50, 3.00, 4.25]),
                ("recipe".to_string(), vec![9.75]),
            ]
        );
    }

    #[test]
    fn keystrokes_coalesce_into_one_statement() {
        let manifest = load_site("stock");
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://finance.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording fill".into() }).unwrap();
        let path = ElementPath(vec![0, 1, 0]);
        r.feed(&DemoEvent::KeyInput { path: path.clone(), value: "fl".into() }).unwrap();
        r.feed(&DemoEvent::KeyInput { path: path.clone(), value: "flour".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "stop recording".into() }).unwrap();
        let output = r.finish().unwrap();
        let decl = &output.functions[0];
        let inputs: Vec<&Statement> = decl
            .body
            .iter()
            .filter(|s| matches!(s, Statement::WebOp(WebOp::SetInput { .. })))
            .collect();
        assert_eq!(inputs.len(), 1);
        assert!(matches!(
            inputs[0],
            Statement::WebOp(WebOp::SetInput { value: ValueExpr::Const(v), .. }) if v == "flour"
        ));
    }

    #[test]
    fn paste_provenance_rules() {
        let manifest = load_site("stock");
        // Same-function copy pastes as the selection's text.
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://news.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording grab".into() }).unwrap();
        r.feed(&DemoEvent::NativeSelect { paths: vec![ElementPath(vec![0, 2, 0])] }).unwrap();
        r.feed(&DemoEvent::Copy).unwrap();
        r.feed(&DemoEvent::Navigate { url: "https://finance.test/".into() }).unwrap();
        r.feed(&DemoEvent::Paste { path: ElementPath(vec![0, 1, 0]) }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "stop recording".into() }).unwrap();
        let output = r.finish().unwrap();
        let decl = &output.functions[0];
        assert!(decl.params.is_empty());
        assert!(decl.body.iter().any(|s| matches!(
            s,
            Statement::WebOp(WebOp::SetInput { value: ValueExpr::FieldRef { var, .. }, .. }) if var == "this"
        )));

        // Cross-function copy becomes the implicit parameter.
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://news.test/".into() }).unwrap();
        r.feed(&DemoEvent::NativeSelect { paths: vec![ElementPath(vec![0, 2, 0])] }).unwrap();
        r.feed(&DemoEvent::Copy).unwrap();
        r.feed(&DemoEvent::Navigate { url: "https://finance.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording grab".into() }).unwrap();
        r.feed(&DemoEvent::Paste { path: ElementPath(vec![0, 1, 0]) }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "stop recording".into() }).unwrap();
        let output = r.finish().unwrap();
        let decl = &output.functions[0];
        assert_eq!(decl.params, vec![Param { name: "param".into() }]);
        // External content pastes as a constant.
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://finance.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording grab".into() }).unwrap();
        r.feed(&DemoEvent::ExternalPaste {
            path: ElementPath(vec![0, 1, 0]),
            value: "MSFT".into(),
        })
        .unwrap();
        r.feed(&DemoEvent::Utterance { text: "stop recording".into() }).unwrap();
        let output = r.finish().unwrap();
        assert!(output.functions[0].body.iter().any(|s| matches!(
            s,
            Statement::WebOp(WebOp::SetInput { value: ValueExpr::Const(v), .. }) if v == "MSFT"
        )));
    }

    #[test]
    fn second_cross_function_paste_with_new_value_errors() {
        let manifest = load_site("stock");
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://news.test/".into() }).unwrap();
        r.feed(&DemoEvent::NativeSelect { paths: vec![ElementPath(vec![0, 2, 0])] }).unwrap();
        r.feed(&DemoEvent::Copy).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording grab".into() }).unwrap();
        // Pasting the same clipboard twice is fine.
        r.feed(&DemoEvent::Navigate { url: "https://finance.test/".into() }).unwrap();
        r.feed(&DemoEvent::Paste { path: ElementPath(vec![0, 1, 0]) }).unwrap();
        r.feed(&DemoEvent::Paste { path: ElementPath(vec![0, 1, 0]) }).unwrap();
        // A different cross-function value needs an explicit name.
        r.clipboard = Some(Clipboard {
            text: "OTHER".into(),
            origin: ClipboardOrigin::Depth { depth: 0, binding_stmt: None },
        });
        let err = r.feed(&DemoEvent::Paste { path: ElementPath(vec![0, 1, 0]) }).unwrap_err();
        assert!(matches!(err, RecorderError::SecondImplicitParam));
    }

    #[test]
    fn one_explicit_navigation_per_function() {
        let manifest = load_site("stock");
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://news.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording hop".into() }).unwrap();
        // First explicit navigation replaces the untouched start page.
        r.feed(&DemoEvent::Navigate { url: "https://finance.test/".into() }).unwrap();
        // Interact, then navigate again within the same function: allowed
        // once more? No; the budget is spent.
        let err = r.feed(&DemoEvent::Navigate { url: "https://news.test/".into() }).unwrap_err();
        assert!(matches!(err, RecorderError::SecondNavigation { .. }));
    }

    #[test]
    fn navigation_after_interaction_is_recorded_as_second_load() {
        let manifest = load_site("stock");
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://news.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording hop".into() }).unwrap();
        r.feed(&DemoEvent::NativeSelect { paths: vec![ElementPath(vec![0, 2, 0])] }).unwrap();
        r.feed(&DemoEvent::Navigate { url: "https://finance.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "stop recording".into() }).unwrap();
        let output = r.finish().unwrap();
        let loads: Vec<String> = output.functions[0]
            .body
            .iter()
            .filter_map(|s| match s {
                Statement::WebOp(WebOp::Load { url }) => Some(url.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(loads, vec!["https://news.test/", "https://finance.test/"]);
    }

    #[test]
    fn lifecycle_guards() {
        let manifest = load_site("stock");
        let r = start_recorder(&manifest);
        assert_eq!(r.depth(), 0);
        let mut r = start_recorder(&manifest);
        let err = r.feed(&DemoEvent::Utterance { text: "stop recording".into() }).unwrap_err();
        assert!(matches!(err, RecorderError::StopWithoutStart));
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://news.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording open_ended".into() }).unwrap();
        assert!(matches!(r.finish(), Err(RecorderError::UnfinishedRecording(_))));
    }

    #[test]
    fn selection_mode_toggles_membership() {
        let manifest = load_site("probe");
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://probe.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start selection".into() }).unwrap();
        // Page interaction is suspended while selecting.
        assert!(matches!(
            r.feed(&DemoEvent::Click { path: ElementPath(vec![0, 3, 1]) }),
            Err(RecorderError::SelectionModeActive)
        ));
        // Click both readings, then toggle the first back off.
        for i in [0usize, 1, 0] {
            r.feed(&DemoEvent::SelectionClick { path: ElementPath(vec![0, 1, i]) })
                .unwrap_or_else(|e| panic!("{e}"));
        }
        let effects = r.feed(&DemoEvent::Utterance { text: "stop selection".into() }).unwrap();
        assert!(effects.iter().any(|e| matches!(
            e,
            Effect::Recorded(Statement::LetSelect { .. })
        )));
        assert!(effects
            .iter()
            .any(|e| matches!(e, Effect::SelectionChanged { size: 1 })));
        let err = r.feed(&DemoEvent::Utterance { text: "stop selection".into() }).unwrap_err();
        assert!(matches!(err, RecorderError::NotInSelectionMode));
    }

    #[test]
    fn naming_converts_input_to_parameter() {
        let manifest = load_site("stock");
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://finance.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording lookup".into() }).unwrap();
        r.feed(&DemoEvent::KeyInput { path: ElementPath(vec![0, 1, 0]), value: "goog".into() })
            .unwrap();
        r.feed(&DemoEvent::Utterance { text: "this is a symbol".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "stop recording".into() }).unwrap();
        let output = r.finish().unwrap();
        let decl = &output.functions[0];
        assert_eq!(decl.params, vec![Param { name: "symbol".into() }]);
        assert!(decl.body.iter().any(|s| matches!(
            s,
            Statement::WebOp(WebOp::SetInput { value: ValueExpr::ParamRef(p), .. }) if p == "symbol"
        )));
    }

    #[test]
    fn naming_a_selection_renames_the_binding() {
        let manifest = load_site("probe");
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://probe.test/".into() }).unwrap();
        r.feed(&DemoEvent::NativeSelect {
            paths: vec![ElementPath(vec![0, 1, 0]), ElementPath(vec![0, 1, 1])],
        })
        .unwrap();
        r.feed(&DemoEvent::Utterance { text: "this is a readings list".into() }).unwrap();
        let output = r.finish().unwrap();
        assert!(matches!(
            &output.program.items[0],
            Statement::LetSelect { binder, .. } if binder == "readings_list"
        ));
    }

    #[test]
    fn run_during_record_respects_predicates() {
        let manifest = load_site("probe");
        let mut r = start_recorder(&manifest);
        // A helper that echoes the probed value back.
        r.feed(&DemoEvent::Navigate { url: "https://probe.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording check".into() }).unwrap();
        r.feed(&DemoEvent::KeyInput { path: ElementPath(vec![0, 3, 0]), value: "99.1".into() })
            .unwrap();
        r.feed(&DemoEvent::Utterance { text: "this is a reading".into() }).unwrap();
        r.feed(&DemoEvent::Click { path: ElementPath(vec![0, 3, 1]) }).unwrap();
        r.feed(&DemoEvent::NativeSelect { paths: vec![ElementPath(vec![0, 1])] }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "return this value".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "stop recording".into() }).unwrap();
        // One reading passes the threshold, one does not.
        r.feed(&DemoEvent::NativeSelect {
            paths: vec![ElementPath(vec![0, 1, 0]), ElementPath(vec![0, 1, 1])],
        })
        .unwrap();
        let effects = r
            .feed(&DemoEvent::Utterance {
                text: "run check with this if this is greater than 98.6".into(),
            })
            .unwrap();
        let notified: Vec<String> = effects
            .iter()
            .filter_map(|e| match e {
                Effect::Notify(n) => Some(n.rows[0].text.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(notified, vec!["99.1"]);
        let output = r.finish().unwrap();
        assert_typechecks(&output);
    }

    #[test]
    fn second_return_in_function_is_rejected() {
        let manifest = load_site("stock");
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://news.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording peek".into() }).unwrap();
        r.feed(&DemoEvent::NativeSelect { paths: vec![ElementPath(vec![0, 2, 0])] }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "return this value".into() }).unwrap();
        let err = r.feed(&DemoEvent::Utterance { text: "return this value".into() }).unwrap_err();
        assert!(matches!(err, RecorderError::MultipleReturns { .. }));
    }

    #[test]
    fn timer_commands_emit_but_do_not_run() {
        let (output, effects) = {
            let manifest = load_site("stock");
            let mut r = start_recorder(&manifest);
            let mut all = Vec::new();
            for event in [
                DemoEvent::Navigate { url: "https://finance.test/".into() },
                DemoEvent::Utterance { text: "start recording check_in".into() },
                DemoEvent::Click { path: ElementPath(vec![0, 1, 1]) },
                DemoEvent::Utterance { text: "stop recording".into() },
                DemoEvent::Utterance { text: "run check_in at 10am every day".into() },
            ] {
                all.extend(r.feed(&event).unwrap());
            }
            (r.finish().unwrap(), all)
        };
        assert!(effects.iter().any(|e| matches!(e, Effect::TimerScheduled { .. })));
        assert!(output.notifies.is_empty());
        let timer_stmt = output.program.items.iter().any(|s| matches!(
            s,
            Statement::Stream(Stream { timer: Some(_), sink: Sink::Call(_), .. })
        ));
        assert!(timer_stmt);
    }

    #[test]
    fn stack_discipline_restores_outer_state() {
        let manifest = load_site("grocery");
        let mut r = start_recorder(&manifest);
        r.feed(&DemoEvent::Navigate { url: "https://recipes.test/".into() }).unwrap();
        r.feed(&DemoEvent::Utterance { text: "start recording outer".into() }).unwrap();
        r.feed(&DemoEvent::KeyInput { path: ElementPath(vec![0, 1, 0]), value: "x".into() })
            .unwrap();
        let outer_stmts = r.scope_ref().statements.clone();
        let outer_url = r.live_session().document().unwrap().url.clone();
        r.feed(&DemoEvent::Utterance { text: "start recording inner".into() }).unwrap();
        r.feed(&DemoEvent::Navigate { url: "https://store.test/".into() }).unwrap();
        r.feed(&DemoEvent::KeyInput { path: ElementPath(vec![0, 1, 0]), value: "y".into() })
            .unwrap();
        r.feed(&DemoEvent::Utterance { text: "stop recording".into() }).unwrap();
        // Outer statements unchanged except for the appended declaration;
        // the live page is back where the outer recording paused.
        let after = r.scope_ref().statements.clone();
        assert_eq!(&after[..outer_stmts.len()], &outer_stmts[..]);
        assert_eq!(after.len(), outer_stmts.len() + 1);
        assert!(matches!(after.last(), Some(Statement::FunctionDecl(f)) if f.name == "inner"));
        assert_eq!(r.live_session().document().unwrap().url, outer_url);
        // The outer input still holds the demonstrated value.
        let doc = r.live_session().document().unwrap();
        let input = doc.resolve(&ElementPath(vec![0, 1, 0])).unwrap();
        assert_eq!(input.input_value.as_deref(), Some("x"));
    }
}
