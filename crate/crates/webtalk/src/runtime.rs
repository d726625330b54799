//! Compile-and-execute: programs run against the page model with a fresh
//! session per function call, stream iteration with filters, aggregation,
//! and virtual-clock timers.
//!
//! Iterated function-call sinks open one child session per row; child
//! invocations are independent, so with the `parallel` feature they run
//! on a thread pool and results are joined back in iteration order. The
//! observable behavior is identical to the sequential path.

use std::collections::BTreeMap;
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use serde::Serialize;
use thiserror::Error;

use crate::lang::{
    signature_of, typecheck, AggregateOp, Call, CompareOp, Constant, Field, FunctionDecl,
    Predicate, Program, Sink, Statement, Stream, TimeOfDay, TypeError, ValueExpr,
};
use crate::page::{self, ClickOutcome, Document, PageError, Session, SiteManifest};
use crate::selector::{self, SelectorError};
use crate::table::{format_decimal, ElementTable, Row};

pub type FunctionMap = BTreeMap<String, FunctionDecl>;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("program does not typecheck: {}", join_errors(.0))]
    Type(Vec<TypeError>),
    #[error(transparent)]
    Page(#[from] PageError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error("selector `{selector}` matched nothing")]
    TargetNotFound { selector: String },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("invocation of `{func}` needs values for parameters {missing:?}")]
    MissingArguments { func: String, missing: Vec<String> },
    #[error("invocation of `{func}` got unexpected arguments {extra:?}")]
    ExtraArguments { func: String, extra: Vec<String> },
    #[error("variable `{0}` is not bound at execution time")]
    UnboundVariable(String),
    #[error("`{var}` holds {got} rows where a single value is needed")]
    MultiRowValue { var: String, got: usize },
    #[error("aggregate {0} over a table with no numeric rows")]
    EmptyAggregate(AggregateOp),
    #[error("the program schedules no timers")]
    NoTimers,
}

fn join_errors(errors: &[TypeError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

/// A compiled program: every declared function (including nested ones)
/// resolved into one table, plus the top-level statement sequence.
#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub functions: FunctionMap,
    pub entry: Vec<Statement>,
}

/// Typechecks `program` against `repo` and lowers it into a plan.
pub fn compile(program: &Program, repo: &FunctionMap) -> Result<ExecutionPlan, RuntimeError> {
    let repo_sigs = repo.iter().map(|(n, d)| (n.clone(), signature_of(d))).collect();
    let errors = typecheck(program, &repo_sigs);
    if !errors.is_empty() {
        return Err(RuntimeError::Type(errors));
    }
    let mut functions = repo.clone();
    let mut entry = Vec::new();
    collect_items(&program.items, &mut functions, &mut entry, true);
    Ok(ExecutionPlan { functions, entry })
}

fn collect_items(
    items: &[Statement],
    functions: &mut FunctionMap,
    entry: &mut Vec<Statement>,
    top: bool,
) {
    for item in items {
        match item {
            Statement::FunctionDecl(decl) => {
                collect_items(&decl.body, functions, &mut Vec::new(), false);
                functions.insert(decl.name.clone(), decl.clone());
            }
            other if top => entry.push(other.clone()),
            _ => {}
        }
    }
}

/// Execution tuning. `parallel` only has effect when the crate is built
/// with the `parallel` feature; the sequential path is always available
/// and produces identical output.
#[derive(Debug, Clone, Copy)]
pub struct ExecOptions {
    pub parallel: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions { parallel: cfg!(feature = "parallel") }
    }
}

/// A result surfaced to the user, serialized as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NotifyRecord {
    pub function: String,
    pub rows: Vec<Row>,
    pub virtual_time: u64,
}

/// A daily timer discovered during execution, with enough captured
/// context to re-establish its page state at every firing.
#[derive(Debug, Clone)]
pub struct ScheduledTimer {
    pub time: TimeOfDay,
    pipeline: Stream,
    prefix: Vec<Statement>,
    args: BTreeMap<String, String>,
    scope: Option<String>,
}

#[derive(Debug)]
pub struct Invocation {
    pub result: Option<ElementTable>,
    pub notifies: Vec<NotifyRecord>,
    pub timers: Vec<ScheduledTimer>,
    pub final_document: Option<Document>,
    /// Variable bindings left behind by the executed statements.
    pub bindings: BTreeMap<String, ElementTable>,
}

struct Exec<'a> {
    plan: &'a ExecutionPlan,
    manifest: &'a Arc<SiteManifest>,
    options: ExecOptions,
    day: u32,
    virtual_time: u64,
}

struct Frame {
    session: Session,
    vars: BTreeMap<String, ElementTable>,
    args: BTreeMap<String, String>,
    scope: Option<String>,
    /// Results reaching this frame surface to the user.
    user_facing: bool,
    result: Option<ElementTable>,
    notifies: Vec<NotifyRecord>,
    timers: Vec<ScheduledTimer>,
}

impl Frame {
    fn new(session: Session, args: BTreeMap<String, String>, scope: Option<String>, user_facing: bool) -> Frame {
        Frame {
            session,
            vars: BTreeMap::new(),
            args,
            scope,
            user_facing,
            result: None,
            notifies: Vec::new(),
            timers: Vec::new(),
        }
    }
}

/// Invokes a function on a fresh session with named argument values.
/// The function's notify (if reached with a non-empty table) becomes the
/// result and one notify record.
pub fn invoke(
    plan: &ExecutionPlan,
    func: &str,
    args: &BTreeMap<String, String>,
    manifest: &Arc<SiteManifest>,
) -> Result<Invocation, RuntimeError> {
    invoke_with(plan, func, args, manifest, &ExecOptions::default())
}

pub fn invoke_with(
    plan: &ExecutionPlan,
    func: &str,
    args: &BTreeMap<String, String>,
    manifest: &Arc<SiteManifest>,
    options: &ExecOptions,
) -> Result<Invocation, RuntimeError> {
    let exec = Exec { plan, manifest, options: *options, day: 0, virtual_time: 0 };
    exec.invoke_function(func, args.clone(), true)
}

/// Executes the top-level statements of a plan on one main session.
pub fn execute_entry(
    plan: &ExecutionPlan,
    manifest: &Arc<SiteManifest>,
    options: &ExecOptions,
) -> Result<Invocation, RuntimeError> {
    let exec = Exec { plan, manifest, options: *options, day: 0, virtual_time: 0 };
    let session = page::open_session(manifest);
    let mut frame = Frame::new(session, BTreeMap::new(), None, true);
    exec.run_body(&plan.entry, &mut frame)?;
    Ok(Invocation {
        result: frame.result,
        notifies: frame.notifies,
        timers: frame.timers,
        final_document: frame.session.current,
        bindings: frame.vars,
    })
}

impl Exec<'_> {
    fn child(&self, day: u32) -> Exec<'_> {
        Exec {
            plan: self.plan,
            manifest: self.manifest,
            options: self.options,
            day,
            virtual_time: self.virtual_time,
        }
    }

    fn invoke_function(
        &self,
        func: &str,
        args: BTreeMap<String, String>,
        user_facing: bool,
    ) -> Result<Invocation, RuntimeError> {
        let decl = self
            .plan
            .functions
            .get(func)
            .ok_or_else(|| RuntimeError::UnknownFunction(func.to_string()))?;
        let wanted: Vec<&String> = decl.params.iter().map(|p| &p.name).collect();
        let missing: Vec<String> =
            wanted.iter().filter(|p| !args.contains_key(**p)).map(|p| (*p).clone()).collect();
        if !missing.is_empty() {
            return Err(RuntimeError::MissingArguments { func: func.to_string(), missing });
        }
        let extra: Vec<String> =
            args.keys().filter(|k| !wanted.contains(k)).cloned().collect();
        if !extra.is_empty() {
            return Err(RuntimeError::ExtraArguments { func: func.to_string(), extra });
        }
        let session = page::open_session_on_day(self.manifest, self.day);
        let mut frame = Frame::new(session, args, Some(func.to_string()), false);
        self.run_body(&decl.body, &mut frame)?;
        let mut notifies = Vec::new();
        if user_facing {
            if let Some(result) = &frame.result {
                notifies.push(NotifyRecord {
                    function: func.to_string(),
                    rows: result.rows.clone(),
                    virtual_time: self.virtual_time,
                });
            }
            notifies.extend(frame.notifies);
        }
        Ok(Invocation {
            result: frame.result,
            notifies,
            timers: frame.timers,
            final_document: frame.session.current,
            bindings: frame.vars,
        })
    }

    fn run_body(&self, statements: &[Statement], frame: &mut Frame) -> Result<(), RuntimeError> {
        for (index, stmt) in statements.iter().enumerate() {
            self.run_statement(stmt, frame, statements, index)?;
        }
        Ok(())
    }

    fn run_statement(
        &self,
        stmt: &Statement,
        frame: &mut Frame,
        body: &[Statement],
        index: usize,
    ) -> Result<(), RuntimeError> {
        match stmt {
            Statement::FunctionDecl(_) => {}
            Statement::WebOp(op) => self.run_webop(op, frame)?,
            Statement::LetSelect { binder, selector } => {
                let sel = selector::parse_selector(selector)?;
                let doc = frame.session.document()?;
                let paths = selector::match_selector(doc, &sel);
                let table = frame.session.read_elements(&paths)?;
                frame.vars.insert(binder.clone(), table);
            }
            Statement::LetAggregate { binder, op, source } => {
                let table = self.resolve_var(frame, source)?.clone();
                let value = aggregate(*op, &table)?;
                frame.vars.insert(binder.clone(), ElementTable::scalar(Row::from_number(value)));
            }
            Statement::Stream(stream) => {
                if let Some(time) = stream.timer {
                    let mut pipeline = stream.clone();
                    pipeline.timer = None;
                    frame.timers.push(ScheduledTimer {
                        time,
                        pipeline,
                        prefix: body[..index].to_vec(),
                        args: frame.args.clone(),
                        scope: frame.scope.clone(),
                    });
                    return Ok(());
                }
                self.run_stream(stream, frame)?;
            }
            Statement::Call(call_stmt) => {
                let args = self.call_args(&call_stmt.call, frame, None)?;
                let child = self.child(frame.session.day).invoke_function(
                    &call_stmt.call.callee,
                    args,
                    false,
                )?;
                frame.timers.extend(child.timers);
                let result = child.result.unwrap_or_else(ElementTable::empty);
                match &call_stmt.binder {
                    Some(binder) => {
                        frame.vars.insert(binder.clone(), result);
                    }
                    None => {
                        if frame.user_facing && !result.is_empty() {
                            frame.notifies.push(NotifyRecord {
                                function: call_stmt.call.callee.clone(),
                                rows: result.rows,
                                virtual_time: self.virtual_time,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn run_webop(&self, op: &crate::lang::WebOp, frame: &mut Frame) -> Result<(), RuntimeError> {
        match op {
            crate::lang::WebOp::Load { url } => {
                frame.session.navigate(url)?;
            }
            crate::lang::WebOp::Click { selector } => {
                let sel = selector::parse_selector(selector)?;
                let paths = selector::match_selector(frame.session.document()?, &sel);
                if paths.is_empty() {
                    return Err(RuntimeError::TargetNotFound { selector: selector.clone() });
                }
                for path in paths {
                    // A navigation leaves the page; later matches are moot.
                    if let ClickOutcome::Navigated { .. } = frame.session.click(&path)? {
                        break;
                    }
                }
            }
            crate::lang::WebOp::SetInput { selector, value } => {
                let text = self.eval_value(value, frame, None)?;
                let sel = selector::parse_selector(selector)?;
                let paths = selector::match_selector(frame.session.document()?, &sel);
                if paths.is_empty() {
                    return Err(RuntimeError::TargetNotFound { selector: selector.clone() });
                }
                for path in paths {
                    frame.session.set_input(&path, &text)?;
                }
            }
        }
        Ok(())
    }

    fn run_stream(&self, stream: &Stream, frame: &mut Frame) -> Result<(), RuntimeError> {
        // A sourceless pipeline (a fired `timer(..) => f()`) is a single
        // invocation of its sink.
        let Some(source_name) = stream.source.as_deref() else {
            let Sink::Call(call) = &stream.sink else {
                unreachable!("the parser requires timers to drive calls");
            };
            let args = self.call_args(call, frame, None)?;
            let child = self.child(frame.session.day).invoke_function(&call.callee, args, false)?;
            frame.timers.extend(child.timers);
            if let Some(result) = child.result {
                if frame.user_facing && !result.is_empty() {
                    frame.notifies.push(NotifyRecord {
                        function: call.callee.clone(),
                        rows: result.rows,
                        virtual_time: self.virtual_time,
                    });
                }
            }
            return Ok(());
        };
        let source = self.resolve_var(frame, source_name)?.clone();
        let passing: Vec<Row> = source
            .rows
            .into_iter()
            .filter(|row| stream.predicate.as_ref().map_or(true, |p| predicate_passes(p, row)))
            .collect();
        match &stream.sink {
            Sink::Notify => {
                let table = ElementTable::new(passing);
                if !table.is_empty() {
                    if frame.user_facing {
                        frame.notifies.push(NotifyRecord {
                            function: frame.scope.clone().unwrap_or_else(|| "<top>".into()),
                            rows: table.rows.clone(),
                            virtual_time: self.virtual_time,
                        });
                    }
                    frame.result = Some(table);
                }
            }
            Sink::Call(call) => {
                let outcome = self.iterate_call(call, &passing, frame, source_name)?;
                frame.timers.extend(outcome.timers);
                match &stream.binder {
                    Some(binder) => {
                        frame.vars.insert(binder.clone(), outcome.table);
                    }
                    None => {
                        if frame.user_facing && !outcome.table.is_empty() {
                            frame.notifies.push(NotifyRecord {
                                function: call.callee.clone(),
                                rows: outcome.table.rows,
                                virtual_time: self.virtual_time,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Invokes the sink callee once per row, each in a new child session;
    /// results concatenate in iteration order. A failing child becomes an
    /// error row and iteration continues.
    fn iterate_call(
        &self,
        call: &Call,
        rows: &[Row],
        frame: &Frame,
        source_name: &str,
    ) -> Result<IterationOutcome, RuntimeError> {
        let day = frame.session.day;
        let mut prepared = Vec::with_capacity(rows.len());
        for row in rows {
            prepared.push(self.call_args(call, frame, Some((source_name, row)))?);
        }
        let run_one = |args: &BTreeMap<String, String>| -> Result<Invocation, RuntimeError> {
            self.child(day).invoke_function(&call.callee, args.clone(), false)
        };
        let results: Vec<Result<Invocation, RuntimeError>> =
            map_ordered(&prepared, self.options.parallel, run_one);
        let mut table = ElementTable::empty();
        let mut timers = Vec::new();
        for result in results {
            match result {
                Ok(invocation) => {
                    timers.extend(invocation.timers);
                    if let Some(rows) = invocation.result {
                        table.extend(rows);
                    }
                }
                Err(err) => {
                    table.rows.push(Row { text: err.to_string(), number: None });
                }
            }
        }
        Ok(IterationOutcome { table, timers })
    }

    fn call_args(
        &self,
        call: &Call,
        frame: &Frame,
        row_ctx: Option<(&str, &Row)>,
    ) -> Result<BTreeMap<String, String>, RuntimeError> {
        let decl = self
            .plan
            .functions
            .get(&call.callee)
            .ok_or_else(|| RuntimeError::UnknownFunction(call.callee.clone()))?;
        let mut args = BTreeMap::new();
        for (i, arg) in call.args.iter().enumerate() {
            let name = match &arg.name {
                Some(name) => name.clone(),
                None => decl
                    .params
                    .get(i)
                    .map(|p| p.name.clone())
                    .ok_or_else(|| RuntimeError::ExtraArguments {
                        func: call.callee.clone(),
                        extra: vec![format!("#{i}")],
                    })?,
            };
            let value = self.eval_value(&arg.value, frame, row_ctx)?;
            args.insert(name, value);
        }
        Ok(args)
    }

    fn eval_value(
        &self,
        expr: &ValueExpr,
        frame: &Frame,
        row_ctx: Option<(&str, &Row)>,
    ) -> Result<String, RuntimeError> {
        match expr {
            ValueExpr::Const(s) => Ok(s.clone()),
            ValueExpr::ParamRef(name) => frame
                .args
                .get(name)
                .cloned()
                .ok_or_else(|| RuntimeError::UnboundVariable(name.clone())),
            ValueExpr::FieldRef { var, field } => {
                if let Some((source, row)) = row_ctx {
                    if var == "this" || var == source {
                        return Ok(field_text(row, *field));
                    }
                }
                let table = self.resolve_var(frame, var)?;
                if table.len() != 1 {
                    return Err(RuntimeError::MultiRowValue { var: var.clone(), got: table.len() });
                }
                Ok(field_text(&table.rows[0], *field))
            }
        }
    }

    fn resolve_var<'f>(&self, frame: &'f Frame, name: &str) -> Result<&'f ElementTable, RuntimeError> {
        frame
            .vars
            .get(name)
            .ok_or_else(|| RuntimeError::UnboundVariable(name.to_string()))
    }
}

struct IterationOutcome {
    table: ElementTable,
    timers: Vec<ScheduledTimer>,
}

fn field_text(row: &Row, field: Field) -> String {
    match field {
        Field::Text => row.text.clone(),
        Field::Number => row.number.map(format_decimal).unwrap_or_default(),
    }
}

/// Ordered map over prepared inputs; parallel when enabled, and always
/// yielding results in input order.
fn map_ordered<I: Sync, T: Send>(
    items: &[I],
    parallel: bool,
    f: impl Fn(&I) -> T + Sync + Send,
) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items.par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Whether `row` satisfies the predicate. Numeric comparisons against a
/// row with no number are false.
pub fn predicate_passes(pred: &Predicate, row: &Row) -> bool {
    match (&pred.constant, pred.field) {
        (Constant::Number(c), Field::Number) => match row.number {
            Some(n) => compare(pred.op, n.partial_cmp(c)),
            None => false,
        },
        (Constant::Text(c), Field::Text) => compare(pred.op, row.text.as_str().partial_cmp(c.as_str())),
        // Parser rejects the remaining combinations.
        _ => false,
    }
}

fn compare(op: CompareOp, ordering: Option<std::cmp::Ordering>) -> bool {
    use std::cmp::Ordering::*;
    match (op, ordering) {
        (CompareOp::Eq, Some(Equal)) => true,
        (CompareOp::Ne, Some(Less | Greater)) => true,
        (CompareOp::Gt, Some(Greater)) => true,
        (CompareOp::Lt, Some(Less)) => true,
        (CompareOp::Ge, Some(Greater | Equal)) => true,
        (CompareOp::Le, Some(Less | Equal)) => true,
        _ => false,
    }
}

/// Folds the named aggregate over the table. `count` counts every row;
/// the numeric ops fold over rows that carry a number and require at
/// least one.
pub fn aggregate(op: AggregateOp, table: &ElementTable) -> Result<f64, RuntimeError> {
    if op == AggregateOp::Count {
        return Ok(table.len() as f64);
    }
    let numbers: Vec<f64> = table.rows.iter().filter_map(|r| r.number).collect();
    if numbers.is_empty() {
        return Err(RuntimeError::EmptyAggregate(op));
    }
    let sum: f64 = numbers.iter().sum();
    Ok(match op {
        AggregateOp::Sum => sum,
        AggregateOp::Avg => sum / numbers.len() as f64,
        AggregateOp::Max => numbers.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        AggregateOp::Min => numbers.iter().cloned().fold(f64::INFINITY, f64::min),
        AggregateOp::Count => unreachable!(),
    })
}

// ---------------------------------------------------------------------------
// Virtual clock and timers

pub const MINUTES_PER_DAY: u64 = 24 * 60;

/// Deterministic simulated time, in minutes since day-0 midnight. Time
/// only advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualClock {
    now_minutes: u64,
}

impl VirtualClock {
    pub fn starting_at(day: u32, time: TimeOfDay) -> VirtualClock {
        VirtualClock { now_minutes: day as u64 * MINUTES_PER_DAY + time.minutes_from_midnight() }
    }

    pub fn now_minutes(&self) -> u64 {
        self.now_minutes
    }

    pub fn day(&self) -> u32 {
        (self.now_minutes / MINUTES_PER_DAY) as u32
    }

    fn advance_to(&mut self, instant: u64) {
        debug_assert!(instant >= self.now_minutes);
        self.now_minutes = instant;
    }
}

/// Runs the plan's entry once to discover timers, then advances the
/// clock by `until_minutes`, firing each daily timer at every crossed
/// occurrence of its time of day. Notifies are returned in chronological
/// order, stamped with the virtual instant of their firing.
pub fn run_timers(
    plan: &ExecutionPlan,
    manifest: &Arc<SiteManifest>,
    clock: &mut VirtualClock,
    until_minutes: u64,
) -> Result<Vec<NotifyRecord>, RuntimeError> {
    let entry = execute_entry(plan, manifest, &ExecOptions::default())?;
    if entry.timers.is_empty() {
        return Err(RuntimeError::NoTimers);
    }
    fire_timers(plan, &entry.timers, manifest, clock, until_minutes, &ExecOptions::default())
}

/// Drives already-collected timers over a span of virtual time.
pub fn fire_timers(
    plan: &ExecutionPlan,
    timers: &[ScheduledTimer],
    manifest: &Arc<SiteManifest>,
    clock: &mut VirtualClock,
    until_minutes: u64,
    options: &ExecOptions,
) -> Result<Vec<NotifyRecord>, RuntimeError> {
    let start = clock.now_minutes();
    let end = start + until_minutes;
    let mut firings: Vec<(u64, usize)> = Vec::new();
    for (index, timer) in timers.iter().enumerate() {
        let tod = timer.time.minutes_from_midnight();
        let mut day = start / MINUTES_PER_DAY;
        loop {
            let instant = day * MINUTES_PER_DAY + tod;
            if instant > end {
                break;
            }
            if instant > start {
                firings.push((instant, index));
            }
            day += 1;
        }
    }
    firings.sort();

    let mut notifies = Vec::new();
    for (instant, index) in firings {
        clock.advance_to(instant);
        let timer = &timers[index];
        let day = (instant / MINUTES_PER_DAY) as u32;
        let exec = Exec { plan, manifest, options: *options, day, virtual_time: instant };
        let session = page::open_session_on_day(manifest, day);
        // Replay the captured context silently, then run the pipeline
        // with its results surfacing.
        let mut frame = Frame::new(session, timer.args.clone(), timer.scope.clone(), false);
        exec.run_body(&timer.prefix, &mut frame)?;
        frame.user_facing = true;
        frame.notifies.clear();
        exec.run_stream(&timer.pipeline, &mut frame)?;
        notifies.extend(frame.notifies);
    }
    clock.advance_to(end);
    Ok(notifies)
}
