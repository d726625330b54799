//! Abstract syntax for skill programs.

use std::fmt;

/// A program: an ordered list of top-level statements. Function
/// declarations may appear at the top level or nested inside other
/// declarations; all declared names share one global namespace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub items: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    FunctionDecl(FunctionDecl),
    WebOp(WebOp),
    /// `let <binder> := @select(selector="…");`
    LetSelect { binder: String, selector: String },
    /// `let <binder> := aggregate <op> number of <source>;`
    LetAggregate { binder: String, op: AggregateOp, source: String },
    Stream(Stream),
    Call(CallStatement),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDecl {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Statement>,
}

/// A function parameter. The only value type is `String`; the implicit
/// parameter created by cross-function paste is literally named `param`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WebOp {
    /// `@load(url="…");`
    Load { url: String },
    /// `@click(selector="…");`
    Click { selector: String },
    /// `@set_input(selector="…", value=<expr>);`
    SetInput { selector: String, value: ValueExpr },
}

/// A stream statement: optional binder, optional daily timer stage,
/// optional source variable with an optional predicate, and a sink.
/// `this => notify;` and `timer(10:00) => check();` are both streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub binder: Option<String>,
    pub timer: Option<TimeOfDay>,
    pub source: Option<String>,
    pub predicate: Option<Predicate>,
    pub sink: Sink,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sink {
    Notify,
    Call(Call),
}

/// A direct call statement, optionally binding the callee's result:
/// `price();` or `let this := price();`
#[derive(Debug, Clone, PartialEq)]
pub struct CallStatement {
    pub binder: Option<String>,
    pub call: Call,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    pub callee: String,
    pub args: Vec<Arg>,
}

/// A call argument. `name` is `None` for positional arguments, which are
/// matched to parameters by position; the canonical printer renders a
/// positional argument bare, as in `price(this.text)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arg {
    pub name: Option<String>,
    pub value: ValueExpr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueExpr {
    /// A quoted string constant.
    Const(String),
    /// A bare identifier referencing a function parameter.
    ParamRef(String),
    /// `<var>.text` or `<var>.number`. Inside a stream sink, `this`
    /// refers to the current iteration row.
    FieldRef { var: String, field: Field },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Text,
    Number,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Text => write!(f, "text"),
            Field::Number => write!(f, "number"),
        }
    }
}

/// A single comparison against a constant, applied to a field of each
/// row of the stream source. Ordering operators require the `number`
/// field and a numeric constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub field: Field,
    pub op: CompareOp,
    pub constant: Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Ne,
    Gt,
    Lt,
    Ge,
    Le,
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
            CompareOp::Gt => ">",
            CompareOp::Lt => "<",
            CompareOp::Ge => ">=",
            CompareOp::Le => "<=",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constant {
    Text(String),
    Number(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AggregateOp {
    Sum,
    Count,
    Avg,
    Max,
    Min,
}

impl AggregateOp {
    pub const ALL: [AggregateOp; 5] = [
        AggregateOp::Sum,
        AggregateOp::Count,
        AggregateOp::Avg,
        AggregateOp::Max,
        AggregateOp::Min,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregateOp::Sum => "sum",
            AggregateOp::Count => "count",
            AggregateOp::Avg => "avg",
            AggregateOp::Max => "max",
            AggregateOp::Min => "min",
        }
    }

    pub fn from_name(name: &str) -> Option<AggregateOp> {
        match name {
            "sum" => Some(AggregateOp::Sum),
            "count" => Some(AggregateOp::Count),
            "avg" | "average" => Some(AggregateOp::Avg),
            "max" | "maximum" => Some(AggregateOp::Max),
            "min" | "minimum" => Some(AggregateOp::Min),
            _ => None,
        }
    }
}

impl fmt::Display for AggregateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// A daily timer's time, 24-hour clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimeOfDay {
    pub hour: u8,
    pub minute: u8,
}

impl TimeOfDay {
    pub fn new(hour: u8, minute: u8) -> Option<TimeOfDay> {
        if hour <= 23 && minute <= 59 {
            Some(TimeOfDay { hour, minute })
        } else {
            None
        }
    }

    pub fn minutes_from_midnight(self) -> u64 {
        self.hour as u64 * 60 + self.minute as u64
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.hour, self.minute)
    }
}

impl FunctionDecl {
    /// Whether any statement in the body (not counting nested
    /// declarations) is a notify stream, i.e. the function returns a
    /// result.
    pub fn returns_result(&self) -> bool {
        self.body.iter().any(|s| matches!(s, Statement::Stream(st) if st.sink == Sink::Notify))
    }
}
