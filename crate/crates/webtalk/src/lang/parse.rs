//! Lexer and recursive-descent parser for the concrete grammar.

use thiserror::Error;

use super::ast::*;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("{line}:{col}: {message}")]
    Syntax { line: u32, col: u32, message: String },
    #[error("{line}:{col}: a timer and a predicate cannot be combined in one statement")]
    CompoundUnsupported { line: u32, col: u32 },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Number(String),
    At,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Dot,
    Colon,
    ColonEq,
    Arrow,
    Eq,
    EqEq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::Number(n) => format!("`{n}`"),
            Tok::At => "`@`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Colon => "`:`".into(),
            Tok::ColonEq => "`:=`".into(),
            Tok::Arrow => "`=>`".into(),
            Tok::Eq => "`=`".into(),
            Tok::EqEq => "`==`".into(),
            Tok::Ne => "`!=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Ge => "`>=`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: u32,
    col: u32,
}

fn lex(source: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1u32;
    let mut col = 1u32;
    let mut chars = source.chars().peekable();
    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else if c.is_some() {
                col += 1;
            }
            c
        }};
    }
    loop {
        let (tline, tcol) = (line, col);
        let Some(&c) = chars.peek() else { break };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        let tok = match c {
            '@' => {
                bump!();
                Tok::At
            }
            '(' => {
                bump!();
                Tok::LParen
            }
            ')' => {
                bump!();
                Tok::RParen
            }
            '{' => {
                bump!();
                Tok::LBrace
            }
            '}' => {
                bump!();
                Tok::RBrace
            }
            ',' => {
                bump!();
                Tok::Comma
            }
            ';' => {
                bump!();
                Tok::Semi
            }
            '.' => {
                bump!();
                Tok::Dot
            }
            ':' => {
                bump!();
                if chars.peek() == Some(&'=') {
                    bump!();
                    Tok::ColonEq
                } else {
                    Tok::Colon
                }
            }
            '=' => {
                bump!();
                match chars.peek() {
                    Some('>') => {
                        bump!();
                        Tok::Arrow
                    }
                    Some('=') => {
                        bump!();
                        Tok::EqEq
                    }
                    _ => Tok::Eq,
                }
            }
            '!' => {
                bump!();
                if chars.peek() == Some(&'=') {
                    bump!();
                    Tok::Ne
                } else {
                    return Err(ParseError::Syntax {
                        line: tline,
                        col: tcol,
                        message: "unexpected `!`".into(),
                    });
                }
            }
            '<' => {
                bump!();
                if chars.peek() == Some(&'=') {
                    bump!();
                    Tok::Le
                } else {
                    Tok::Lt
                }
            }
            '>' => {
                bump!();
                if chars.peek() == Some(&'=') {
                    bump!();
                    Tok::Ge
                } else {
                    Tok::Gt
                }
            }
            '"' => {
                bump!();
                let mut s = String::new();
                loop {
                    match bump!() {
                        Some('"') => break,
                        Some('\\') => match bump!() {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            other => {
                                return Err(ParseError::Syntax {
                                    line,
                                    col,
                                    message: format!("bad escape `\\{}`", other.unwrap_or(' ')),
                                })
                            }
                        },
                        Some(c) => s.push(c),
                        None => {
                            return Err(ParseError::Syntax {
                                line: tline,
                                col: tcol,
                                message: "unterminated string literal".into(),
                            })
                        }
                    }
                }
                Tok::Str(s)
            }
            c if c.is_ascii_digit() || c == '-' => {
                let mut raw = String::new();
                if c == '-' {
                    raw.push(c);
                    bump!();
                    if !matches!(chars.peek(), Some(d) if d.is_ascii_digit()) {
                        return Err(ParseError::Syntax {
                            line: tline,
                            col: tcol,
                            message: "expected digits after `-`".into(),
                        });
                    }
                }
                while matches!(chars.peek(), Some(d) if d.is_ascii_digit()) {
                    raw.push(bump!().unwrap());
                }
                // Fractional part, but not the `10:00` colon form.
                if chars.peek() == Some(&'.') {
                    raw.push(bump!().unwrap());
                    while matches!(chars.peek(), Some(d) if d.is_ascii_digit()) {
                        raw.push(bump!().unwrap());
                    }
                }
                Tok::Number(raw)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut ident = String::new();
                while matches!(chars.peek(), Some(&d) if d.is_ascii_alphanumeric() || d == '_') {
                    ident.push(bump!().unwrap());
                }
                Tok::Ident(ident)
            }
            other => {
                return Err(ParseError::Syntax {
                    line: tline,
                    col: tcol,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push(Spanned { tok, line: tline, col: tcol });
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|s| &s.tok)
    }

    fn here(&self) -> (u32, u32) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1))
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError::Syntax { line, col, message: message.into() }
    }

    fn next(&mut self) -> Result<Tok, ParseError> {
        let tok = self
            .toks
            .get(self.pos)
            .map(|s| s.tok.clone())
            .ok_or_else(|| self.err("unexpected end of input"))?;
        self.pos += 1;
        Ok(tok)
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        let got = self.next()?;
        if got == want {
            Ok(())
        } else {
            self.pos -= 1;
            Err(self.err(format!("expected {}, found {}", want.describe(), got.describe())))
        }
    }

    fn expect_ident(&mut self) -> Result<String, ParseError> {
        match self.next()? {
            Tok::Ident(s) => Ok(s),
            other => {
                self.pos -= 1;
                Err(self.err(format!("expected identifier, found {}", other.describe())))
            }
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        let ident = self.expect_ident()?;
        if ident == kw {
            Ok(())
        } else {
            self.pos -= 1;
            Err(self.err(format!("expected `{kw}`, found `{ident}`")))
        }
    }

    fn expect_str(&mut self) -> Result<String, ParseError> {
        match self.next()? {
            Tok::Str(s) => Ok(s),
            other => {
                self.pos -= 1;
                Err(self.err(format!("expected string literal, found {}", other.describe())))
            }
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn parse_program(&mut self) -> Result<Program, ParseError> {
        let mut items = Vec::new();
        while self.peek().is_some() {
            items.push(self.parse_statement()?);
        }
        Ok(Program { items })
    }

    fn parse_statement(&mut self) -> Result<Statement, ParseError> {
        if self.at_keyword("function") {
            return Ok(Statement::FunctionDecl(self.parse_function()?));
        }
        let stmt = self.parse_simple_statement()?;
        self.expect(Tok::Semi)?;
        Ok(stmt)
    }

    fn parse_function(&mut self) -> Result<FunctionDecl, ParseError> {
        self.expect_keyword("function")?;
        let name = self.expect_ident()?;
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                let pname = self.expect_ident()?;
                self.expect(Tok::Colon)?;
                self.expect_keyword("String")?;
                params.push(Param { name: pname });
                if self.peek() == Some(&Tok::Comma) {
                    self.next()?;
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::LBrace)?;
        let mut body = Vec::new();
        while self.peek() != Some(&Tok::RBrace) {
            if self.peek().is_none() {
                return Err(self.err(format!("unclosed body of function `{name}`")));
            }
            body.push(self.parse_statement()?);
        }
        self.expect(Tok::RBrace)?;
        Ok(FunctionDecl { name, params, body })
    }

    /// A statement without its trailing `;`: web op, let, stream or call.
    fn parse_simple_statement(&mut self) -> Result<Statement, ParseError> {
        match self.peek() {
            Some(Tok::At) => {
                let op = self.parse_webop()?;
                Ok(Statement::WebOp(op))
            }
            Some(Tok::Ident(s)) if s == "let" => self.parse_let(),
            Some(Tok::Ident(s)) if s == "timer" => {
                let stream = self.parse_stream(None)?;
                Ok(Statement::Stream(stream))
            }
            Some(Tok::Ident(_)) => {
                // `f(...)` is a call; `x => …` / `x, pred => …` is a stream.
                if self.peek2() == Some(&Tok::LParen) {
                    let call = self.parse_call()?;
                    Ok(Statement::Call(CallStatement { binder: None, call }))
                } else {
                    let stream = self.parse_stream(None)?;
                    Ok(Statement::Stream(stream))
                }
            }
            Some(other) => Err(self.err(format!("expected a statement, found {}", other.describe()))),
            None => Err(self.err("expected a statement")),
        }
    }

    fn parse_webop(&mut self) -> Result<WebOp, ParseError> {
        self.expect(Tok::At)?;
        let name = self.expect_ident()?;
        self.expect(Tok::LParen)?;
        let op = match name.as_str() {
            "load" => {
                self.expect_keyword("url")?;
                self.expect(Tok::Eq)?;
                let url = self.expect_str()?;
                WebOp::Load { url }
            }
            "click" => {
                self.expect_keyword("selector")?;
                self.expect(Tok::Eq)?;
                let selector = self.expect_str()?;
                WebOp::Click { selector }
            }
            "set_input" => {
                self.expect_keyword("selector")?;
                self.expect(Tok::Eq)?;
                let selector = self.expect_str()?;
                self.expect(Tok::Comma)?;
                self.expect_keyword("value")?;
                self.expect(Tok::Eq)?;
                let value = self.parse_value_expr()?;
                WebOp::SetInput { selector, value }
            }
            other => return Err(self.err(format!("unknown web op `@{other}`"))),
        };
        self.expect(Tok::RParen)?;
        Ok(op)
    }

    fn parse_let(&mut self) -> Result<Statement, ParseError> {
        self.expect_keyword("let")?;
        let binder = self.expect_ident()?;
        self.expect(Tok::ColonEq)?;
        match self.peek() {
            Some(Tok::At) => {
                self.expect(Tok::At)?;
                self.expect_keyword("select")?;
                self.expect(Tok::LParen)?;
                self.expect_keyword("selector")?;
                self.expect(Tok::Eq)?;
                let selector = self.expect_str()?;
                self.expect(Tok::RParen)?;
                Ok(Statement::LetSelect { binder, selector })
            }
            Some(Tok::Ident(s)) if s == "aggregate" => {
                self.next()?;
                let op_name = self.expect_ident()?;
                let op = AggregateOp::from_name(&op_name)
                    .ok_or_else(|| self.err(format!("unknown aggregate op `{op_name}`")))?;
                self.expect_keyword("number")?;
                self.expect_keyword("of")?;
                let source = self.expect_ident()?;
                Ok(Statement::LetAggregate { binder, op, source })
            }
            Some(Tok::Ident(s)) if s == "timer" => {
                Err(self.err("a timer statement cannot be bound with `let`"))
            }
            Some(Tok::Ident(_)) => {
                if self.peek2() == Some(&Tok::LParen) {
                    let call = self.parse_call()?;
                    Ok(Statement::Call(CallStatement { binder: Some(binder), call }))
                } else {
                    let stream = self.parse_stream(Some(binder))?;
                    Ok(Statement::Stream(stream))
                }
            }
            _ => Err(self.err("expected `@select`, `aggregate`, a stream or a call after `:=`")),
        }
    }

    fn parse_stream(&mut self, binder: Option<String>) -> Result<Stream, ParseError> {
        let (start_line, start_col) = self.here();
        let mut timer = None;
        if self.at_keyword("timer") {
            self.next()?;
            self.expect(Tok::LParen)?;
            timer = Some(self.parse_time()?);
            self.expect(Tok::RParen)?;
            if self.peek() == Some(&Tok::Comma) {
                // `timer(10:00), number > 5 => …` — a predicate directly
                // on the timer stage.
                self.next()?;
                self.parse_predicate()?;
                return Err(ParseError::CompoundUnsupported { line: start_line, col: start_col });
            }
            self.expect(Tok::Arrow)?;
        }
        let mut source = None;
        let mut predicate = None;
        if let Some(Tok::Ident(name)) = self.peek() {
            if name != "notify" && self.peek2() != Some(&Tok::LParen) {
                source = Some(self.expect_ident()?);
                if self.peek() == Some(&Tok::Comma) {
                    self.next()?;
                    predicate = Some(self.parse_predicate()?);
                }
                self.expect(Tok::Arrow)?;
            }
        }
        if timer.is_some() && predicate.is_some() {
            return Err(ParseError::CompoundUnsupported { line: start_line, col: start_col });
        }
        if timer.is_none() && source.is_none() {
            return Err(self.err("a stream needs a timer or a source variable"));
        }
        let sink = if self.at_keyword("notify") {
            self.next()?;
            Sink::Notify
        } else {
            Sink::Call(self.parse_call()?)
        };
        if timer.is_some() && sink == Sink::Notify {
            return Err(self.err("a timer must drive a function call"));
        }
        Ok(Stream { binder, timer, source, predicate, sink })
    }

    fn parse_time(&mut self) -> Result<TimeOfDay, ParseError> {
        let hour_raw = match self.next()? {
            Tok::Number(raw) => raw,
            other => {
                self.pos -= 1;
                return Err(self.err(format!("expected a time, found {}", other.describe())));
            }
        };
        self.expect(Tok::Colon)?;
        let minute_raw = match self.next()? {
            Tok::Number(raw) => raw,
            other => {
                self.pos -= 1;
                return Err(self.err(format!("expected minutes, found {}", other.describe())));
            }
        };
        let hour: u8 = hour_raw.parse().map_err(|_| self.err("bad hour"))?;
        if minute_raw.len() != 2 {
            return Err(self.err("minutes must be two digits"));
        }
        let minute: u8 = minute_raw.parse().map_err(|_| self.err("bad minutes"))?;
        TimeOfDay::new(hour, minute).ok_or_else(|| self.err("time out of range"))
    }

    fn parse_predicate(&mut self) -> Result<Predicate, ParseError> {
        let field_name = self.expect_ident()?;
        let field = match field_name.as_str() {
            "text" => Field::Text,
            "number" => Field::Number,
            other => {
                self.pos -= 1;
                return Err(self.err(format!("predicates compare `text` or `number`, not `{other}`")));
            }
        };
        let op = match self.next()? {
            Tok::EqEq => CompareOp::Eq,
            Tok::Ne => CompareOp::Ne,
            Tok::Gt => CompareOp::Gt,
            Tok::Lt => CompareOp::Lt,
            Tok::Ge => CompareOp::Ge,
            Tok::Le => CompareOp::Le,
            other => {
                self.pos -= 1;
                return Err(self.err(format!("expected a comparison operator, found {}", other.describe())));
            }
        };
        let constant = match self.next()? {
            Tok::Number(raw) => Constant::Number(
                raw.parse::<f64>().map_err(|_| self.err("bad number literal"))?,
            ),
            Tok::Str(s) => Constant::Text(s),
            other => {
                self.pos -= 1;
                return Err(self.err(format!("expected a constant, found {}", other.describe())));
            }
        };
        let ordering = matches!(op, CompareOp::Gt | CompareOp::Lt | CompareOp::Ge | CompareOp::Le);
        match (&constant, field, ordering) {
            (Constant::Text(_), _, true) => {
                Err(self.err("ordering comparisons need a numeric constant"))
            }
            (Constant::Number(_), Field::Text, _) => {
                Err(self.err("the `text` field compares against string constants"))
            }
            (Constant::Text(_), Field::Number, false) => {
                Err(self.err("the `number` field compares against numeric constants"))
            }
            _ => Ok(Predicate { field, op, constant }),
        }
    }

    fn parse_call(&mut self) -> Result<Call, ParseError> {
        let callee = self.expect_ident()?;
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        let mut style: Option<bool> = None; // Some(true) = named
        if self.peek() != Some(&Tok::RParen) {
            loop {
                let named = matches!(self.peek(), Some(Tok::Ident(_)))
                    && self.peek2() == Some(&Tok::Eq);
                match style {
                    None => style = Some(named),
                    Some(prev) if prev != named => {
                        return Err(self.err("cannot mix named and positional arguments"))
                    }
                    _ => {}
                }
                let name = if named {
                    let n = self.expect_ident()?;
                    self.expect(Tok::Eq)?;
                    Some(n)
                } else {
                    None
                };
                let value = self.parse_value_expr()?;
                args.push(Arg { name, value });
                if self.peek() == Some(&Tok::Comma) {
                    self.next()?;
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        Ok(Call { callee, args })
    }

    fn parse_value_expr(&mut self) -> Result<ValueExpr, ParseError> {
        match self.next()? {
            Tok::Str(s) => Ok(ValueExpr::Const(s)),
            Tok::Ident(var) => {
                if self.peek() == Some(&Tok::Dot) {
                    self.next()?;
                    let field_name = self.expect_ident()?;
                    let field = match field_name.as_str() {
                        "text" => Field::Text,
                        "number" => Field::Number,
                        other => {
                            self.pos -= 1;
                            return Err(self.err(format!("unknown field `{other}`")));
                        }
                    };
                    Ok(ValueExpr::FieldRef { var, field })
                } else if var == "this" {
                    // `value=this` is sugar for the selection's text.
                    Ok(ValueExpr::FieldRef { var, field: Field::Text })
                } else {
                    Ok(ValueExpr::ParamRef(var))
                }
            }
            other => {
                self.pos -= 1;
                Err(self.err(format!("expected a value expression, found {}", other.describe())))
            }
        }
    }
}

/// Parses a complete program. Whitespace-insensitive; statements end with
/// `;`, function bodies use braces.
pub fn parse_program(source: &str) -> Result<Program, ParseError> {
    let toks = lex(source)?;
    let mut parser = Parser { toks, pos: 0 };
    parser.parse_program()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_program() {
        assert_eq!(parse_program("").unwrap(), Program::default());
        assert_eq!(parse_program("  \n ").unwrap(), Program::default());
    }

    #[test]
    fn parses_function_with_webops() {
        let src = r#"
            function stocks(param : String) {
              @load(url="https://finance.test/");
              @set_input(selector="input#search", value=param);
              @click(selector="button[type=submit]");
              let this := @select(selector="span#today-quote");
              this => notify;
            }
        "#;
        let p = parse_program(src).unwrap();
        assert_eq!(p.items.len(), 1);
        let Statement::FunctionDecl(f) = &p.items[0] else { panic!() };
        assert_eq!(f.name, "stocks");
        assert_eq!(f.params, vec![Param { name: "param".into() }]);
        assert_eq!(f.body.len(), 5);
        assert!(f.returns_result());
        assert!(matches!(
            &f.body[1],
            Statement::WebOp(WebOp::SetInput { value: ValueExpr::ParamRef(p), .. }) if p == "param"
        ));
    }

    #[test]
    fn parses_streams_and_calls() {
        let p = parse_program(
            "let this := this => price(this.text);\n\
             this, number > 98.6 => alert(this.text);\n\
             let sum := aggregate sum number of this;\n\
             sum => notify;\n\
             stocks();",
        )
        .unwrap();
        assert_eq!(p.items.len(), 5);
        let Statement::Stream(s) = &p.items[0] else { panic!() };
        assert_eq!(s.binder.as_deref(), Some("this"));
        assert_eq!(s.source.as_deref(), Some("this"));
        assert_eq!(
            s.sink,
            Sink::Call(Call {
                callee: "price".into(),
                args: vec![Arg {
                    name: None,
                    value: ValueExpr::FieldRef { var: "this".into(), field: Field::Text }
                }],
            })
        );
        let Statement::Stream(s) = &p.items[1] else { panic!() };
        assert_eq!(
            s.predicate,
            Some(Predicate {
                field: Field::Number,
                op: CompareOp::Gt,
                constant: Constant::Number(98.6)
            })
        );
        assert!(matches!(&p.items[4], Statement::Call(c) if c.call.callee == "stocks"));
    }

    #[test]
    fn parses_timers() {
        let p = parse_program(
            "timer(10:00) => stocks();\n\
             timer(07:30) => this => stocks(this.text);",
        )
        .unwrap();
        let Statement::Stream(s) = &p.items[0] else { panic!() };
        assert_eq!(s.timer, Some(TimeOfDay::new(10, 0).unwrap()));
        assert_eq!(s.source, None);
        let Statement::Stream(s) = &p.items[1] else { panic!() };
        assert_eq!(s.timer, Some(TimeOfDay::new(7, 30).unwrap()));
        assert_eq!(s.source.as_deref(), Some("this"));
    }

    #[test]
    fn rejects_timer_with_predicate() {
        let err = parse_program("timer(10:00), number > 5 => f();").unwrap_err();
        assert!(matches!(err, ParseError::CompoundUnsupported { .. }));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_program("function f( {").unwrap_err();
        match err {
            ParseError::Syntax { line, col, .. } => {
                assert_eq!(line, 1);
                assert!(col > 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_mixed_arg_styles() {
        assert!(parse_program("f(param=\"x\", \"y\");").is_err());
    }

    #[test]
    fn value_this_is_text_sugar() {
        let p = parse_program("@set_input(selector=\"#a\", value=this);").unwrap();
        let Statement::WebOp(WebOp::SetInput { value, .. }) = &p.items[0] else { panic!() };
        assert_eq!(value, &ValueExpr::FieldRef { var: "this".into(), field: Field::Text });
    }

    #[test]
    fn rejects_malformed_predicates() {
        assert!(parse_program("this, number > \"abc\" => f();").is_err());
        assert!(parse_program("this, text > 5 => f();").is_err());
        assert!(parse_program("this, text == 5 => f();").is_err());
        assert!(parse_program("this, number == \"x\" => f();").is_err());
    }

    #[test]
    fn rejects_out_of_range_time() {
        assert!(parse_program("timer(25:00) => f();").is_err());
        assert!(parse_program("timer(10:75) => f();").is_err());
    }
}
