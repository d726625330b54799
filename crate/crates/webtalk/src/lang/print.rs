//! Canonical printer. `parse_program(print_program(p)) == p` for every
//! well-formed program; skill files on disk hold this form.

use std::fmt::Write;

use super::ast::*;
use crate::table::format_decimal;

pub fn print_program(program: &Program) -> String {
    let mut out = String::new();
    for item in &program.items {
        print_statement(&mut out, item, 0);
    }
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn print_statement(out: &mut String, stmt: &Statement, depth: usize) {
    indent(out, depth);
    match stmt {
        Statement::FunctionDecl(f) => {
            let params = f
                .params
                .iter()
                .map(|p| format!("{} : String", p.name))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(out, "function {}({params}) {{", f.name);
            for s in &f.body {
                print_statement(out, s, depth + 1);
            }
            indent(out, depth);
            out.push_str("}\n");
        }
        Statement::WebOp(op) => {
            match op {
                WebOp::Load { url } => {
                    let _ = write!(out, "@load(url={})", quote(url));
                }
                WebOp::Click { selector } => {
                    let _ = write!(out, "@click(selector={})", quote(selector));
                }
                WebOp::SetInput { selector, value } => {
                    let _ = write!(
                        out,
                        "@set_input(selector={}, value={})",
                        quote(selector),
                        value_expr(value)
                    );
                }
            }
            out.push_str(";\n");
        }
        Statement::LetSelect { binder, selector } => {
            let _ = writeln!(out, "let {binder} := @select(selector={});", quote(selector));
        }
        Statement::LetAggregate { binder, op, source } => {
            let _ = writeln!(out, "let {binder} := aggregate {op} number of {source};");
        }
        Statement::Stream(s) => {
            if let Some(binder) = &s.binder {
                let _ = write!(out, "let {binder} := ");
            }
            if let Some(time) = &s.timer {
                let _ = write!(out, "timer({time}) => ");
            }
            if let Some(source) = &s.source {
                let _ = write!(out, "{source}");
                if let Some(pred) = &s.predicate {
                    let _ = write!(out, ", {}", predicate(pred));
                }
                out.push_str(" => ");
            }
            match &s.sink {
                Sink::Notify => out.push_str("notify"),
                Sink::Call(c) => out.push_str(&call(c)),
            }
            out.push_str(";\n");
        }
        Statement::Call(c) => {
            if let Some(binder) = &c.binder {
                let _ = write!(out, "let {binder} := ");
            }
            out.push_str(&call(&c.call));
            out.push_str(";\n");
        }
    }
}

fn call(c: &Call) -> String {
    let args = c
        .args
        .iter()
        .map(|a| match &a.name {
            Some(name) => format!("{name}={}", value_expr(&a.value)),
            None => value_expr(&a.value),
        })
        .collect::<Vec<_>>()
        .join(", ");
    format!("{}({args})", c.callee)
}

fn predicate(p: &Predicate) -> String {
    let constant = match &p.constant {
        Constant::Text(s) => quote(s),
        Constant::Number(n) => format_decimal(*n),
    };
    format!("{} {} {constant}", p.field, p.op)
}

fn value_expr(v: &ValueExpr) -> String {
    match v {
        ValueExpr::Const(s) => quote(s),
        ValueExpr::ParamRef(name) => name.clone(),
        ValueExpr::FieldRef { var, field } => format!("{var}.{field}"),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}
