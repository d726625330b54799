//! Static checks over programs: name resolution, arity, return
//! discipline, and binding rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::ast::*;

/// What a caller needs to know about a function.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub params: Vec<String>,
    pub returns: bool,
}

pub type SignatureMap = BTreeMap<String, Signature>;

pub fn signature_of(decl: &FunctionDecl) -> Signature {
    Signature {
        params: decl.params.iter().map(|p| p.name.clone()).collect(),
        returns: decl.returns_result(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TypeError {
    UnknownFunction { scope: String, name: String },
    RecursiveCall { scope: String, name: String },
    UnknownVariable { scope: String, name: String },
    ArityMismatch { scope: String, callee: String, expected: usize, got: usize },
    MultipleReturns { scope: String },
    NoResultToBind { scope: String, callee: String },
    DuplicateBinding { scope: String, name: String },
    DuplicateFunction { name: String },
}

impl fmt::Display for TypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeError::UnknownFunction { scope, name } => {
                write!(f, "{scope}: call to unknown function `{name}`")
            }
            TypeError::RecursiveCall { scope, name } => {
                write!(f, "{scope}: function `{name}` cannot call itself, directly or via an enclosing definition")
            }
            TypeError::UnknownVariable { scope, name } => {
                write!(f, "{scope}: variable `{name}` is not bound at this point")
            }
            TypeError::ArityMismatch { scope, callee, expected, got } => {
                write!(f, "{scope}: `{callee}` takes {expected} argument(s), got {got}")
            }
            TypeError::MultipleReturns { scope } => {
                write!(f, "{scope}: at most one notify statement is allowed per function")
            }
            TypeError::NoResultToBind { scope, callee } => {
                write!(f, "{scope}: `{callee}` returns no result, nothing to bind")
            }
            TypeError::DuplicateBinding { scope, name } => {
                write!(f, "{scope}: variable `{name}` is already defined")
            }
            TypeError::DuplicateFunction { name } => {
                write!(f, "function `{name}` is already defined")
            }
        }
    }
}

struct Checker {
    known: SignatureMap,
    /// Names of declarations currently being checked, outermost first.
    open: Vec<String>,
    errors: Vec<TypeError>,
}

/// Checks `program` against previously registered `repo` functions.
/// Returns every error found; an empty list means the program is
/// well-formed.
pub fn typecheck(program: &Program, repo: &SignatureMap) -> Vec<TypeError> {
    let mut checker = Checker { known: repo.clone(), open: Vec::new(), errors: Vec::new() };
    let mut top_scope = Scope::top_level();
    checker.check_body(&program.items, &mut top_scope, "<top>");
    checker.errors
}

struct Scope {
    bound: BTreeSet<String>,
    params: BTreeSet<String>,
    /// `this` may be supplied by the surrounding demonstration context
    /// at the top level only.
    implicit_this: bool,
    notify_seen: bool,
}

impl Scope {
    fn top_level() -> Scope {
        Scope {
            bound: BTreeSet::new(),
            params: BTreeSet::new(),
            implicit_this: true,
            notify_seen: false,
        }
    }

    fn function(params: &[Param]) -> Scope {
        Scope {
            bound: BTreeSet::new(),
            params: params.iter().map(|p| p.name.clone()).collect(),
            implicit_this: false,
            notify_seen: false,
        }
    }

    fn var_bound(&self, name: &str) -> bool {
        self.bound.contains(name) || (name == "this" && self.implicit_this)
    }
}

impl Checker {
    fn check_body(&mut self, statements: &[Statement], scope: &mut Scope, scope_name: &str) {
        for stmt in statements {
            self.check_statement(stmt, scope, scope_name);
        }
    }

    fn check_statement(&mut self, stmt: &Statement, scope: &mut Scope, scope_name: &str) {
        match stmt {
            Statement::FunctionDecl(decl) => {
                if self.known.contains_key(&decl.name) || self.open.contains(&decl.name) {
                    self.errors.push(TypeError::DuplicateFunction { name: decl.name.clone() });
                }
                let mut seen = BTreeSet::new();
                for p in &decl.params {
                    if !seen.insert(p.name.clone()) {
                        self.errors.push(TypeError::DuplicateBinding {
                            scope: decl.name.clone(),
                            name: p.name.clone(),
                        });
                    }
                }
                self.open.push(decl.name.clone());
                let mut inner = Scope::function(&decl.params);
                self.check_body(&decl.body, &mut inner, &decl.name);
                self.open.pop();
                // The declaration becomes callable only after its body
                // completes; names are not hoisted.
                self.known.insert(decl.name.clone(), signature_of(decl));
            }
            Statement::WebOp(op) => {
                if let WebOp::SetInput { value, .. } = op {
                    self.check_value(value, scope, scope_name, None);
                }
            }
            Statement::LetSelect { binder, .. } => {
                self.bind(binder, scope, scope_name);
            }
            Statement::LetAggregate { binder, source, .. } => {
                if !scope.var_bound(source) {
                    self.errors.push(TypeError::UnknownVariable {
                        scope: scope_name.to_string(),
                        name: source.clone(),
                    });
                }
                self.bind(binder, scope, scope_name);
            }
            Statement::Stream(stream) => {
                if let Some(source) = &stream.source {
                    if !scope.var_bound(source) {
                        self.errors.push(TypeError::UnknownVariable {
                            scope: scope_name.to_string(),
                            name: source.clone(),
                        });
                    }
                }
                match &stream.sink {
                    Sink::Notify => {
                        if scope.notify_seen {
                            self.errors
                                .push(TypeError::MultipleReturns { scope: scope_name.to_string() });
                        }
                        scope.notify_seen = true;
                    }
                    Sink::Call(call) => {
                        self.check_call(call, scope, scope_name, stream.source.as_deref());
                        if stream.binder.is_some() {
                            self.require_result(&call.callee, scope_name);
                        }
                    }
                }
                if let Some(binder) = &stream.binder {
                    self.bind(binder, scope, scope_name);
                }
            }
            Statement::Call(c) => {
                self.check_call(&c.call, scope, scope_name, None);
                if c.binder.is_some() {
                    self.require_result(&c.call.callee, scope_name);
                }
                if let Some(binder) = &c.binder {
                    self.bind(binder, scope, scope_name);
                }
            }
        }
    }

    fn bind(&mut self, binder: &str, scope: &mut Scope, scope_name: &str) {
        // Rebinding `this` is the normal demonstration flow; named
        // binders must be fresh.
        if binder != "this"
            && (scope.bound.contains(binder) || scope.params.contains(binder))
        {
            self.errors.push(TypeError::DuplicateBinding {
                scope: scope_name.to_string(),
                name: binder.to_string(),
            });
        }
        scope.bound.insert(binder.to_string());
    }

    fn require_result(&mut self, callee: &str, scope_name: &str) {
        let returns = self.known.get(callee).map(|s| s.returns);
        if returns == Some(false) {
            self.errors.push(TypeError::NoResultToBind {
                scope: scope_name.to_string(),
                callee: callee.to_string(),
            });
        }
    }

    fn check_call(&mut self, call: &Call, scope: &Scope, scope_name: &str, stream_source: Option<&str>) {
        for arg in &call.args {
            self.check_value(&arg.value, scope, scope_name, stream_source);
        }
        if self.open.contains(&call.callee) {
            self.errors.push(TypeError::RecursiveCall {
                scope: scope_name.to_string(),
                name: call.callee.clone(),
            });
            return;
        }
        let Some(sig) = self.known.get(&call.callee) else {
            self.errors.push(TypeError::UnknownFunction {
                scope: scope_name.to_string(),
                name: call.callee.clone(),
            });
            return;
        };
        let named: Vec<&String> = call.args.iter().filter_map(|a| a.name.as_ref()).collect();
        if named.len() == call.args.len() && !call.args.is_empty() {
            let want: BTreeSet<&String> = sig.params.iter().collect();
            let got: BTreeSet<&String> = named.iter().copied().collect();
            if want != got || named.len() != sig.params.len() {
                self.errors.push(TypeError::ArityMismatch {
                    scope: scope_name.to_string(),
                    callee: call.callee.clone(),
                    expected: sig.params.len(),
                    got: call.args.len(),
                });
            }
        } else if call.args.len() != sig.params.len() {
            self.errors.push(TypeError::ArityMismatch {
                scope: scope_name.to_string(),
                callee: call.callee.clone(),
                expected: sig.params.len(),
                got: call.args.len(),
            });
        }
    }

    fn check_value(
        &mut self,
        value: &ValueExpr,
        scope: &Scope,
        scope_name: &str,
        stream_source: Option<&str>,
    ) {
        match value {
            ValueExpr::Const(_) => {}
            ValueExpr::ParamRef(name) => {
                if !scope.params.contains(name) {
                    self.errors.push(TypeError::UnknownVariable {
                        scope: scope_name.to_string(),
                        name: name.clone(),
                    });
                }
            }
            ValueExpr::FieldRef { var, field: _ } => {
                // Inside a stream sink, `this` names the iteration row
                // and the source variable is in scope.
                let row_names = ["this", stream_source.unwrap_or("this")];
                if stream_source.is_some() && row_names.contains(&var.as_str()) {
                    return;
                }
                if !scope.var_bound(var) {
                    self.errors.push(TypeError::UnknownVariable {
                        scope: scope_name.to_string(),
                        name: var.clone(),
                    });
                }
            }
        }
    }
}
