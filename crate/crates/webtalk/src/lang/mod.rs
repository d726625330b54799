//! The skill language: abstract syntax, concrete grammar, parser,
//! canonical printer and typechecker.
//!
//! The grammar is documented in `docs/webtalk-grammar.md`; the canonical
//! printer and the parser are exact inverses over well-formed programs.

mod ast;
mod parse;
mod print;
mod typecheck;

pub use ast::*;
pub use parse::{parse_program, ParseError};
pub use print::print_program;
pub use typecheck::{signature_of, typecheck, Signature, SignatureMap, TypeError};
