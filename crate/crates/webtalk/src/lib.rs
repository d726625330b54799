//! A deterministic toolkit for turning web-browsing demonstrations into
//! executable assistant skills.
//!
//! The crate is organized around a small pipeline:
//!
//! - [`page`]: a simulated web made of fixture documents, a site manifest
//!   describing navigation, and isolated mutable sessions.
//! - [`selector`]: a CSS-selector subset, matching, and unique-selector
//!   generation for elements.
//! - [`lang`]: the skill language itself — AST, parser, printer and
//!   typechecker.
//! - [`nlu`]: template matching from voice-command strings to canonical
//!   recorder commands.
//! - [`recorder`]: the code generator that consumes a demonstration
//!   transcript (GUI events plus utterances) and emits programs.
//! - [`runtime`]: compilation and execution of programs against the page
//!   model, including iteration, aggregation, and virtual-clock timers.
//!
//! Values flowing through programs are [`table::ElementTable`]s: ordered
//! rows of element text with an optional extracted number. A scalar is a
//! one-row table.

pub mod lang;
pub mod nlu;
pub mod page;
pub mod recorder;
pub mod runtime;
pub mod selector;
pub mod table;

pub use page::{Document, Element, ElementPath, Session, SiteManifest};
pub use table::{ElementTable, Row};
