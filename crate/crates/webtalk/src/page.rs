//! The simulated web: fixture documents, site manifests, and sessions.
//!
//! Documents are parsed from a strict HTML subset (tags, `id`, `class`,
//! plain attributes, text; no scripts or styles). A [`SiteManifest`] maps
//! URL patterns to fixture documents and declares click-triggered
//! navigation through [`TransitionRule`]s. A [`Session`] owns a mutable
//! deep copy of the current document; fixtures themselves are never
//! mutated.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{ElementTable, Row};

/// Identity of an element inside one document: the list of element-child
/// indices from the root. Lexicographic order on paths is document order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementPath(pub Vec<usize>);

impl ElementPath {
    pub fn root() -> Self {
        ElementPath(Vec::new())
    }

    pub fn child(&self, index: usize) -> Self {
        let mut v = self.0.clone();
        v.push(index);
        ElementPath(v)
    }

    pub fn parent(&self) -> Option<ElementPath> {
        if self.0.is_empty() {
            None
        } else {
            Some(ElementPath(self.0[..self.0.len() - 1].to_vec()))
        }
    }
}

/// Content of an element in document order: interleaved text runs and
/// child elements.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Text(String),
    Element(Element),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub tag: String,
    pub id: Option<String>,
    pub classes: Vec<String>,
    pub attributes: BTreeMap<String, String>,
    /// Present iff the element is editable (`input` or `textarea`).
    pub input_value: Option<String>,
    pub nodes: Vec<Node>,
}

impl Element {
    /// Element children, skipping text runs. Indices returned by
    /// [`ElementPath`] count only these.
    pub fn children(&self) -> impl Iterator<Item = &Element> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    pub fn child(&self, index: usize) -> Option<&Element> {
        self.children().nth(index)
    }

    fn child_mut(&mut self, index: usize) -> Option<&mut Element> {
        self.nodes
            .iter_mut()
            .filter_map(|n| match n {
                Node::Element(e) => Some(e),
                Node::Text(_) => None,
            })
            .nth(index)
    }

    /// Concatenated own and descendant text in document order.
    pub fn text(&self) -> String {
        let mut out = String::new();
        self.collect_text(&mut out);
        out
    }

    fn collect_text(&self, out: &mut String) {
        for node in &self.nodes {
            match node {
                Node::Text(t) => out.push_str(t),
                Node::Element(e) => e.collect_text(out),
            }
        }
    }

    pub fn is_editable(&self) -> bool {
        self.input_value.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub url: String,
    pub root: Element,
    pub focus: Option<ElementPath>,
}

impl Document {
    pub fn resolve(&self, path: &ElementPath) -> Option<&Element> {
        let mut el = &self.root;
        for &i in &path.0 {
            el = el.child(i)?;
        }
        Some(el)
    }

    fn resolve_mut(&mut self, path: &ElementPath) -> Option<&mut Element> {
        let mut el = &mut self.root;
        for &i in &path.0 {
            el = el.child_mut(i)?;
        }
        Some(el)
    }

    /// All element paths in document (pre-)order.
    pub fn all_paths(&self) -> Vec<ElementPath> {
        let mut out = Vec::new();
        fn walk(el: &Element, path: &ElementPath, out: &mut Vec<ElementPath>) {
            out.push(path.clone());
            for (i, child) in el.children().enumerate() {
                walk(child, &path.child(i), out);
            }
        }
        walk(&self.root, &ElementPath::root(), &mut out);
        out
    }
}

#[derive(Debug, Error)]
pub enum PageError {
    #[error("no page pattern matches url `{0}`")]
    UnknownUrl(String),
    #[error("element path {0:?} does not resolve in the current document")]
    DanglingPath(Vec<usize>),
    #[error("element at {0:?} is not editable")]
    NotEditable(Vec<usize>),
    #[error("session has no current document; navigate first")]
    NoDocument,
    #[error("manifest `{path}`: fixture file `{file}` is missing")]
    MissingFixture { path: String, file: String },
    #[error("fixture `{file}`: {message}")]
    MalformedFixture { file: String, message: String },
    #[error("duplicate url pattern `{0}`")]
    DuplicateUrlPattern(String),
    #[error("manifest: {0}")]
    MalformedManifest(String),
    #[error("transition to `{template}`: placeholder `{selector}` matched no editable element")]
    BadTransitionPlaceholder { template: String, selector: String },
}

// ---------------------------------------------------------------------------
// HTML subset parsing

const VOID_TAGS: &[&str] = &["input", "br", "hr", "img", "meta", "link"];

/// Parses the fixture HTML subset into an element tree.
pub fn parse_html(source: &str) -> Result<Element, String> {
    let mut parser = HtmlParser { chars: source.char_indices().peekable(), source };
    parser.skip_ws_and_comments();
    let root = parser.parse_element()?.ok_or("expected a root element")?;
    parser.skip_ws_and_comments();
    if parser.chars.peek().is_some() {
        return Err("trailing content after the root element".to_string());
    }
    Ok(root)
}

struct HtmlParser<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    source: &'a str,
}

impl<'a> HtmlParser<'a> {
    fn skip_ws_and_comments(&mut self) {
        loop {
            while matches!(self.chars.peek(), Some((_, c)) if c.is_whitespace()) {
                self.chars.next();
            }
            if let Some(&(pos, '<')) = self.chars.peek() {
                if self.source[pos..].starts_with("<!--") {
                    for _ in 0..4 {
                        self.chars.next();
                    }
                    while let Some((p, _)) = self.chars.next() {
                        if self.source[p..].starts_with("-->") {
                            self.chars.next();
                            self.chars.next();
                            break;
                        }
                    }
                    continue;
                }
            }
            break;
        }
    }

    fn parse_element(&mut self) -> Result<Option<Element>, String> {
        match self.chars.peek() {
            Some(&(pos, '<')) => {
                if self.source[pos..].starts_with("</") {
                    return Ok(None);
                }
            }
            _ => return Ok(None),
        }
        self.chars.next(); // consume '<'
        let tag = self.read_name()?;
        if tag.is_empty() {
            return Err("empty tag name".to_string());
        }
        let tag = tag.to_ascii_lowercase();
        let mut attributes = BTreeMap::new();
        let mut self_closed = false;
        loop {
            self.skip_ws();
            match self.chars.peek() {
                Some((_, '>')) => {
                    self.chars.next();
                    break;
                }
                Some((_, '/')) => {
                    self.chars.next();
                    match self.chars.next() {
                        Some((_, '>')) => {
                            self_closed = true;
                            break;
                        }
                        _ => return Err(format!("expected `>` after `/` in <{tag}>")),
                    }
                }
                Some(_) => {
                    let name = self.read_name()?;
                    if name.is_empty() {
                        return Err(format!("bad attribute in <{tag}>"));
                    }
                    self.skip_ws();
                    let value = if matches!(self.chars.peek(), Some((_, '='))) {
                        self.chars.next();
                        self.skip_ws();
                        self.read_attr_value()?
                    } else {
                        String::new()
                    };
                    attributes.insert(name.to_ascii_lowercase(), value);
                }
                None => return Err(format!("unterminated tag <{tag}>")),
            }
        }

        let mut element = build_element(tag.clone(), attributes);
        if self_closed || VOID_TAGS.contains(&tag.as_str()) {
            return Ok(Some(element));
        }

        // Children and text until the matching close tag.
        let mut text_buf = String::new();
        loop {
            match self.chars.peek() {
                Some(&(pos, '<')) => {
                    if self.source[pos..].starts_with("<!--") {
                        flush_text(&mut text_buf, &mut element);
                        self.skip_ws_and_comments();
                        continue;
                    }
                    if self.source[pos..].starts_with("</") {
                        flush_text(&mut text_buf, &mut element);
                        self.chars.next();
                        self.chars.next();
                        let close = self.read_name()?.to_ascii_lowercase();
                        self.skip_ws();
                        match self.chars.next() {
                            Some((_, '>')) => {}
                            _ => return Err(format!("unterminated close tag </{close}")),
                        }
                        if close != tag {
                            return Err(format!("mismatched close tag: <{tag}> closed by </{close}>"));
                        }
                        break;
                    }
                    flush_text(&mut text_buf, &mut element);
                    match self.parse_element()? {
                        Some(child) => element.nodes.push(Node::Element(child)),
                        None => return Err(format!("unexpected `<` inside <{tag}>")),
                    }
                }
                Some(&(_, c)) => {
                    self.chars.next();
                    if c == '&' {
                        text_buf.push(self.read_entity()?);
                    } else {
                        text_buf.push(c);
                    }
                }
                None => return Err(format!("unclosed <{tag}>")),
            }
        }
        if element.tag == "textarea" {
            // A textarea's initial value is its literal content.
            element.input_value = Some(element.text());
            element.nodes.clear();
        }
        Ok(Some(element))
    }

    fn skip_ws(&mut self) {
        while matches!(self.chars.peek(), Some((_, c)) if c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn read_name(&mut self) -> Result<String, String> {
        let mut name = String::new();
        while let Some(&(_, c)) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                name.push(c);
                self.chars.next();
            } else {
                break;
            }
        }
        Ok(name)
    }

    fn read_attr_value(&mut self) -> Result<String, String> {
        match self.chars.peek() {
            Some(&(_, quote @ ('"' | '\''))) => {
                self.chars.next();
                let mut value = String::new();
                loop {
                    match self.chars.next() {
                        Some((_, c)) if c == quote => break,
                        Some((_, '&')) => value.push(self.read_entity()?),
                        Some((_, c)) => value.push(c),
                        None => return Err("unterminated attribute value".to_string()),
                    }
                }
                Ok(value)
            }
            Some(_) => {
                let mut value = String::new();
                while let Some(&(_, c)) = self.chars.peek() {
                    if c.is_whitespace() || c == '>' || c == '/' {
                        break;
                    }
                    value.push(c);
                    self.chars.next();
                }
                Ok(value)
            }
            None => Err("expected attribute value".to_string()),
        }
    }

    fn read_entity(&mut self) -> Result<char, String> {
        let mut name = String::new();
        loop {
            match self.chars.next() {
                Some((_, ';')) => break,
                Some((_, c)) if name.len() < 6 => name.push(c),
                _ => return Err(format!("bad entity `&{name}`")),
            }
        }
        match name.as_str() {
            "amp" => Ok('&'),
            "lt" => Ok('<'),
            "gt" => Ok('>'),
            "quot" => Ok('"'),
            "#39" | "apos" => Ok('\''),
            other => Err(format!("unsupported entity `&{other};`")),
        }
    }
}

fn build_element(tag: String, mut attributes: BTreeMap<String, String>) -> Element {
    let id = attributes.remove("id");
    let classes = attributes
        .remove("class")
        .map(|c| c.split_whitespace().map(str::to_string).collect())
        .unwrap_or_default();
    let input_value = if tag == "input" {
        Some(attributes.get("value").cloned().unwrap_or_default())
    } else if tag == "textarea" {
        Some(String::new())
    } else {
        None
    };
    Element { tag, id, classes, attributes, input_value, nodes: Vec::new() }
}

fn flush_text(buf: &mut String, element: &mut Element) {
    // Whitespace-only runs are layout, not content.
    if !buf.trim().is_empty() {
        element.nodes.push(Node::Text(std::mem::take(buf)));
    } else {
        buf.clear();
    }
}

// ---------------------------------------------------------------------------
// Number extraction

/// Extracts the first maximal decimal literal from `text`, after stripping
/// currency symbols (`$`, `€`, `£`) and comma thousands separators between
/// digits. A sign immediately preceding the digits is included. Returns
/// `None` when the text contains no digit.
pub fn extract_number(text: &str) -> Option<f64> {
    let mut cleaned = String::with_capacity(text.len());
    let chars: Vec<char> = text.chars().filter(|c| !matches!(c, '$' | '€' | '£')).collect();
    for (i, &c) in chars.iter().enumerate() {
        if c == ','
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
        {
            continue;
        }
        cleaned.push(c);
    }
    let bytes: Vec<char> = cleaned.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let starts_number = c.is_ascii_digit()
            || (c == '.' && bytes.get(i + 1).is_some_and(|n| n.is_ascii_digit()))
            || ((c == '-' || c == '+')
                && (bytes.get(i + 1).is_some_and(|n| n.is_ascii_digit())
                    || (bytes.get(i + 1) == Some(&'.')
                        && bytes.get(i + 2).is_some_and(|n| n.is_ascii_digit()))));
        if !starts_number {
            i += 1;
            continue;
        }
        let start = i;
        if bytes[i] == '-' || bytes[i] == '+' {
            i += 1;
        }
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == '.' && bytes.get(i + 1).is_some_and(|n| n.is_ascii_digit())
        {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
        let literal: String = bytes[start..i].iter().collect();
        return literal.parse::<f64>().ok();
    }
    None
}

// ---------------------------------------------------------------------------
// URL patterns

/// A URL pattern: a literal string with `{name}` placeholders, each
/// matching one (possibly empty) query value not containing `&`.
#[derive(Debug, Clone, PartialEq)]
pub struct UrlPattern {
    pub source: String,
    parts: Vec<PatternPart>,
}

#[derive(Debug, Clone, PartialEq)]
enum PatternPart {
    Literal(String),
    Placeholder(String),
}

impl UrlPattern {
    pub fn parse(source: &str) -> Result<UrlPattern, PageError> {
        let mut parts = Vec::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| PageError::MalformedManifest(format!("unclosed `{{` in pattern `{source}`")))?
                + open;
            if open > 0 {
                parts.push(PatternPart::Literal(rest[..open].to_string()));
            }
            parts.push(PatternPart::Placeholder(rest[open + 1..close].to_string()));
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            parts.push(PatternPart::Literal(rest.to_string()));
        }
        Ok(UrlPattern { source: source.to_string(), parts })
    }

    /// Whether `url` matches, binding placeholders left to right.
    pub fn matches(&self, url: &str) -> bool {
        self.bind(url).is_some()
    }

    pub fn bind(&self, url: &str) -> Option<BTreeMap<String, String>> {
        let mut bindings = BTreeMap::new();
        let mut rest = url;
        let mut iter = self.parts.iter().peekable();
        while let Some(part) = iter.next() {
            match part {
                PatternPart::Literal(lit) => {
                    rest = rest.strip_prefix(lit.as_str())?;
                }
                PatternPart::Placeholder(name) => {
                    let value = match iter.peek() {
                        Some(PatternPart::Literal(next_lit)) => {
                            let end = rest.find(next_lit.as_str())?;
                            let v = &rest[..end];
                            rest = &rest[end..];
                            v
                        }
                        _ => {
                            let v = rest;
                            rest = "";
                            v
                        }
                    };
                    if value.contains('&') {
                        return None;
                    }
                    bindings.insert(name.clone(), value.to_string());
                }
            }
        }
        if rest.is_empty() {
            Some(bindings)
        } else {
            None
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest

/// Click-triggered navigation: when an element matching
/// `on_click_selector` is clicked while the session is on a page matching
/// `from_url_pattern`, the session navigates to `to_url_template` with
/// every `{selector}` placeholder replaced by the current `input_value`
/// of the first element matching that selector.
#[derive(Debug, Clone)]
pub struct TransitionRule {
    pub on_click_selector: crate::selector::Selector,
    pub from_url_pattern: UrlPattern,
    pub to_url_template: String,
}

#[derive(Debug, Clone)]
pub struct PageEntry {
    pub pattern: UrlPattern,
    pub file: String,
    /// When set, this entry only matches sessions on that simulated day.
    pub day: Option<u32>,
    pub document: Arc<Document>,
}

/// A complete simulated site (or set of sites): pages keyed by URL
/// pattern plus transition rules. Fixture documents are parsed once at
/// load time and shared immutably.
#[derive(Debug, Clone)]
pub struct SiteManifest {
    pub name: String,
    pub pages: Vec<PageEntry>,
    pub transitions: Vec<TransitionRule>,
}

#[derive(Deserialize)]
struct RawManifest {
    name: String,
    pages: Vec<RawPage>,
    #[serde(default)]
    transitions: Vec<RawTransition>,
}

#[derive(Deserialize)]
struct RawPage {
    pattern: String,
    file: String,
    #[serde(default)]
    day: Option<u32>,
}

#[derive(Deserialize)]
struct RawTransition {
    on_click: String,
    from: String,
    to: String,
}

impl SiteManifest {
    /// Loads and validates a `site.json` manifest; fixture files are
    /// resolved relative to the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<SiteManifest, PageError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| {
            PageError::MalformedManifest(format!("cannot read `{}`: {e}", path.display()))
        })?;
        let raw: RawManifest = serde_json::from_str(&raw)
            .map_err(|e| PageError::MalformedManifest(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));

        let mut seen = std::collections::BTreeSet::new();
        let mut pages = Vec::new();
        for page in raw.pages {
            let key = (page.pattern.clone(), page.day);
            if !seen.insert(key) {
                return Err(PageError::DuplicateUrlPattern(page.pattern));
            }
            let file_path = dir.join(&page.file);
            let html = fs::read_to_string(&file_path).map_err(|_| PageError::MissingFixture {
                path: path.display().to_string(),
                file: page.file.clone(),
            })?;
            let root = parse_html(&html).map_err(|message| PageError::MalformedFixture {
                file: page.file.clone(),
                message,
            })?;
            pages.push(PageEntry {
                pattern: UrlPattern::parse(&page.pattern)?,
                document: Arc::new(Document {
                    url: page.pattern.clone(),
                    root,
                    focus: None,
                }),
                file: page.file,
                day: page.day,
            });
        }

        let mut transitions = Vec::new();
        for t in raw.transitions {
            let sel = crate::selector::parse_selector(&t.on_click)
                .map_err(|e| PageError::MalformedManifest(format!("transition selector: {e}")))?;
            transitions.push(TransitionRule {
                on_click_selector: sel,
                from_url_pattern: UrlPattern::parse(&t.from)?,
                to_url_template: t.to,
            });
        }
        Ok(SiteManifest { name: raw.name, pages, transitions })
    }

    /// Builds a manifest from already-parsed documents. Used by tests and
    /// programmatic callers; the same validation as [`SiteManifest::load`]
    /// applies to pattern uniqueness.
    pub fn from_parts(
        name: impl Into<String>,
        pages: Vec<(&str, Document)>,
        transitions: Vec<(&str, &str, &str)>,
    ) -> Result<SiteManifest, PageError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut entries = Vec::new();
        for (pattern, doc) in pages {
            if !seen.insert(pattern.to_string()) {
                return Err(PageError::DuplicateUrlPattern(pattern.to_string()));
            }
            entries.push(PageEntry {
                pattern: UrlPattern::parse(pattern)?,
                file: String::new(),
                day: None,
                document: Arc::new(doc),
            });
        }
        let mut rules = Vec::new();
        for (on_click, from, to) in transitions {
            rules.push(TransitionRule {
                on_click_selector: crate::selector::parse_selector(on_click)
                    .map_err(|e| PageError::MalformedManifest(format!("transition selector: {e}")))?,
                from_url_pattern: UrlPattern::parse(from)?,
                to_url_template: to.to_string(),
            });
        }
        Ok(SiteManifest { name: name.into(), pages: entries, transitions: rules })
    }

    fn find_page(&self, url: &str, day: u32) -> Option<&PageEntry> {
        // Day-specific entries are consulted first so that a dated variant
        // can shadow the default page for that day.
        self.pages
            .iter()
            .find(|p| p.day == Some(day) && p.pattern.matches(url))
            .or_else(|| self.pages.iter().find(|p| p.day.is_none() && p.pattern.matches(url)))
    }
}

// ---------------------------------------------------------------------------
// Sessions

static NEXT_SESSION_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SessionId(pub u64);

/// Outcome of a click.
#[derive(Debug, Clone, PartialEq)]
pub enum ClickOutcome {
    Navigated { url: String },
    NoEffect,
}

/// An isolated browsing context over one manifest. Mutating a session
/// never affects fixtures or other sessions.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: SessionId,
    pub current: Option<Document>,
    pub history: Vec<String>,
    /// Simulated day used to resolve day-variant pages.
    pub day: u32,
    manifest: Arc<SiteManifest>,
}

pub fn open_session(manifest: &Arc<SiteManifest>) -> Session {
    Session {
        id: SessionId(NEXT_SESSION_ID.fetch_add(1, Ordering::Relaxed)),
        current: None,
        history: Vec::new(),
        day: 0,
        manifest: Arc::clone(manifest),
    }
}

pub fn open_session_on_day(manifest: &Arc<SiteManifest>, day: u32) -> Session {
    let mut s = open_session(manifest);
    s.day = day;
    s
}

impl Session {
    pub fn manifest(&self) -> &Arc<SiteManifest> {
        &self.manifest
    }

    pub fn document(&self) -> Result<&Document, PageError> {
        self.current.as_ref().ok_or(PageError::NoDocument)
    }

    /// Replaces the current document with a fresh copy of the fixture
    /// matching `url`.
    pub fn navigate(&mut self, url: &str) -> Result<&Document, PageError> {
        let entry = self
            .manifest
            .find_page(url, self.day)
            .ok_or_else(|| PageError::UnknownUrl(url.to_string()))?;
        let mut doc = (*entry.document).clone();
        doc.url = url.to_string();
        doc.focus = None;
        self.current = Some(doc);
        self.history.push(url.to_string());
        Ok(self.current.as_ref().unwrap())
    }

    /// Clicks the element at `path`. Clears focus; navigates when the
    /// first transition rule (in manifest order) matches both the current
    /// URL and the clicked element.
    pub fn click(&mut self, path: &ElementPath) -> Result<ClickOutcome, PageError> {
        let manifest = Arc::clone(&self.manifest);
        let doc = self.current.as_mut().ok_or(PageError::NoDocument)?;
        if doc.resolve(path).is_none() {
            return Err(PageError::DanglingPath(path.0.clone()));
        }
        doc.focus = None;
        let url = doc.url.clone();
        for rule in &manifest.transitions {
            if !rule.from_url_pattern.matches(&url) {
                continue;
            }
            let matched = crate::selector::match_selector(doc, &rule.on_click_selector);
            if !matched.contains(path) {
                continue;
            }
            let target = substitute_template(&rule.to_url_template, doc)?;
            self.navigate(&target)?;
            return Ok(ClickOutcome::Navigated { url: target });
        }
        Ok(ClickOutcome::NoEffect)
    }

    /// Sets the editable element at `path` to `value` and focuses it.
    pub fn set_input(&mut self, path: &ElementPath, value: &str) -> Result<(), PageError> {
        let doc = self.current.as_mut().ok_or(PageError::NoDocument)?;
        let el = doc
            .resolve_mut(path)
            .ok_or_else(|| PageError::DanglingPath(path.0.clone()))?;
        if !el.is_editable() {
            return Err(PageError::NotEditable(path.0.clone()));
        }
        el.input_value = Some(value.to_string());
        doc.focus = Some(path.clone());
        Ok(())
    }

    /// Reads the given elements into a table, one row per path in
    /// document order regardless of input order.
    pub fn read_elements(&self, paths: &[ElementPath]) -> Result<ElementTable, PageError> {
        let doc = self.document()?;
        let mut sorted: Vec<&ElementPath> = paths.iter().collect();
        sorted.sort();
        let mut rows = Vec::with_capacity(sorted.len());
        for path in sorted {
            let el = doc
                .resolve(path)
                .ok_or_else(|| PageError::DanglingPath(path.0.clone()))?;
            let text = el.text();
            let number = extract_number(&text);
            rows.push(Row { text, number });
        }
        Ok(ElementTable::new(rows))
    }
}

/// Replaces each `{selector}` in a transition template with the
/// `input_value` of the first matching element on `doc`.
fn substitute_template(template: &str, doc: &Document) -> Result<String, PageError> {
    let mut out = String::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| PageError::MalformedManifest(format!("unclosed `{{` in template `{template}`")))?
            + open;
        out.push_str(&rest[..open]);
        let selector_src = &rest[open + 1..close];
        let selector = crate::selector::parse_selector(selector_src)
            .map_err(|e| PageError::MalformedManifest(format!("template selector: {e}")))?;
        let matches = crate::selector::match_selector(doc, &selector);
        let value = matches
            .iter()
            .find_map(|p| doc.resolve(p).and_then(|el| el.input_value.clone()))
            .ok_or_else(|| PageError::BadTransitionPlaceholder {
                template: template.to_string(),
                selector: selector_src.to_string(),
            })?;
        out.push_str(&value);
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
