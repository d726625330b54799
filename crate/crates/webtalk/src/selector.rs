//! CSS-selector subset: parsing, matching, and unique-selector generation.
//!
//! Supported syntax: `tag`, `#id`, `.class`, `[attr=value]`,
//! `:nth-child(n)`, combined freely within one step, with descendant
//! (space) and child (`>`) combinators between steps. Anything else is
//! rejected.
//!
//! Generation prefers semantic anchors (ids, then classes) and falls back
//! to positional `:nth-child` chains, so the produced selector stays
//! stable under content changes.

use std::fmt;

use thiserror::Error;

use crate::page::{Document, Element, ElementPath};

#[derive(Debug, Error, PartialEq)]
pub enum SelectorError {
    #[error("unsupported selector syntax near `{0}`")]
    UnsupportedSyntax(String),
    #[error("target path does not resolve in the document")]
    UnresolvableTarget,
    #[error("no single selector reproduces the selected element set")]
    UnselectableSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combinator {
    Descendant,
    Child,
}

/// One step of a compiled selector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SimpleSelector {
    pub tag: Option<String>,
    pub id: Option<String>,
    pub classes: Vec<String>,
    pub attrs: Vec<(String, String)>,
    pub nth_child: Option<usize>,
}

impl SimpleSelector {
    fn is_empty(&self) -> bool {
        self.tag.is_none()
            && self.id.is_none()
            && self.classes.is_empty()
            && self.attrs.is_empty()
            && self.nth_child.is_none()
    }

    fn matches(&self, el: &Element, child_index: Option<usize>) -> bool {
        if let Some(tag) = &self.tag {
            if &el.tag != tag {
                return false;
            }
        }
        if let Some(id) = &self.id {
            if el.id.as_ref() != Some(id) {
                return false;
            }
        }
        for class in &self.classes {
            if !el.classes.iter().any(|c| c == class) {
                return false;
            }
        }
        for (name, value) in &self.attrs {
            if el.attributes.get(name) != Some(value) {
                return false;
            }
        }
        if let Some(nth) = self.nth_child {
            match child_index {
                Some(i) => {
                    if i + 1 != nth {
                        return false;
                    }
                }
                // The root is no one's child; it never matches :nth-child.
                None => return false,
            }
        }
        true
    }
}

impl fmt::Display for SimpleSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(tag) = &self.tag {
            write!(f, "{tag}")?;
        }
        if let Some(id) = &self.id {
            write!(f, "#{id}")?;
        }
        for class in &self.classes {
            write!(f, ".{class}")?;
        }
        for (name, value) in &self.attrs {
            write!(f, "[{name}={value}]")?;
        }
        if let Some(nth) = self.nth_child {
            write!(f, ":nth-child({nth})")?;
        }
        Ok(())
    }
}

/// A parsed selector: steps joined by combinators. The first step's
/// combinator is implicitly descendant-of-root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selector {
    pub steps: Vec<(Combinator, SimpleSelector)>,
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (comb, step)) in self.steps.iter().enumerate() {
            if i > 0 {
                match comb {
                    Combinator::Descendant => write!(f, " ")?,
                    Combinator::Child => write!(f, " > ")?,
                }
            }
            write!(f, "{step}")?;
        }
        Ok(())
    }
}

/// Parses the supported selector subset.
pub fn parse_selector(source: &str) -> Result<Selector, SelectorError> {
    let mut steps = Vec::new();
    let mut chars = source.chars().peekable();
    let mut pending = Combinator::Descendant;
    loop {
        while matches!(chars.peek(), Some(c) if c.is_whitespace()) {
            chars.next();
        }
        if matches!(chars.peek(), Some('>')) {
            chars.next();
            if steps.is_empty() {
                return Err(SelectorError::UnsupportedSyntax(">".into()));
            }
            pending = Combinator::Child;
            while matches!(chars.peek(), Some(c) if c.is_whitespace()) {
                chars.next();
            }
        }
        if chars.peek().is_none() {
            break;
        }
        let mut step = SimpleSelector::default();
        loop {
            match chars.peek().copied() {
                Some(c) if c.is_ascii_alphanumeric() || c == '-' || c == '_' => {
                    if step.tag.is_some()
                        || step.id.is_some()
                        || !step.classes.is_empty()
                        || !step.attrs.is_empty()
                    {
                        return Err(SelectorError::UnsupportedSyntax(c.to_string()));
                    }
                    step.tag = Some(read_ident(&mut chars));
                }
                Some('#') => {
                    chars.next();
                    let ident = read_ident(&mut chars);
                    if ident.is_empty() || step.id.is_some() {
                        return Err(SelectorError::UnsupportedSyntax("#".into()));
                    }
                    step.id = Some(ident);
                }
                Some('.') => {
                    chars.next();
                    let ident = read_ident(&mut chars);
                    if ident.is_empty() {
                        return Err(SelectorError::UnsupportedSyntax(".".into()));
                    }
                    step.classes.push(ident);
                }
                Some('[') => {
                    chars.next();
                    let name = read_ident(&mut chars);
                    if name.is_empty() || chars.next() != Some('=') {
                        return Err(SelectorError::UnsupportedSyntax("[".into()));
                    }
                    let mut value = String::new();
                    loop {
                        match chars.next() {
                            Some(']') => break,
                            Some(c) => value.push(c),
                            None => return Err(SelectorError::UnsupportedSyntax("[".into())),
                        }
                    }
                    let value = value.trim_matches(|c| c == '"' || c == '\'').to_string();
                    step.attrs.push((name, value));
                }
                Some(':') => {
                    chars.next();
                    let name = read_ident(&mut chars);
                    if name != "nth-child" {
                        return Err(SelectorError::UnsupportedSyntax(format!(":{name}")));
                    }
                    if chars.next() != Some('(') {
                        return Err(SelectorError::UnsupportedSyntax(":nth-child".into()));
                    }
                    let mut digits = String::new();
                    loop {
                        match chars.next() {
                            Some(')') => break,
                            Some(c) if c.is_ascii_digit() => digits.push(c),
                            _ => return Err(SelectorError::UnsupportedSyntax(":nth-child".into())),
                        }
                    }
                    let n: usize = digits
                        .parse()
                        .map_err(|_| SelectorError::UnsupportedSyntax(":nth-child".into()))?;
                    if n == 0 {
                        return Err(SelectorError::UnsupportedSyntax(":nth-child(0)".into()));
                    }
                    step.nth_child = Some(n);
                }
                _ => break,
            }
        }
        if step.is_empty() {
            let rest: String = chars.collect();
            return Err(SelectorError::UnsupportedSyntax(rest));
        }
        steps.push((pending, step));
        pending = Combinator::Descendant;
    }
    if steps.is_empty() {
        return Err(SelectorError::UnsupportedSyntax(source.to_string()));
    }
    Ok(Selector { steps })
}

fn read_ident(chars: &mut std::iter::Peekable<std::str::Chars<'_>>) -> String {
    let mut ident = String::new();
    while let Some(&c) = chars.peek() {
        if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
            ident.push(c);
            chars.next();
        } else {
            break;
        }
    }
    ident
}

/// All elements matching `selector`, in document order, without
/// duplicates.
pub fn match_selector(doc: &Document, selector: &Selector) -> Vec<ElementPath> {
    let mut out = Vec::new();
    let mut stack: Vec<(&Element, Option<usize>)> = Vec::new();
    walk(&doc.root, ElementPath::root(), None, selector, &mut stack, &mut out);
    out
}

fn walk<'a>(
    el: &'a Element,
    path: ElementPath,
    child_index: Option<usize>,
    selector: &Selector,
    stack: &mut Vec<(&'a Element, Option<usize>)>,
    out: &mut Vec<ElementPath>,
) {
    stack.push((el, child_index));
    if chain_matches(&selector.steps, stack) {
        out.push(path.clone());
    }
    for (i, child) in el.children().enumerate() {
        walk(child, path.child(i), Some(i), selector, stack, out);
    }
    stack.pop();
}

/// Whether the element at the top of `stack` (the chain of ancestors
/// with their child indices) matches the steps, checked right to left.
fn chain_matches(steps: &[(Combinator, SimpleSelector)], stack: &[(&Element, Option<usize>)]) -> bool {
    let Some(((comb, step), rest_steps)) = steps.split_last() else {
        return true;
    };
    let Some(((el, child_index), ancestors)) = stack.split_last() else {
        return false;
    };
    if !step.matches(el, *child_index) {
        return false;
    }
    if rest_steps.is_empty() {
        return true;
    }
    match comb {
        Combinator::Child => chain_matches(rest_steps, ancestors),
        Combinator::Descendant => {
            (1..=ancestors.len()).rev().any(|cut| chain_matches(rest_steps, &ancestors[..cut]))
        }
    }
}

/// Generates a selector uniquely identifying the element at `target`.
///
/// Candidate order: `tag#id`; the shortest unique `tag`/`tag.class`
/// combination (at most two classes); a nearby id- or unique-class
/// ancestor anchor with a descendant step; finally a `:nth-child` chain
/// (child combinators) from the nearest uniquely identifiable ancestor or
/// the root. The first candidate that matches exactly the target wins.
pub fn generate_selector(doc: &Document, target: &ElementPath) -> Result<Selector, SelectorError> {
    let el = doc.resolve(target).ok_or(SelectorError::UnresolvableTarget)?;

    let unique = |sel: &Selector| -> bool {
        let m = match_selector(doc, sel);
        m.len() == 1 && &m[0] == target
    };

    if let Some(id) = &el.id {
        let sel = single_step(SimpleSelector {
            tag: Some(el.tag.clone()),
            id: Some(id.clone()),
            ..Default::default()
        });
        if unique(&sel) {
            return Ok(sel);
        }
    }

    for step in class_combinations(el) {
        let sel = single_step(step);
        if unique(&sel) {
            return Ok(sel);
        }
    }

    if let Some((anchor_sel, _)) = anchor_ancestor(doc, target) {
        for step in class_combinations(el) {
            let mut steps = anchor_sel.steps.clone();
            steps.push((Combinator::Descendant, step));
            let sel = Selector { steps };
            if unique(&sel) {
                return Ok(sel);
            }
        }
    }

    // Positional chain: guaranteed unique.
    let (anchor_sel, anchor_path) = anchor_ancestor(doc, target).unwrap_or_else(|| {
        (
            single_step(SimpleSelector {
                tag: Some(doc.root.tag.clone()),
                ..Default::default()
            }),
            ElementPath::root(),
        )
    });
    let mut steps = anchor_sel.steps;
    let mut current = anchor_path.clone();
    for &index in &target.0[anchor_path.0.len()..] {
        current = current.child(index);
        let child = doc.resolve(&current).ok_or(SelectorError::UnresolvableTarget)?;
        steps.push((
            Combinator::Child,
            SimpleSelector {
                tag: Some(child.tag.clone()),
                nth_child: Some(index + 1),
                ..Default::default()
            },
        ));
    }
    let sel = Selector { steps };
    debug_assert!(unique(&sel), "positional chains are unique by construction");
    Ok(sel)
}

fn single_step(step: SimpleSelector) -> Selector {
    Selector { steps: vec![(Combinator::Descendant, step)] }
}

/// Candidate steps for one element, shortest first: bare tag, then each
/// single class, then unordered pairs of classes.
fn class_combinations(el: &Element) -> Vec<SimpleSelector> {
    let tag = Some(el.tag.clone());
    let mut out = vec![SimpleSelector { tag: tag.clone(), ..Default::default() }];
    for class in &el.classes {
        out.push(SimpleSelector {
            tag: tag.clone(),
            classes: vec![class.clone()],
            ..Default::default()
        });
    }
    for i in 0..el.classes.len() {
        for j in i + 1..el.classes.len() {
            out.push(SimpleSelector {
                tag: tag.clone(),
                classes: vec![el.classes[i].clone(), el.classes[j].clone()],
                ..Default::default()
            });
        }
    }
    out
}

/// The nearest proper ancestor addressable on its own: by id, or by a
/// unique `tag.class` combination.
fn anchor_ancestor(doc: &Document, target: &ElementPath) -> Option<(Selector, ElementPath)> {
    let mut path = target.parent()?;
    loop {
        let el = doc.resolve(&path)?;
        if let Some(id) = &el.id {
            let sel = single_step(SimpleSelector {
                tag: Some(el.tag.clone()),
                id: Some(id.clone()),
                ..Default::default()
            });
            let m = match_selector(doc, &sel);
            if m.len() == 1 && m[0] == path {
                return Some((sel, path));
            }
        }
        for class in &el.classes {
            let sel = single_step(SimpleSelector {
                tag: Some(el.tag.clone()),
                classes: vec![class.clone()],
                ..Default::default()
            });
            let m = match_selector(doc, &sel);
            if m.len() == 1 && m[0] == path {
                return Some((sel, path));
            }
        }
        match path.parent() {
            Some(parent) => path = parent,
            None => return None,
        }
    }
}

/// Generates one selector reproducing exactly the given element set, for
/// multi-element selections. Single-element sets defer to
/// [`generate_selector`]; otherwise shared classes are tried, then a
/// common-ancestor anchor with a shared class or tag step.
pub fn selection_set_selector(
    doc: &Document,
    paths: &[ElementPath],
) -> Result<Selector, SelectorError> {
    let mut set: Vec<ElementPath> = paths.to_vec();
    set.sort();
    set.dedup();
    if set.is_empty() {
        return Err(SelectorError::UnselectableSet);
    }
    if set.len() == 1 {
        return generate_selector(doc, &set[0]);
    }
    let elements: Vec<&Element> = set
        .iter()
        .map(|p| doc.resolve(p).ok_or(SelectorError::UnresolvableTarget))
        .collect::<Result<_, _>>()?;

    let exact = |sel: &Selector| match_selector(doc, sel) == set;

    let shared_classes: Vec<String> = elements[0]
        .classes
        .iter()
        .filter(|c| elements.iter().all(|el| el.classes.contains(c)))
        .cloned()
        .collect();
    let same_tag = elements.iter().all(|el| el.tag == elements[0].tag);

    for class in &shared_classes {
        let bare = single_step(SimpleSelector { classes: vec![class.clone()], ..Default::default() });
        if exact(&bare) {
            return Ok(bare);
        }
        if same_tag {
            let tagged = single_step(SimpleSelector {
                tag: Some(elements[0].tag.clone()),
                classes: vec![class.clone()],
                ..Default::default()
            });
            if exact(&tagged) {
                return Ok(tagged);
            }
        }
    }

    // Common ancestor anchor.
    let mut common = set[0].0.clone();
    for p in &set[1..] {
        let len = common.iter().zip(&p.0).take_while(|(a, b)| a == b).count();
        common.truncate(len);
    }
    let common = ElementPath(common);
    let anchor = if common.0.is_empty() {
        single_step(SimpleSelector { tag: Some(doc.root.tag.clone()), ..Default::default() })
    } else {
        generate_selector(doc, &common)?
    };
    let all_direct_children = set.iter().all(|p| p.0.len() == common.0.len() + 1);
    let comb = if all_direct_children { Combinator::Child } else { Combinator::Descendant };
    let mut step_candidates = Vec::new();
    for class in &shared_classes {
        step_candidates.push(SimpleSelector { classes: vec![class.clone()], ..Default::default() });
        if same_tag {
            step_candidates.push(SimpleSelector {
                tag: Some(elements[0].tag.clone()),
                classes: vec![class.clone()],
                ..Default::default()
            });
        }
    }
    if same_tag {
        step_candidates.push(SimpleSelector {
            tag: Some(elements[0].tag.clone()),
            ..Default::default()
        });
    }
    for step in step_candidates {
        let mut steps = anchor.steps.clone();
        steps.push((comb, step));
        let sel = Selector { steps };
        if exact(&sel) {
            return Ok(sel);
        }
    }
    Err(SelectorError::UnselectableSet)
}

/// Convenience: match a selector source string.
pub fn match_source(doc: &Document, source: &str) -> Result<Vec<ElementPath>, SelectorError> {
    Ok(match_selector(doc, &parse_selector(source)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::page::parse_html;

    fn doc(html: &str) -> Document {
        Document { url: "https://t.test/".into(), root: parse_html(html).unwrap(), focus: None }
    }

    #[test]
    fn parses_paper_selectors() {
        let s = parse_selector("button[type=submit]").unwrap();
        assert_eq!(s.steps.len(), 1);
        assert_eq!(s.steps[0].1.tag.as_deref(), Some("button"));
        assert_eq!(s.steps[0].1.attrs, vec![("type".into(), "submit".into())]);

        let s = parse_selector(".recipe:nth-child(1)").unwrap();
        assert_eq!(s.steps[0].1.classes, vec!["recipe"]);
        assert_eq!(s.steps[0].1.nth_child, Some(1));

        let s = parse_selector("ul#list > li:nth-child(3)").unwrap();
        assert_eq!(s.steps.len(), 2);
        assert_eq!(s.steps[1].0, Combinator::Child);

        assert!(matches!(
            parse_selector("a:hover"),
            Err(SelectorError::UnsupportedSyntax(_))
        ));
    }

    #[test]
    fn print_parse_round_trip() {
        for src in [
            "input#search",
            "button[type=submit]",
            ".recipe:nth-child(1)",
            "div#results > div:nth-child(2) > span:nth-child(1)",
            "ul#list li.item",
        ] {
            let sel = parse_selector(src).unwrap();
            assert_eq!(parse_selector(&sel.to_string()).unwrap(), sel);
        }
    }

    #[test]
    fn matches_in_document_order() {
        let d = doc(
            "<html><body>\
             <div class=\"a\"><span class=\"x\">1</span></div>\
             <div class=\"a\"><span class=\"x\">2</span></div>\
             </body></html>",
        );
        let m = match_source(&d, ".x").unwrap();
        assert_eq!(m, vec![ElementPath(vec![0, 0, 0]), ElementPath(vec![0, 1, 0])]);
        assert!(match_source(&d, ".absent").unwrap().is_empty());
        let m = match_source(&d, "div.a > span.x").unwrap();
        assert_eq!(m.len(), 2);
        let m = match_source(&d, "body span").unwrap();
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn id_selector_unique() {
        let d = doc("<html><body><input id=\"search\"></body></html>");
        let m = match_source(&d, "#search").unwrap();
        assert_eq!(m, vec![ElementPath(vec![0, 0])]);
        let gen = generate_selector(&d, &ElementPath(vec![0, 0])).unwrap();
        assert_eq!(gen.to_string(), "input#search");
    }

    #[test]
    fn positional_fallback_under_idd_ancestor() {
        let d = doc(
            "<html><body><ul id=\"list\">\
             <li>a</li><li>b</li><li>c</li><li>d</li><li>e</li>\
             </ul></body></html>",
        );
        let third = ElementPath(vec![0, 0, 2]);
        let gen = generate_selector(&d, &third).unwrap();
        assert_eq!(gen.to_string(), "ul#list > li:nth-child(3)");
        assert_eq!(match_selector(&d, &gen), vec![third]);
    }

    #[test]
    fn root_is_bare_tag() {
        let d = doc("<html><body></body></html>");
        let gen = generate_selector(&d, &ElementPath::root()).unwrap();
        assert_eq!(gen.to_string(), "html");
    }

    #[test]
    fn class_anchor_distinguishes() {
        let d = doc(
            "<html><body>\
             <div id=\"left\"><span class=\"v\">1</span></div>\
             <div id=\"right\"><span class=\"v\">2</span></div>\
             </body></html>",
        );
        let gen = generate_selector(&d, &ElementPath(vec![0, 1, 0])).unwrap();
        assert_eq!(gen.to_string(), "div#right span");
        assert_eq!(match_selector(&d, &gen), vec![ElementPath(vec![0, 1, 0])]);
    }

    #[test]
    fn selection_set_by_shared_class() {
        let d = doc(
            "<html><body><ul id=\"ing\">\
             <li class=\"ingredient\">a</li>\
             <li class=\"ingredient\">b</li>\
             <li class=\"ingredient\">c</li>\
             </ul></body></html>",
        );
        let set = vec![
            ElementPath(vec![0, 0, 0]),
            ElementPath(vec![0, 0, 1]),
            ElementPath(vec![0, 0, 2]),
        ];
        let sel = selection_set_selector(&d, &set).unwrap();
        assert_eq!(sel.to_string(), ".ingredient");
        assert_eq!(match_selector(&d, &sel), set);
    }

    #[test]
    fn selection_set_needs_anchor_when_class_shared_elsewhere() {
        let d = doc(
            "<html><body>\
             <ul id=\"first\"><li class=\"v\">a</li><li class=\"v\">b</li></ul>\
             <ul id=\"second\"><li class=\"v\">c</li></ul>\
             </body></html>",
        );
        let set = vec![ElementPath(vec![0, 0, 0]), ElementPath(vec![0, 0, 1])];
        let sel = selection_set_selector(&d, &set).unwrap();
        assert_eq!(sel.to_string(), "ul#first > .v");
        assert_eq!(match_selector(&d, &sel), set);
    }

    #[test]
    fn unselectable_set_reported() {
        let d = doc(
            "<html><body><ul id=\"l\">\
             <li class=\"v\">a</li><li class=\"v\">b</li><li class=\"v\">c</li>\
             </ul></body></html>",
        );
        // First and third share every addressable property with the second.
        let set = vec![ElementPath(vec![0, 0, 0]), ElementPath(vec![0, 0, 2])];
        assert_eq!(selection_set_selector(&d, &set), Err(SelectorError::UnselectableSet));
    }

    #[test]
    fn exhaustive_round_trip_on_small_doc() {
        let d = doc(
            "<html><body>\
             <div id=\"top\" class=\"layout\"><span>t</span><span>u</span></div>\
             <div class=\"row\"><span class=\"cell\">1</span><span class=\"cell\">2</span></div>\
             <div class=\"row\"><span class=\"cell\">3</span><span class=\"cell\">4</span></div>\
             <input id=\"q\">\
             </body></html>",
        );
        for path in d.all_paths() {
            let sel = generate_selector(&d, &path).unwrap();
            assert_eq!(match_selector(&d, &sel), vec![path.clone()], "selector {sel}");
            let reparsed = parse_selector(&sel.to_string()).unwrap();
            assert_eq!(reparsed, sel);
        }
    }
}
