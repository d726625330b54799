//! Tables of element values, the universal value type of the language.

use serde::{Deserialize, Serialize};

/// One row of a table: the textual content of an element and the number
/// extracted from it, when any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub number: Option<f64>,
}

impl Row {
    pub fn new(text: impl Into<String>, number: Option<f64>) -> Self {
        Row { text: text.into(), number }
    }

    /// Row for a computed numeric value, with the canonical text rendering.
    pub fn from_number(value: f64) -> Self {
        Row { text: format_decimal(value), number: Some(value) }
    }
}

/// An ordered collection of rows. Iteration order is insertion order,
/// which for rows read from a page is document order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ElementTable {
    pub rows: Vec<Row>,
}

impl ElementTable {
    pub fn new(rows: Vec<Row>) -> Self {
        ElementTable { rows }
    }

    /// A scalar is a degenerate table with one row.
    pub fn scalar(row: Row) -> Self {
        ElementTable { rows: vec![row] }
    }

    pub fn empty() -> Self {
        ElementTable { rows: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Appends all rows of `other`, preserving order.
    pub fn extend(&mut self, other: ElementTable) {
        self.rows.extend(other.rows);
    }
}

impl FromIterator<Row> for ElementTable {
    fn from_iter<I: IntoIterator<Item = Row>>(iter: I) -> Self {
        ElementTable { rows: iter.into_iter().collect() }
    }
}

/// Canonical decimal rendering: at most six fractional digits, trailing
/// zeros trimmed, no trailing dot.
pub fn format_decimal(value: f64) -> String {
    let mut s = format!("{value:.6}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    // Normalizes "-0" from tiny negatives rounded to zero.
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_formatting() {
        assert_eq!(format_decimal(10.0), "10");
        assert_eq!(format_decimal(9.75), "9.75");
        assert_eq!(format_decimal(-3.2), "-3.2");
        assert_eq!(format_decimal(71.0 + 2.0 / 7.0), "71.285714");
        assert_eq!(format_decimal(0.0), "0");
        assert_eq!(format_decimal(-1e-9), "0");
    }

    #[test]
    fn scalar_is_one_row() {
        let t = ElementTable::scalar(Row::from_number(9.75));
        assert_eq!(t.len(), 1);
        assert_eq!(t.rows[0].text, "9.75");
        assert_eq!(t.rows[0].number, Some(9.75));
    }
}
