//! Unlabeled binary constituency trees represented as span sets.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// A constituent covering leaves `i..=j` (1-based, inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub i: usize,
    pub j: usize,
}

impl Span {
    pub fn new(i: usize, j: usize) -> Self {
        Span { i, j }
    }

    #[allow(clippy::len_without_is_empty)] // spans are never empty
    pub fn len(&self) -> usize {
        self.j + 1 - self.i
    }

    pub fn is_leaf(&self) -> bool {
        self.i == self.j
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.i <= other.i && other.j <= self.j
    }

    fn crosses(&self, other: &Span) -> bool {
        (self.i < other.i && other.i <= self.j && self.j < other.j)
            || (other.i < self.i && self.i <= other.j && other.j < self.j)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("tree has no leaves")]
    Empty,
    #[error("span {0} lies outside 1..={1}")]
    OutOfRange(Span, usize),
    #[error("missing span {0}")]
    Missing(Span),
    #[error("spans {0} and {1} cross")]
    Crossing(Span, Span),
    #[error("span {0} has no binary split")]
    NotBinary(Span),
    #[error("expected {expected} spans, found {found}")]
    SpanCount { expected: usize, found: usize },
}

/// A binary bracketing over `n` leaves.
///
/// Always contains the whole span `(1, n)`, every leaf span `(i, i)`, and
/// exactly one binary split for each longer span, so `2n - 1` spans total.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParseTree {
    n: usize,
    spans: BTreeSet<Span>,
}

impl ParseTree {
    /// Builds a tree from a span set, checking every structural invariant.
    pub fn from_spans(n: usize, spans: impl IntoIterator<Item = Span>) -> Result<Self, TreeError> {
        let tree = ParseTree { n, spans: spans.into_iter().collect() };
        tree.validate()?;
        Ok(tree)
    }

    /// Builds a tree from a split oracle: `split(i, j)` returns `k` so that
    /// `(i, k)` and `(k + 1, j)` are the children of `(i, j)`.
    pub fn from_splits(n: usize, mut split: impl FnMut(usize, usize) -> usize) -> Self {
        assert!(n >= 1, "tree needs at least one leaf");
        let mut spans = BTreeSet::new();
        let mut stack = vec![Span::new(1, n)];
        while let Some(s) = stack.pop() {
            spans.insert(s);
            if s.i < s.j {
                let k = split(s.i, s.j);
                assert!(s.i <= k && k < s.j, "split {} outside {}", k, s);
                stack.push(Span::new(s.i, k));
                stack.push(Span::new(k + 1, s.j));
            }
        }
        ParseTree { n, spans }
    }

    /// Single-leaf tree.
    pub fn leaf() -> Self {
        ParseTree::from_splits(1, |_, _| unreachable!())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spans(&self) -> &BTreeSet<Span> {
        &self.spans
    }

    pub fn contains(&self, span: &Span) -> bool {
        self.spans.contains(span)
    }

    /// Spans of length at least two.
    pub fn internal_spans(&self) -> impl Iterator<Item = Span> + '_ {
        self.spans.iter().copied().filter(|s| s.i < s.j)
    }

    /// Split point `k` of an internal span present in the tree.
    pub fn split_of(&self, span: Span) -> Option<usize> {
        if span.i >= span.j || !self.spans.contains(&span) {
            return None;
        }
        // The left child is the longest span starting at i that ends before j.
        self.spans
            .range(Span::new(span.i, span.i)..Span::new(span.i, span.j))
            .next_back()
            .map(|left| left.j)
    }

    pub fn children(&self, span: Span) -> Option<(Span, Span)> {
        self.split_of(span)
            .map(|k| (Span::new(span.i, k), Span::new(k + 1, span.j)))
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        let n = self.n;
        if n == 0 {
            return Err(TreeError::Empty);
        }
        for s in &self.spans {
            if s.i < 1 || s.i > s.j || s.j > n {
                return Err(TreeError::OutOfRange(*s, n));
            }
        }
        if self.spans.len() != 2 * n - 1 {
            for i in 1..=n {
                if !self.spans.contains(&Span::new(i, i)) {
                    return Err(TreeError::Missing(Span::new(i, i)));
                }
            }
            return Err(TreeError::SpanCount { expected: 2 * n - 1, found: self.spans.len() });
        }
        if !self.spans.contains(&Span::new(1, n)) {
            return Err(TreeError::Missing(Span::new(1, n)));
        }
        for i in 1..=n {
            if !self.spans.contains(&Span::new(i, i)) {
                return Err(TreeError::Missing(Span::new(i, i)));
            }
        }
        let all: Vec<Span> = self.spans.iter().copied().collect();
        for (a_idx, a) in all.iter().enumerate() {
            for b in &all[a_idx + 1..] {
                if a.crosses(b) {
                    return Err(TreeError::Crossing(*a, *b));
                }
            }
        }
        for s in self.internal_spans() {
            let k = self.split_of(s).ok_or(TreeError::NotBinary(s))?;
            if !self.spans.contains(&Span::new(k + 1, s.j)) {
                return Err(TreeError::NotBinary(s));
            }
        }
        Ok(())
    }

    /// Renders the tree with the given tokens as `((w1 w2) w3)`.
    pub fn to_bracketed<S: AsRef<str>>(&self, tokens: &[S]) -> String {
        assert_eq!(tokens.len(), self.n, "token count must match leaf count");
        let mut out = String::new();
        self.render(Span::new(1, self.n), tokens, &mut out);
        if self.n == 1 {
            out = format!("({out})");
        }
        out
    }

    fn render<S: AsRef<str>>(&self, span: Span, tokens: &[S], out: &mut String) {
        match self.children(span) {
            None => out.push_str(tokens[span.i - 1].as_ref()),
            Some((l, r)) => {
                out.push('(');
                self.render(l, tokens, out);
                out.push(' ');
                self.render(r, tokens, out);
                out.push(')');
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_splits_right_branching() {
        let t = ParseTree::from_splits(4, |i, _| i);
        let expected: BTreeSet<Span> = [(1, 4), (2, 4), (3, 4), (1, 1), (2, 2), (3, 3), (4, 4)]
            .iter()
            .map(|&(i, j)| Span::new(i, j))
            .collect();
        assert_eq!(t.spans(), &expected);
        assert!(t.validate().is_ok());
        assert_eq!(t.split_of(Span::new(2, 4)), Some(2));
    }

    #[test]
    fn rejects_crossing_and_missing() {
        let spans = [(1, 3), (1, 2), (2, 3), (1, 1), (2, 2)].map(|(i, j)| Span::new(i, j));
        assert!(ParseTree::from_spans(3, spans).is_err());
        let spans = [(1, 3), (1, 2), (1, 1), (2, 2), (2, 3)].map(|(i, j)| Span::new(i, j));
        assert!(matches!(ParseTree::from_spans(3, spans), Err(TreeError::Missing(_))));
    }

    #[test]
    fn bracketed_rendering() {
        let t = ParseTree::from_splits(5, |i, j| if (i, j) == (1, 5) { 2 } else if j - i >= 1 && i == 3 { 3 } else { i });
        assert_eq!(t.to_bracketed(&["w1", "w2", "w3", "w4", "w5"]), "((w1 w2) (w3 (w4 w5)))");
        assert_eq!(ParseTree::leaf().to_bracketed(&["x"]), "(x)");
    }
}
