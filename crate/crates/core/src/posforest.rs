//! Position-forest parsing and per-token position labels.
//!
//! An expression is split left to right into substructures. Each one becomes
//! a tree whose root is the main part, whose left child is the part written
//! above and whose right child is the part written below. Every token then
//! gets two labels: its nesting depth (how many substructure regions enclose
//! it) and its relative position (`upper`, `lower` or `middle`) inside the
//! innermost region.
//!
//! Delimiter tokens (`^`, `_`, `{`, `}`, `[`, `]`) carry the labels of the
//! region they open or close. The `\frac` and `\sqrt` heads stay at the
//! enclosing level.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latex::TokenSeq;

/// Deepest nesting level accepted.
pub const D_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelPos {
    Middle,
    Upper,
    Lower,
}

impl RelPos {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        [RelPos::Middle, RelPos::Upper, RelPos::Lower].get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelPos::Middle => "middle",
            RelPos::Upper => "upper",
            RelPos::Lower => "lower",
        }
    }
}

impl fmt::Display for RelPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelPos {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "middle" => Ok(RelPos::Middle),
            "upper" => Ok(RelPos::Upper),
            "lower" => Ok(RelPos::Lower),
            other => Err(format!("unknown relative position `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Atom,
    SupSub,
    Fraction,
    Sqrt,
    Group,
}

/// One tree of the forest.
///
/// `main` holds the root part: the base of a script, the radicand of a root,
/// or the body of a bare group. `upper`/`lower` hold superscript, numerator
/// and root index, or subscript and denominator. The `*_span` fields cover
/// the delimiter tokens that belong to each region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForestNode {
    pub kind: NodeKind,
    pub main: Vec<ForestNode>,
    pub upper: Vec<ForestNode>,
    pub lower: Vec<ForestNode>,
    pub token_span: Range<usize>,
    pub main_span: Option<Range<usize>>,
    pub upper_span: Option<Range<usize>>,
    pub lower_span: Option<Range<usize>>,
}

impl ForestNode {
    fn leaf(kind: NodeKind, span: Range<usize>) -> Self {
        ForestNode {
            kind,
            main: Vec::new(),
            upper: Vec::new(),
            lower: Vec::new(),
            token_span: span,
            main_span: None,
            upper_span: None,
            lower_span: None,
        }
    }

    /// Largest region depth below this node (0 for an atom).
    pub fn depth(&self) -> usize {
        let max = |v: &[ForestNode]| v.iter().map(ForestNode::depth).max().unwrap_or(0);
        match self.kind {
            NodeKind::Atom => 0,
            NodeKind::Group => max(&self.main),
            NodeKind::SupSub => max(&self.main).max(1 + max(&self.upper)).max(1 + max(&self.lower)),
            NodeKind::Fraction => 1 + max(&self.upper).max(max(&self.lower)),
            NodeKind::Sqrt => {
                let index = if self.upper_span.is_some() { 1 + max(&self.upper) } else { 0 };
                (1 + max(&self.main)).max(index)
            }
        }
    }
}

/// Per-token position supervision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionLabelSeq {
    pub depths: Vec<usize>,
    pub relpos: Vec<RelPos>,
}

impl PositionLabelSeq {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, RelPos)> + '_ {
        self.depths.iter().copied().zip(self.relpos.iter().copied())
    }
}

struct Parser<'a> {
    toks: Vec<&'a str>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).copied()
    }

    /// Items up to (not including) `stop` or the end of input.
    fn seq(&mut self, depth: usize, stop: Option<&str>) -> Result<Vec<ForestNode>> {
        let mut items: Vec<ForestNode> = Vec::new();
        while let Some(t) = self.peek() {
            if Some(t) == stop || t == "}" {
                break;
            }
            if t == "^" || t == "_" {
                let base = items
                    .pop()
                    .ok_or_else(|| Error::MalformedSuperscript(self.pos, "script without a base".into()))?;
                items.push(self.scripts(base, depth)?);
                continue;
            }
            items.push(self.primary(depth)?);
        }
        Ok(items)
    }

    fn scripts(&mut self, base: ForestNode, depth: usize) -> Result<ForestNode> {
        check_depth(depth + 1)?;
        let start = base.token_span.start;
        let mut node = ForestNode::leaf(NodeKind::SupSub, start..start);
        if base.kind == NodeKind::SupSub {
            return Err(Error::MalformedSuperscript(self.pos, "script attached to a scripted base".into()));
        }
        node.main = vec![base];
        while let Some(op @ ("^" | "_")) = self.peek() {
            let op_at = self.pos;
            let taken = if op == "^" { node.upper_span.is_some() } else { node.lower_span.is_some() };
            if taken {
                return Err(Error::MalformedSuperscript(op_at, format!("double `{op}`")));
            }
            self.pos += 1;
            let children = self.script_arg(op_at, depth + 1)?;
            let span = op_at..self.pos;
            if op == "^" {
                node.upper = children;
                node.upper_span = Some(span);
            } else {
                node.lower = children;
                node.lower_span = Some(span);
            }
        }
        node.token_span = start..self.pos;
        Ok(node)
    }

    fn script_arg(&mut self, op_at: usize, depth: usize) -> Result<Vec<ForestNode>> {
        match self.peek() {
            Some("{") => self.braced(depth, |at, m| Error::MalformedSuperscript(at, m)),
            Some(t) if is_atom(t) => {
                self.pos += 1;
                Ok(vec![ForestNode::leaf(NodeKind::Atom, self.pos - 1..self.pos)])
            }
            Some(t) => Err(Error::MalformedSuperscript(op_at, format!("unexpected `{t}` after script operator"))),
            None => Err(Error::MalformedSuperscript(op_at, "missing script argument".into())),
        }
    }

    /// `{ seq }`; returns the children.
    fn braced(&mut self, depth: usize, err: fn(usize, String) -> Error) -> Result<Vec<ForestNode>> {
        let open = self.pos;
        if self.peek() != Some("{") {
            return Err(err(open, "expected `{`".into()));
        }
        self.pos += 1;
        let children = self.seq(depth, None)?;
        if self.peek() != Some("}") {
            return Err(err(open, "unterminated group".into()));
        }
        self.pos += 1;
        Ok(children)
    }

    fn primary(&mut self, depth: usize) -> Result<ForestNode> {
        let at = self.pos;
        let t = self.peek().expect("primary called at end of input");
        match t {
            "{" => {
                let children = self.braced(depth, |at, m| Error::UnbalancedBraces(format!("{m} at token {at}")))?;
                let mut node = ForestNode::leaf(NodeKind::Group, at..self.pos);
                node.main = children;
                Ok(node)
            }
            "\\frac" => {
                check_depth(depth + 1)?;
                self.pos += 1;
                let num_at = self.pos;
                let upper = self.braced(depth + 1, Error::MalformedFraction)?;
                let den_at = self.pos;
                let lower = self.braced(depth + 1, Error::MalformedFraction)?;
                let mut node = ForestNode::leaf(NodeKind::Fraction, at..self.pos);
                node.upper = upper;
                node.lower = lower;
                node.upper_span = Some(num_at..den_at);
                node.lower_span = Some(den_at..self.pos);
                Ok(node)
            }
            "\\sqrt" => {
                check_depth(depth + 1)?;
                self.pos += 1;
                let mut node = ForestNode::leaf(NodeKind::Sqrt, at..at);
                if self.peek() == Some("[") {
                    let idx_at = self.pos;
                    self.pos += 1;
                    node.upper = self.seq(depth + 1, Some("]"))?;
                    if self.peek() != Some("]") {
                        return Err(Error::MalformedSqrt(idx_at, "unterminated index".into()));
                    }
                    self.pos += 1;
                    node.upper_span = Some(idx_at..self.pos);
                }
                let rad_at = self.pos;
                node.main = self.braced(depth + 1, Error::MalformedSqrt)?;
                node.main_span = Some(rad_at..self.pos);
                node.token_span = at..self.pos;
                Ok(node)
            }
            "}" => Err(Error::UnbalancedBraces(format!("unmatched `}}` at token {at}"))),
            _ => {
                self.pos += 1;
                Ok(ForestNode::leaf(NodeKind::Atom, at..at + 1))
            }
        }
    }
}

fn is_atom(t: &str) -> bool {
    !matches!(t, "{" | "}" | "^" | "_" | "\\frac" | "\\sqrt")
}

fn check_depth(depth: usize) -> Result<()> {
    if depth > D_MAX {
        return Err(Error::DepthExceeded { depth, max: D_MAX });
    }
    Ok(())
}

/// Splits a token sequence into position-forest trees, left to right.
pub fn parse_forest(seq: &TokenSeq) -> Result<Vec<ForestNode>> {
    let mut p = Parser {
        toks: seq.iter().map(|t| t.as_str()).collect(),
        pos: 0,
    };
    let forest = p.seq(0, None)?;
    if p.pos != p.toks.len() {
        return Err(Error::UnbalancedBraces(format!("unmatched `}}` at token {}", p.pos)));
    }
    Ok(forest)
}

/// Labels every token covered by `forest`.
pub fn assign_labels(forest: &[ForestNode], len: usize) -> Result<PositionLabelSeq> {
    let mut labels = PositionLabelSeq {
        depths: vec![0; len],
        relpos: vec![RelPos::Middle; len],
    };
    let mut covered = vec![false; len];
    for node in forest {
        label_node(node, 0, RelPos::Middle, &mut labels, &mut covered)?;
    }
    if let Some(t) = covered.iter().position(|c| !c) {
        return Err(Error::LengthMismatch(t, len));
    }
    Ok(labels)
}

fn fill(
    span: &Range<usize>,
    depth: usize,
    rel: RelPos,
    labels: &mut PositionLabelSeq,
    covered: &mut [bool],
) -> Result<()> {
    if span.end > labels.len() {
        return Err(Error::LengthMismatch(span.end, labels.len()));
    }
    for t in span.clone() {
        labels.depths[t] = depth;
        labels.relpos[t] = rel;
        covered[t] = true;
    }
    Ok(())
}

fn label_node(
    node: &ForestNode,
    depth: usize,
    rel: RelPos,
    labels: &mut PositionLabelSeq,
    covered: &mut [bool],
) -> Result<()> {
    fill(&node.token_span, depth, rel, labels, covered)?;
    let inner = depth + 1;
    let (main_depth, main_rel) = match node.kind {
        NodeKind::Sqrt => (inner, RelPos::Middle),
        _ => (depth, rel),
    };
    if node.kind != NodeKind::Atom && node.kind != NodeKind::Group && inner > D_MAX {
        return Err(Error::DepthExceeded { depth: inner, max: D_MAX });
    }
    if let Some(span) = &node.main_span {
        fill(span, main_depth, main_rel, labels, covered)?;
    }
    for child in &node.main {
        label_node(child, main_depth, main_rel, labels, covered)?;
    }
    for (span, children, region) in [
        (&node.upper_span, &node.upper, RelPos::Upper),
        (&node.lower_span, &node.lower, RelPos::Lower),
    ] {
        if let Some(span) = span {
            fill(span, inner, region, labels, covered)?;
        }
        for child in children {
            label_node(child, inner, region, labels, covered)?;
        }
    }
    Ok(())
}

/// `parse_forest` followed by `assign_labels`.
pub fn encode_position_labels(seq: &TokenSeq) -> Result<PositionLabelSeq> {
    let forest = parse_forest(seq)?;
    assign_labels(&forest, seq.len())
}
