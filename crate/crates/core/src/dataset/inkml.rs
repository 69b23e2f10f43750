use crate::error::{Error, Result};
use crate::latex::{tokenize, TokenSeq};

/// Pen traces and the LaTeX annotation of one InkML document.
#[derive(Debug, Clone, PartialEq)]
pub struct InkSample {
    pub traces: Vec<Vec<(f64, f64)>>,
    /// The `truth` annotation exactly as written, `$` delimiters included.
    pub truth: String,
}

impl InkSample {
    /// Tokens of the truth with math-mode `$` delimiters and surrounding
    /// whitespace removed.
    pub fn tokens(&self) -> Result<TokenSeq> {
        let t = self.truth.trim();
        let t = t.strip_prefix("$$").and_then(|s| s.strip_suffix("$$")).unwrap_or(t);
        let t = t.strip_prefix('$').and_then(|s| s.strip_suffix('$')).unwrap_or(t);
        tokenize(t)
    }
}

fn parse_trace(text: &str, index: usize) -> Result<Vec<(f64, f64)>> {
    let mut points = Vec::new();
    for point in text.split(',') {
        let point = point.trim();
        if point.is_empty() {
            continue;
        }
        let mut nums = point.split_whitespace().map(str::parse::<f64>);
        match (nums.next(), nums.next()) {
            (Some(Ok(x)), Some(Ok(y))) if x.is_finite() && y.is_finite() => points.push((x, y)),
            _ => {
                return Err(Error::MalformedXml(format!("trace {index}: bad point `{point}`")));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::MalformedXml(format!("trace {index} has no points")));
    }
    Ok(points)
}

/// Reads the `trace` elements and the document-level `truth` annotation.
///
/// Only the first two channels of each point are used. Truth annotations
/// nested in trace groups label single symbols and are ignored.
pub fn parse_inkml(document: &str) -> Result<InkSample> {
    let doc = roxmltree::Document::parse(document).map_err(|e| Error::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "ink" {
        return Err(Error::MalformedXml(format!(
            "root element is `{}`, expected `ink`",
            root.tag_name().name()
        )));
    }
    let truth = root
        .children()
        .find(|n| n.tag_name().name() == "annotation" && n.attribute("type") == Some("truth"))
        .map(|n| n.text().unwrap_or("").to_owned())
        .ok_or(Error::MissingTruth)?;
    let traces = root
        .descendants()
        .filter(|n| n.is_element() && n.tag_name().name() == "trace")
        .enumerate()
        .map(|(i, n)| parse_trace(n.text().unwrap_or(""), i))
        .collect::<Result<Vec<_>>>()?;
    if traces.is_empty() {
        return Err(Error::EmptyTraces);
    }
    Ok(InkSample { traces, truth })
}
