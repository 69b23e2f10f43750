//! LaTeX math lexing and the symbol vocabulary.

mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use vocab::{Vocab, EOS, PAD, SOS};

/// Backslash commands accepted by [`tokenize`]. Covers the CROHME alphabet.
pub const SUPPORTED_COMMANDS: &[&str] = &[
    // greek
    "\\alpha", "\\beta", "\\gamma", "\\delta", "\\theta", "\\lambda", "\\mu", "\\pi", "\\sigma",
    "\\phi", "\\Delta",
    // structure
    "\\frac", "\\sqrt",
    // large operators and functions
    "\\sum", "\\int", "\\lim", "\\log", "\\sin", "\\cos", "\\tan",
    // relations and binary operators
    "\\leq", "\\geq", "\\neq", "\\lt", "\\gt", "\\pm", "\\times", "\\div", "\\cdot",
    "\\rightarrow", "\\in", "\\exists", "\\forall",
    // misc
    "\\infty", "\\ldots", "\\prime", "\\left", "\\right",
    // escaped characters
    "\\{", "\\}", "\\|",
];

const PLAIN_SYMBOLS: &str = "+-=<>()[]|/,.!'^_{}:;*";

/// One LaTeX lexeme.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            return Err(Error::UnknownCommand(text));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_command(&self) -> bool {
        self.0.starts_with('\\')
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<&str> for Token {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// A non-empty token sequence with balanced `{`/`}`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Token>", into = "Vec<Token>")]
pub struct TokenSeq(Vec<Token>);

impl TokenSeq {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        check_braces(&tokens)?;
        Ok(TokenSeq(tokens))
    }

    /// Builds a sequence from whitespace-separated token texts.
    pub fn from_spaced(text: &str) -> Result<Self> {
        let tokens = text.split_whitespace().map(Token::new).collect::<Result<Vec<_>>>()?;
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.0.iter()
    }

    /// Token texts joined by single spaces.
    pub fn to_spaced(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(t.as_str());
        }
        out
    }
}

impl std::ops::Index<usize> for TokenSeq {
    type Output = Token;
    fn index(&self, i: usize) -> &Token {
        &self.0[i]
    }
}

impl fmt::Debug for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl TryFrom<Vec<Token>> for TokenSeq {
    type Error = Error;
    fn try_from(v: Vec<Token>) -> Result<Self> {
        TokenSeq::new(v)
    }
}

impl From<TokenSeq> for Vec<Token> {
    fn from(s: TokenSeq) -> Self {
        s.0
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a Token;
    type IntoIter = std::slice::Iter<'a, Token>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

fn check_braces(tokens: &[Token]) -> Result<()> {
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate() {
        match t.as_str() {
            "{" => depth += 1,
            "}" => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| Error::UnbalancedBraces(format!("unmatched `}}` at token {i}")))?;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(Error::UnbalancedBraces(format!("{depth} unclosed `{{`")));
    }
    Ok(())
}

/// Splits a math-mode LaTeX string into tokens.
///
/// Whitespace only separates; it never produces a token. Every backslash
/// sequence must be one of [`SUPPORTED_COMMANDS`].
pub fn tokenize(source: &str) -> Result<TokenSeq> {
    let mut tokens = Vec::new();
    let mut chars = source.char_indices().peekable();
    while let Some((at, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        if c == '\\' {
            let mut cmd = String::from('\\');
            match chars.peek() {
                Some(&(_, n)) if n.is_ascii_alphabetic() => {
                    while let Some(&(_, n)) = chars.peek() {
                        if !n.is_ascii_alphabetic() {
                            break;
                        }
                        cmd.push(n);
                        chars.next();
                    }
                }
                Some(&(_, n)) if !n.is_whitespace() => {
                    cmd.push(n);
                    chars.next();
                }
                _ => return Err(Error::UnknownCommand(cmd)),
            }
            if !SUPPORTED_COMMANDS.contains(&cmd.as_str()) {
                return Err(Error::UnknownCommand(cmd));
            }
            tokens.push(Token(cmd));
        } else if c.is_ascii_alphanumeric() || PLAIN_SYMBOLS.contains(c) {
            tokens.push(Token(c.to_string()));
        } else {
            return Err(Error::UnsupportedCharacter(c, at));
        }
    }
    TokenSeq::new(tokens)
}
