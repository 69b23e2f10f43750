use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::{Token, TokenSeq};
use crate::error::{Error, Result};

pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const PAD: &str = "<pad>";

/// Symbol classes in sorted order followed by the reserved `<sos>`, `<eos>`
/// and `<pad>` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    classes: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Collects the distinct token texts of a corpus.
    pub fn build<'a, I>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TokenSeq>,
    {
        let mut seen = BTreeSet::new();
        let mut any = false;
        for seq in corpus {
            any = true;
            seen.extend(seq.iter().map(|t| t.as_str().to_owned()));
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        Self::from_classes(seen)
    }

    /// Vocabulary over an explicit class set; the classes are sorted and
    /// deduplicated.
    pub fn from_classes<I, S>(classes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = classes.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for c in &set {
            if [SOS, EOS, PAD].contains(&c.as_str()) {
                return Err(Error::MalformedVocab(format!("class `{c}` collides with a reserved entry")));
            }
            Token::new(c.clone()).map_err(|_| Error::MalformedVocab(format!("invalid class {c:?}")))?;
        }
        let mut classes: Vec<String> = set.into_iter().collect();
        classes.extend([SOS, EOS, PAD].map(String::from));
        let index = classes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Ok(Vocab { classes, index })
    }

    /// Number of symbol classes, reserved entries excluded.
    pub fn num_classes(&self) -> usize {
        self.classes.len() - 3
    }

    /// Size of the full id space, reserved entries included.
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sos(&self) -> usize {
        self.num_classes()
    }

    pub fn eos(&self) -> usize {
        self.num_classes() + 1
    }

    pub fn pad(&self) -> usize {
        self.num_classes() + 2
    }

    /// Symbol classes only.
    pub fn classes(&self) -> &[String] {
        &self.classes[..self.num_classes()]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn lookup(&self, id: usize) -> Option<&str> {
        self.classes.get(id).map(String::as_str)
    }

    pub fn encode(&self, seq: &TokenSeq) -> Result<Vec<usize>> {
        seq.iter()
            .map(|t| match self.id(t.as_str()) {
                Some(i) if i < self.num_classes() => Ok(i),
                _ => Err(Error::OutOfVocab(t.to_string())),
            })
            .collect()
    }

    /// Inverse of [`Vocab::encode`]. Reserved ids are rejected.
    pub fn decode(&self, ids: &[usize]) -> Result<TokenSeq> {
        let tokens = ids
            .iter()
            .map(|&id| {
                if id >= self.num_classes() {
                    return Err(Error::IdOutOfRange { id, size: self.num_classes() });
                }
                Ok(Token(self.classes[id].clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        TokenSeq::new(tokens)
    }

    /// One class per line, reserved entries last.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.classes {
            s.push_str(c);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let n = lines.len();
        if n < 4 || lines[n - 3..] != [SOS, EOS, PAD] {
            return Err(Error::MalformedVocab("missing trailing reserved entries".into()));
        }
        let body = &lines[..n - 3];
        if body.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::MalformedVocab("classes must be sorted and unique".into()));
        }
        Self::from_classes(body.iter().copied())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latex::tokenize;

    fn seq(s: &str) -> TokenSeq {
        TokenSeq::from_spaced(s).unwrap()
    }

    #[test]
    fn union_of_classes() {
        let v = Vocab::build([&seq("a"), &seq("a b")]).unwrap();
        assert_eq!(v.classes(), ["a", "b"]);
        assert_eq!(v.len(), 5);
        let v = Vocab::build([&seq("1 + 1")]).unwrap();
        assert_eq!(v.classes(), ["+", "1"]);
    }

    #[test]
    fn reserved_ids_are_distinct_and_last() {
        let v = Vocab::build([&seq("x y")]).unwrap();
        assert_eq!((v.sos(), v.eos(), v.pad()), (2, 3, 4));
        assert_eq!(v.lookup(v.eos()), Some(EOS));
    }

    #[test]
    fn empty_corpus() {
        let none: Vec<TokenSeq> = vec![];
        assert!(matches!(Vocab::build(&none), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn encode_decode() {
        let v = Vocab::from_classes(["a", "b"]).unwrap();
        assert_eq!(v.encode(&seq("a")).unwrap(), [0]);
        assert_eq!(v.decode(&[0]).unwrap(), seq("a"));
        assert!(matches!(v.encode(&seq("c")), Err(Error::OutOfVocab(_))));
        assert!(matches!(v.decode(&[7]), Err(Error::IdOutOfRange { id: 7, .. })));
        assert!(matches!(v.decode(&[v.eos()]), Err(Error::IdOutOfRange { .. })));
        assert!(matches!(v.decode(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn text_round_trip() {
        let v = Vocab::build([&tokenize("\\frac{x^{2}}{y}").unwrap()]).unwrap();
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(Vocab::from_text("a\nb\n").is_err());
        assert!(Vocab::from_text("b\na\n<sos>\n<eos>\n<pad>\n").is_err());
    }
}
