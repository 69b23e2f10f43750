//! Line-delimited JSON manifests.
//!
//! One record per line:
//!
//! ```text
//! {"image_path":"images/000000.pgm","tokens":["x","^","{","2","}"],
//!  "depths":[0,1,1,1,1],"relpos":["middle","upper",...],"counts":{"2":1,"^":1,...}}
//! ```
//!
//! `image_path` is relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::{read_pgm, write_pgm};
use super::{ExprSample, Image};
use crate::error::{Error, Result};
use crate::latex::{TokenSeq, Vocab};
use crate::posforest::{encode_position_labels, RelPos};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_path: String,
    pub tokens: TokenSeq,
    pub depths: Vec<usize>,
    pub relpos: Vec<RelPos>,
    pub counts: BTreeMap<String, u32>,
}

impl ManifestRecord {
    fn from_sample(sample: &ExprSample, vocab: &Vocab, image_path: String) -> Self {
        ManifestRecord {
            image_path,
            tokens: sample.tokens.clone(),
            depths: sample.labels.depths.clone(),
            relpos: sample.labels.relpos.clone(),
            counts: sample
                .counts
                .nonzero(vocab)
                .map(|(k, c)| (k.to_owned(), c as u32))
                .collect(),
        }
    }

    /// Checks the stored labels and counts against the tokens.
    fn validate(&self) -> std::result::Result<(), String> {
        let labels = encode_position_labels(&self.tokens).map_err(|e| e.to_string())?;
        if labels.depths != self.depths || labels.relpos != self.relpos {
            return Err("position labels disagree with the tokens".into());
        }
        let mut tally = BTreeMap::new();
        for t in &self.tokens {
            *tally.entry(t.as_str().to_owned()).or_insert(0u32) += 1;
        }
        if tally != self.counts {
            return Err("counts disagree with the tokens".into());
        }
        Ok(())
    }
}

/// A loaded manifest. Images are read on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image(&self, i: usize) -> Result<Image> {
        read_pgm(&self.root.join(&self.records[i].image_path))
    }

    pub fn sample(&self, i: usize, vocab: &Vocab) -> Result<ExprSample> {
        ExprSample::new(self.image(i)?, self.records[i].tokens.clone(), vocab)
    }

    pub fn samples(&self, vocab: &Vocab) -> Result<Vec<ExprSample>> {
        (0..self.len()).map(|i| self.sample(i, vocab)).collect()
    }

    /// The vocabulary of every token in the manifest.
    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::build(self.records.iter().map(|r| &r.tokens))
    }
}

/// Writes `dir/manifest.jsonl` and one PGM per sample under `dir/images`.
/// Returns the manifest path.
pub fn write_manifest(samples: &[ExprSample], vocab: &Vocab, dir: &Path) -> Result<PathBuf> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut text = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("images/{i:06}.pgm");
        write_pgm(&s.image, &dir.join(&rel))?;
        let rec = ManifestRecord::from_sample(s, vocab, rel);
        serde_json::to_writer(&mut text, &rec).expect("records serialize");
        text.push(b'\n');
    }
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a manifest file, or `manifest.jsonl` inside a directory. Blank
/// lines are skipped; line numbers in errors are 1-based.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| Error::CorruptRecord { line: i + 1, reason };
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        rec.validate().map_err(corrupt)?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Dataset { root, records })
}
