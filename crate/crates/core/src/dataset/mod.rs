//! Training data: InkML ingestion, stroke rasterization, the synthetic
//! expression corpus and its renderer, and the on-disk manifest format.

mod font;
mod inkml;
mod manifest;
mod pgm;
mod raster;
mod render;
mod synth;

use crate::counting::{count_vector, CountVector};
use crate::error::{Error, Result};
use crate::latex::{TokenSeq, Vocab};
use crate::posforest::{encode_position_labels, PositionLabelSeq};

pub use font::{glyph, GLYPH_H, GLYPH_W};
pub use inkml::{parse_inkml, InkSample};
pub use manifest::{load_manifest, write_manifest, Dataset, ManifestRecord, MANIFEST_FILE};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use raster::{rasterize, rasterize_with, DEFAULT_THICKNESS};
pub use render::{render_synthetic, IMAGE_HEIGHT, MARGIN};
pub use synth::{overfit_set, synth_corpus, synth_expression, synth_vocab, GRAMMAR_VERSION, OVERFIT_SEED, SYNTH_TERMINALS};

/// A grayscale image, row-major, values in `[0, 1]` with ink high.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::MalformedImage(format!(
                "{height}x{width} image with {} pixels",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::MalformedImage(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image { height, width, pixels })
    }

    pub fn blank(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, v: f32) {
        self.pixels[row * self.width + col] = v;
    }

    /// Number of pixels at or above 0.5.
    pub fn ink(&self) -> usize {
        self.pixels.iter().filter(|&&v| v >= 0.5).count()
    }

    /// Nearest-neighbour resample to `height × width`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Image {
        let mut out = Image::blank(height.max(1), width.max(1));
        for r in 0..out.height {
            let sr = (r * self.height / out.height).min(self.height - 1);
            for c in 0..out.width {
                let sc = (c * self.width / out.width).min(self.width - 1);
                out.set(r, c, self.get(sr, sc));
            }
        }
        out
    }

    /// Places the image on a blank canvas at `(top, left)`, clipping.
    pub fn pad_to(&self, height: usize, width: usize, top: usize, left: usize) -> Image {
        let mut out = Image::blank(height, width);
        for r in 0..self.height.min(height.saturating_sub(top)) {
            for c in 0..self.width.min(width.saturating_sub(left)) {
                out.set(r + top, c + left, self.get(r, c));
            }
        }
        out
    }
}

/// One supervised example. Build with [`ExprSample::new`] so the labels and
/// counts always agree with the tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprSample {
    pub image: Image,
    pub tokens: TokenSeq,
    pub labels: PositionLabelSeq,
    pub counts: CountVector,
}

impl ExprSample {
    pub fn new(image: Image, tokens: TokenSeq, vocab: &Vocab) -> Result<Self> {
        let labels = encode_position_labels(&tokens)?;
        let counts = count_vector(&tokens, vocab)?;
        Ok(ExprSample {
            image,
            tokens,
            labels,
            counts,
        })
    }

    /// A rendered synthetic sample.
    pub fn synthetic(tokens: TokenSeq, vocab: &Vocab) -> Result<Self> {
        let image = render_synthetic(&tokens)?;
        Self::new(image, tokens, vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_validates_range() {
        assert!(Image::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert_eq!(Image::new(1, 2, vec![0.0, 1.0]).unwrap().ink(), 1);
    }

    #[test]
    fn resize_keeps_binary_values() {
        let img = Image::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let big = img.resize_nearest(4, 4);
        assert_eq!(big.ink(), 8);
        assert_eq!(big.resize_nearest(2, 2), img);
    }
}
