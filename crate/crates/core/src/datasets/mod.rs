//! Synthetic federated populations and the two injectable data bugs.

mod container;
mod glyphs;
mod text;
pub mod vocab;

use serde::{Deserialize, Serialize};

pub use container::{export_population, load_external_federated_images, load_population, Population};
pub use glyphs::{apply_pixel_inversion, image_batch, make_glyph_population, GlyphStyle, Image, ImagePopulation};
pub use text::{
    apply_concat_bug, make_text_population, mark_oov, overall_oov_rate, ConcatStats, Sentence, TextPopulation,
    DEFAULT_VOCAB_SIZE,
};
pub use vocab::{CharVocab, Vocabulary, END, OOV};

pub type ClientId = u64;

/// One user's local data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset<E> {
    pub id: ClientId,
    pub style: Style,
    pub examples: Vec<E>,
}

impl<E> ClientDataset<E> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Per-user generation parameters shared by all of that user's examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Style {
    None,
    Glyph(GlyphStyle),
}

/// Which bug to inject and how widely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BugSpec {
    pub kind: BugKind,
    /// Fraction of users (inversion) or sentences (concatenation).
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BugKind {
    PixelInversion,
    TokenConcatenation,
}

impl BugSpec {
    pub fn validate(&self) -> crate::Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(crate::Error::invalid(format!(
                "bug fraction must be in [0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }
}
