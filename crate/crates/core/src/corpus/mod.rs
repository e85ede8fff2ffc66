//! Tokenization, synthetic scene and style-corpus generation, and the
//! on-disk corpus and feature-cache formats.

pub mod features;
pub mod styles;
pub mod textfile;
pub mod vocab;
pub mod world;

pub use features::{load_feature_file, write_feature_file, FeatureMap, ModalityFeature};
pub use styles::{
    generate_style_corpus, style_prompt, StyledDocument, DEFAULT_TEMPLATE_SET, STYLES,
};
pub use textfile::{read_corpus, write_corpus, CorpusLine};
pub use vocab::{build_vocabulary, TokenId, TokenSequence, Vocabulary, EOS_ID, UNK_ID};
pub use world::{generate_shapeworld, Scene, World, WORLD_NAMES};
