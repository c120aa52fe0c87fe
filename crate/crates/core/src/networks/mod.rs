//! Generators, discriminator, feature extractors and their building blocks.

pub mod backbone;
pub mod discriminator;
pub mod flex_conv;
pub mod generator;
pub mod layers;
pub mod weights;

pub use backbone::{BackboneKind, FeatureExtractor};
pub use discriminator::{PatchDiscriminator, PATCH_STRIDE};
pub use flex_conv::FlexConv;
pub use generator::{Direction, Generator, GeneratorConfig};
pub use layers::{Conv2d, FrozenBatchNorm, Init};
