//! Comparison methods at matching scale: full fine-tuning of the base
//! model, discriminator-weighted decoding, and gradient-steered decoding.

pub mod discriminator;
pub mod finetune;
pub mod fudge;
pub mod pplm;

pub use discriminator::{
    bow_attribute_loss, train_future_discriminator, BagOfWordsAttribute, DiscTrainConfig,
    FutureDiscriminator,
};
pub use finetune::{finetune, FinetuneConfig};
pub use fudge::{fudge_decode, ConstantScorer, FudgeConfig, FudgeScorer};
pub use pplm::{pplm_decode, PplmAttribute, SteeringConfig};
