//! The controlled-generation framework: small trainable side networks fused
//! with the frozen base network.
//!
//! The base supplies last hidden states h_b per response position; a side
//! network encodes the control attribute into side representations h_s; the
//! fused state is `h = alpha * h_b + (1 - alpha) * h_s`, whose head
//! distribution is trained with a class-conditional LM loss plus a
//! task-specific control loss weighted by lambda.

pub mod knowledge;
pub mod label;
pub mod train;

pub use knowledge::{coverage_loss_graph, mix_copy, KnowledgeSideNet};
pub use label::{AttributeClassifier, LabelSideNet};
pub use train::{
    generate_controlled, pretrain_classifier, side_teacher_forced_nll, train_side,
    ClassifierTrainConfig, DecodeOverrides, SideNet, SideTrainConfig, StepTrace, TrainedSide,
};
