//! PerturbForge: a desk-scale toolkit for studying gradient-based adversarial
//! attacks on small image-spam classifiers.
//!
//! The crate bundles everything needed to run the experiments end to end on a
//! laptop: a minimal reverse-mode tensor engine, MLP/CNN classifier training,
//! image preprocessing (bilinear resize, zero-parameter Canny, concat
//! preprocessing), a synthetic spam/ham corpus generator, four adversarial
//! attacks (FGSM, C&W L2, DeepFool, universal perturbation), an
//! activation-maximization pipeline that plants "natural perturbations" in
//! spam images under Grad-CAM masks, and a statistics suite (ROC/AUC,
//! Mann-Whitney U, density histograms, averaged CAM heatmaps).
//!
//! The `perturbforge` binary exposes each stage as a subcommand; see the
//! `cli` module.

pub mod attacks;
pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod imaging;
pub mod inceptionism;
pub mod nn;
pub mod pipeline;
pub mod tensor;

pub use attacks::{AttackReport, CwConfig, DeepFoolConfig, FgsmConfig, UniversalConfig};
pub use corpus::{CorpusManifest, Label, Split, SyntheticSpec};
pub use imaging::ImageBuffer;
pub use nn::{Arch, Checkpoint, ModelSpec, TrainConfig};
pub use tensor::{Tape, Tensor};
