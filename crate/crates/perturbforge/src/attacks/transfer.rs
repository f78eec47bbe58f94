//! Transfer protocol: adversarial images crafted on a surrogate are
//! preprocessed exactly like clean data and scored on the base model.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::corpus::Label;
use crate::evaluation::l2_distance;
use crate::imaging::ImageBuffer;
use crate::nn::Model;

use super::{AttackError, AttackReport, ExampleRecord};

/// One attacked example ready for base-model scoring.
pub struct TransferExample {
    /// Manifest-relative path of the clean source image.
    pub original_rel: PathBuf,
    /// Run-relative path where the adversarial image was stored.
    pub adversarial_rel: PathBuf,
    pub original: ImageBuffer,
    pub adversarial: ImageBuffer,
    pub true_label: Label,
    /// Whether the attack fooled the surrogate it was crafted on.
    pub surrogate_success: bool,
    pub seconds: f64,
}

/// Classify every adversarial image with the base model (after its standard
/// input preprocessing) and aggregate accuracy, L2 distance, and timing.
pub fn run_transfer_evaluation(
    examples: &[TransferExample],
    base: &Model,
) -> Result<AttackReport, AttackError> {
    let scored: Vec<(ExampleRecord, bool)> = examples
        .par_iter()
        .map(|ex| -> Result<(ExampleRecord, bool), AttackError> {
            let (class, _) = base.predict_image(&ex.adversarial)?;
            let base_label = base.spec.label_of(class);
            let record = ExampleRecord {
                original: ex.original_rel.clone(),
                adversarial: ex.adversarial_rel.clone(),
                success: ex.surrogate_success,
                base_label,
                l2: l2_distance(&ex.original, &ex.adversarial)? as f64,
                seconds: ex.seconds,
            };
            let correct = base_label == ex.true_label;
            Ok((record, correct))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (records, correct): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    Ok(AttackReport::from_records(records, &correct))
}
