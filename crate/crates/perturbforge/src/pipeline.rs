//! End-to-end construction of the modified adversarial spam corpus.
//!
//! For every spam image: Grad-CAM on the normal classifier, inverted binary
//! mask, a randomly assigned natural perturbation blended into the masked
//! region, then the shared universal perturbation. Natural perturbations are
//! dreamed from the ham train split against the inverted model; the
//! universal perturbation is refit on the natural-perturbed spam set by
//! default (a stored artifact can be reused instead).

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::attacks::{
    apply_perturbation, universal_perturbation, AttackError, PerturbationArtifact,
    UniversalConfig, UniversalStats,
};
use crate::corpus::{
    save_manifest, CorpusError, CorpusManifest, Label, ManifestEntry, Split,
};
use crate::evaluation::{l2_distance, EvalError};
use crate::imaging::{load_image, resize_bilinear, save_image, ImageBuffer, ImagingError};
use crate::inceptionism::{
    apply_natural, blend_batch, cam_to_mask, deep_dream, grad_cam, DreamConfig,
    InceptionismError, NaturalPerturbation, DEFAULT_BLEND_WEIGHTS,
};
use crate::nn::{prepare_input, Model, ModelError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Inceptionism(#[from] InceptionismError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Which spam entries to process; None processes every spam image.
    pub split: Option<Split>,
    pub universal: UniversalConfig,
    pub dream: DreamConfig,
    pub alpha: f32,
    pub refit_universal: bool,
    /// Required when refit_universal is false.
    pub universal_artifact: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl PipelineConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            split: None,
            universal: UniversalConfig::default(),
            dream: DreamConfig::default(),
            alpha: 0.5,
            refit_universal: true,
            universal_artifact: None,
            seed: 0,
            out_dir: out_dir.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StageSeconds {
    pub cam: f64,
    pub mask: f64,
    pub natural: f64,
    pub universal_apply: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineRecord {
    /// Manifest-relative path of the source spam image.
    pub original: PathBuf,
    /// Output-relative path of the finished adversarial image.
    pub output: Option<PathBuf>,
    /// Output-relative path of the natural-perturbation-only intermediate.
    pub natural_only: Option<PathBuf>,
    pub l2: f64,
    pub stages: StageSeconds,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct PipelineOutput {
    /// Manifest of the finished adversarial corpus, rooted at the out dir.
    pub manifest: CorpusManifest,
    pub records: Vec<PipelineRecord>,
    pub failures: usize,
    pub artifact: Option<PerturbationArtifact>,
    pub artifact_hash: Option<String>,
    pub universal_stats: Option<UniversalStats>,
    pub universal_fit_seconds: f64,
    pub dream_seconds: f64,
    pub naturals: Vec<NaturalPerturbation>,
}

struct NaturalStage {
    entry_path: PathBuf,
    image: ImageBuffer,
    rel_natural: PathBuf,
    split: Split,
    stages: StageSeconds,
    l2_started: ImageBuffer,
}

/// Generate natural perturbations from the ham train split: dream every ham
/// image, then blend consecutive batches of four.
fn generate_naturals(
    inverted: &Model,
    manifest: &CorpusManifest,
    cfg: &PipelineConfig,
) -> Result<Vec<NaturalPerturbation>, PipelineError> {
    let ham = manifest.select(Some(Split::Train), Some(Label::Ham));
    if ham.len() < 4 {
        return Err(PipelineError::InvalidConfig(format!(
            "natural perturbations need at least 4 ham train images, got {}",
            ham.len()
        )));
    }
    let [h, w, _] = inverted.spec.input_shape;
    let dreams: Vec<(PathBuf, ImageBuffer)> = ham
        .par_iter()
        .map(|entry| -> Result<_, PipelineError> {
            let img = load_image(manifest.resolve(entry))?;
            let sized = if img.height() == h && img.width() == w {
                img
            } else {
                resize_bilinear(&img, h, w)?
            };
            let outcome = deep_dream(inverted, &sized, &cfg.dream)?;
            Ok((entry.path.clone(), outcome.image))
        })
        .collect::<Result<Vec<_>, _>>()?;
    dreams
        .chunks_exact(4)
        .map(|chunk| {
            let images: Vec<ImageBuffer> = chunk.iter().map(|(_, img)| img.clone()).collect();
            let sources: Vec<PathBuf> = chunk.iter().map(|(p, _)| p.clone()).collect();
            Ok(blend_batch(&images, &DEFAULT_BLEND_WEIGHTS, sources)?)
        })
        .collect()
}

fn write_provenance(
    naturals: &[NaturalPerturbation],
    rel_paths: &[PathBuf],
    out_dir: &Path,
) -> Result<(), PipelineError> {
    #[derive(Serialize)]
    struct Line<'a> {
        file: &'a Path,
        sources: &'a [PathBuf],
        weights: &'a [f32],
    }
    let mut text = String::new();
    for (np, rel) in naturals.iter().zip(rel_paths) {
        let line = Line {
            file: rel,
            sources: &np.sources,
            weights: &np.weights,
        };
        text.push_str(&serde_json::to_string(&line).expect("provenance serializes"));
        text.push('\n');
    }
    let path = out_dir.join("natural").join("provenance.jsonl");
    std::fs::write(&path, text).map_err(|source| PipelineError::Io { path, source })
}

/// Run the full pipeline. Per-image failures are recorded and skipped; the
/// pipeline only fails outright on configuration or batch-stage errors.
pub fn build_adversarial_corpus(
    base_cnn: &Model,
    inverted_cnn: &Model,
    surrogate: &Model,
    manifest: &CorpusManifest,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(PipelineError::InvalidConfig(format!(
            "alpha must lie in [0, 1], got {}",
            cfg.alpha
        )));
    }
    if !cfg.refit_universal && cfg.universal_artifact.is_none() {
        return Err(PipelineError::InvalidConfig(
            "a stored universal artifact is required when refitting is disabled".into(),
        ));
    }
    let out_dir = &cfg.out_dir;
    for sub in ["adversarial", "natural", "natural_spam", "perturbations", "reports"] {
        let p = out_dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|source| PipelineError::Io { path: p, source })?;
    }

    let spam: Vec<&ManifestEntry> = manifest.select(cfg.split, Some(Label::Spam));
    let mut output_manifest = CorpusManifest::new(
        format!("{}-adversarial", manifest.corpus_id),
        out_dir.clone(),
    );
    if spam.is_empty() {
        return Ok(PipelineOutput {
            manifest: output_manifest,
            records: Vec::new(),
            failures: 0,
            artifact: None,
            artifact_hash: None,
            universal_stats: None,
            universal_fit_seconds: 0.0,
            dream_seconds: 0.0,
            naturals: Vec::new(),
        });
    }

    // Stage 1: natural perturbations from dreamified ham.
    let dream_start = Instant::now();
    let naturals = generate_naturals(inverted_cnn, manifest, cfg)?;
    let dream_seconds = dream_start.elapsed().as_secs_f64();
    let natural_rels: Vec<PathBuf> = (0..naturals.len())
        .map(|i| PathBuf::from(format!("natural/natural_{i:04}.png")))
        .collect();
    for (np, rel) in naturals.iter().zip(&natural_rels) {
        save_image(&np.image, out_dir.join(rel))?;
    }
    write_provenance(&naturals, &natural_rels, out_dir)?;

    // Natural-perturbation assignment is drawn up front in entry order so
    // parallel execution cannot perturb it.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks: Vec<usize> = spam
        .iter()
        .map(|_| rng.gen_range(0..naturals.len()))
        .collect();

    let [sh, sw, _] = surrogate.spec.input_shape;

    // Stage 2: cam -> mask -> natural overlay, per spam image.
    let staged: Vec<Result<NaturalStage, (PathBuf, String)>> = spam
        .par_iter()
        .zip(&picks)
        .map(|(entry, &pick)| {
            let run = || -> Result<NaturalStage, PipelineError> {
                let mut stages = StageSeconds::default();
                let total_start = Instant::now();
                let img = load_image(manifest.resolve(entry))?;
                let img = if img.height() == sh && img.width() == sw {
                    img
                } else {
                    resize_bilinear(&img, sh, sw)?
                };

                let t = Instant::now();
                let prepared = prepare_input(&base_cnn.spec, &img)?;
                let cam = grad_cam(base_cnn, &prepared)?;
                stages.cam = t.elapsed().as_secs_f64();

                let t = Instant::now();
                let mask = cam_to_mask(&cam, sh, sw)?;
                stages.mask = t.elapsed().as_secs_f64();

                let t = Instant::now();
                let overlaid = apply_natural(&img, &naturals[pick], &mask, cfg.alpha)?;
                stages.natural = t.elapsed().as_secs_f64();

                let stem = entry
                    .path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_else(|| "image".into());
                let rel_natural = PathBuf::from(format!("natural_spam/{stem}.png"));
                save_image(&overlaid, out_dir.join(&rel_natural))?;
                stages.total = total_start.elapsed().as_secs_f64();
                Ok(NaturalStage {
                    entry_path: entry.path.clone(),
                    image: overlaid,
                    rel_natural,
                    split: entry.split,
                    stages,
                    l2_started: img,
                })
            };
            run().map_err(|e| (entry.path.clone(), e.to_string()))
        })
        .collect();

    let mut failures: Vec<(PathBuf, String)> = Vec::new();
    let mut survivors: Vec<NaturalStage> = Vec::new();
    for st in staged {
        match st {
            Ok(s) => survivors.push(s),
            Err(f) => failures.push(f),
        }
    }

    // Stage 3: one universal perturbation shared by every output.
    let fit_start = Instant::now();
    let (artifact, universal_stats) = if cfg.refit_universal {
        let fit_set: Vec<(ImageBuffer, Label)> = survivors
            .iter()
            .map(|s| (s.image.clone(), Label::Spam))
            .collect();
        if fit_set.is_empty() {
            return Err(PipelineError::InvalidConfig(
                "every spam image failed before the universal fit".into(),
            ));
        }
        let (artifact, stats) = universal_perturbation(surrogate, &fit_set, &cfg.universal)?;
        (artifact, Some(stats))
    } else {
        let path = cfg.universal_artifact.as_ref().expect("validated above");
        (PerturbationArtifact::load(path)?, None)
    };
    let universal_fit_seconds = fit_start.elapsed().as_secs_f64();
    artifact.save(out_dir.join("perturbations/universal.uprt"))?;
    let artifact_hash = artifact.content_hash();

    // Stage 4: apply v, save, record.
    let finished: Vec<Result<(PipelineRecord, ManifestEntry), (PathBuf, String)>> = survivors
        .par_iter()
        .map(|s| {
            let run = || -> Result<(PipelineRecord, ManifestEntry), PipelineError> {
                let mut stages = s.stages;
                let t = Instant::now();
                let final_img = apply_perturbation(&s.image, &artifact.tensor)?;
                stages.universal_apply = t.elapsed().as_secs_f64();
                stages.total += stages.universal_apply;

                let stem = s
                    .entry_path
                    .file_stem()
                    .map(|st| st.to_string_lossy().to_string())
                    .unwrap_or_else(|| "image".into());
                let rel_out = PathBuf::from(format!("adversarial/{stem}.png"));
                save_image(&final_img, out_dir.join(&rel_out))?;
                let l2 = l2_distance(&s.l2_started, &final_img)? as f64;
                let record = PipelineRecord {
                    original: s.entry_path.clone(),
                    output: Some(rel_out.clone()),
                    natural_only: Some(s.rel_natural.clone()),
                    l2,
                    stages,
                    error: None,
                };
                let entry = ManifestEntry {
                    path: rel_out,
                    label: Label::Spam,
                    split: s.split,
                };
                Ok((record, entry))
            };
            run().map_err(|e| (s.entry_path.clone(), e.to_string()))
        })
        .collect();

    let mut records: Vec<PipelineRecord> = Vec::new();
    for item in finished {
        match item {
            Ok((record, entry)) => {
                output_manifest.entries.push(entry);
                records.push(record);
            }
            Err(f) => failures.push(f),
        }
    }
    for (path, error) in &failures {
        records.push(PipelineRecord {
            original: path.clone(),
            output: None,
            natural_only: None,
            l2: 0.0,
            stages: StageSeconds::default(),
            error: Some(error.clone()),
        });
    }
    save_manifest(&output_manifest, out_dir.join("manifest.jsonl"))?;

    Ok(PipelineOutput {
        manifest: output_manifest,
        records,
        failures: failures.len(),
        artifact: Some(artifact),
        artifact_hash: Some(artifact_hash),
        universal_stats,
        universal_fit_seconds,
        dream_seconds,
        naturals,
    })
}

/// Mean seconds per stage over the successful records.
pub fn stage_timings(records: &[PipelineRecord]) -> Option<StageSeconds> {
    let ok: Vec<&PipelineRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    if ok.is_empty() {
        return None;
    }
    let n = ok.len() as f64;
    Some(StageSeconds {
        cam: ok.iter().map(|r| r.stages.cam).sum::<f64>() / n,
        mask: ok.iter().map(|r| r.stages.mask).sum::<f64>() / n,
        natural: ok.iter().map(|r| r.stages.natural).sum::<f64>() / n,
        universal_apply: ok.iter().map(|r| r.stages.universal_apply).sum::<f64>() / n,
        total: ok.iter().map(|r| r.stages.total).sum::<f64>() / n,
    })
}
