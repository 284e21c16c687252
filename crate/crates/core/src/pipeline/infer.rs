use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::clustering::{kmeans, masks_from_assignments};
use crate::dsp::{read_wav, stft, write_wav, AudioBuffer, StftConfig};
use crate::error::{Error, Result};
use crate::masking::{ipsm, reconstruct, MaskSet};
use crate::metrics::{mixture_sdr, score, AssignMode, CorpusReport, UtteranceRecord};
use crate::neural::{Checkpoint, Stage};
use crate::pipeline::data::Prepared;

/// Mask-network inference: STFT, normalize, embed, estimate masks,
/// reconstruct with the mixture phase.
pub fn separate(ckpt: &Checkpoint, mixture: &AudioBuffer, cfg: &StftConfig) -> Result<Vec<AudioBuffer>> {
    Ok(separate_with_masks(ckpt, mixture, cfg)?.0)
}

fn separate_with_masks(ckpt: &Checkpoint, mixture: &AudioBuffer, cfg: &StftConfig) -> Result<(Vec<AudioBuffer>, MaskSet)> {
    if ckpt.stage == Stage::Dc {
        return Err(Error::UnsupportedStage(
            "embedding-stage checkpoints have an untrained mask network; use K-means separation".into(),
        ));
    }
    let spec = stft(mixture, cfg)?;
    let feat = ckpt.norm.normalize(&ckpt.model.arch.input_features(spec.magnitude()))?;
    let masks = ckpt.model.masks(&feat)?;
    Ok((reconstruct(&spec, &masks)?, masks))
}

/// Deep-clustering inference: K-means on the embeddings, binary masks.
pub fn separate_dc_baseline(ckpt: &Checkpoint, mixture: &AudioBuffer, cfg: &StftConfig, seed: u64, max_iter: usize) -> Result<Vec<AudioBuffer>> {
    if ckpt.stage != Stage::Dc {
        return Err(Error::UnsupportedStage(format!(
            "K-means separation expects an embedding-stage checkpoint, got {}",
            ckpt.stage
        )));
    }
    let spec = stft(mixture, cfg)?;
    let feat = ckpt.norm.normalize(&ckpt.model.arch.input_features(spec.magnitude()))?;
    let v = ckpt.model.embed(&feat)?;
    let k = kmeans(&v, ckpt.model.arch.sources, seed, max_iter, 1e-9)?;
    let masks = masks_from_assignments(&k, spec.frames(), spec.bins())?;
    reconstruct(&spec, &masks)
}

/// Reads a mixture WAV and writes `<stem>_s1.wav … <stem>_sS.wav` into `out_dir`.
pub fn separate_file(ckpt: &Checkpoint, input: &Path, out_dir: &Path, cfg: &StftConfig, sample_rate: u32, kmeans_iter: usize) -> Result<Vec<PathBuf>> {
    let mixture = read_wav(input, sample_rate)?;
    let outputs = if ckpt.stage == Stage::Dc {
        separate_dc_baseline(ckpt, &mixture, cfg, 0, kmeans_iter)?
    } else {
        separate(ckpt, &mixture, cfg)?
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("mix");
    outputs
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let p = out_dir.join(format!("{stem}_s{}.wav", k + 1));
            write_wav(&p, a)?;
            Ok(p)
        })
        .collect()
}

/// A way of producing source estimates for a prepared utterance.
#[derive(Clone, Copy)]
pub enum System<'a> {
    Model(&'a Checkpoint),
    DcKmeans(&'a Checkpoint, u64, usize),
    /// Unclamped ideal phase-sensitive masks.
    IpsmOracle,
    /// The mixture itself as every estimate.
    Mixture,
}

pub fn estimates(system: System<'_>, utt: &Prepared, cfg: &StftConfig) -> Result<Vec<AudioBuffer>> {
    match system {
        System::Model(c) => separate(c, &utt.mixture, cfg),
        System::DcKmeans(c, seed, iters) => separate_dc_baseline(c, &utt.mixture, cfg, seed, iters),
        System::IpsmOracle => reconstruct(&utt.spec, &ipsm(&utt.sources, &utt.spec, false)?),
        System::Mixture => Ok(vec![utt.mixture.clone(); utt.references.len()]),
    }
}

/// Scores `system` on every utterance in each requested mode.
pub fn evaluate_system(system: System<'_>, name: &str, utts: &[Prepared], cfg: &StftConfig, modes: &[AssignMode]) -> Result<CorpusReport> {
    let per = utts
        .par_iter()
        .map(|u| {
            let est = estimates(system, u, cfg)?;
            let mix = mixture_sdr(&u.mixture, &u.references)?;
            modes
                .iter()
                .map(|&m| {
                    let s = score(&est, &u.references, m)?;
                    Ok(UtteranceRecord::new(&u.id, name, u.split.as_str(), &s, mix.clone()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<UtteranceRecord> = Vec::new();
    for &m in modes {
        records.extend(per.iter().flatten().filter(|r| r.mode == m).cloned());
    }
    Ok(CorpusReport::from_records(records))
}
