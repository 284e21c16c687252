use rayon::prelude::*;

use crate::datagen::{stored_utterance, utterance_id, CorpusConfig, Manifest, Split, Utterance};
use crate::dsp::{stft, AudioBuffer, Spectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::masking::{dominant_membership, psa_targets};
use crate::matrix::Matrix;

/// One utterance with everything training and scoring need.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub split: Split,
    pub mixture: AudioBuffer,
    pub references: Vec<AudioBuffer>,
    pub spec: Spectrogram,
    pub sources: Vec<Spectrogram>,
    /// Phase-sensitive targets, one `T × F` matrix per source.
    pub targets: Vec<Matrix>,
    /// Dense `TF × S` dominant-source membership.
    pub membership: Matrix,
}

impl Prepared {
    pub fn new(id: String, split: Split, utt: Utterance, cfg: &StftConfig) -> Result<Self> {
        let spec = stft(&utt.mixture, cfg)?;
        let sources = utt
            .references
            .iter()
            .map(|r| stft(r, cfg))
            .collect::<Result<Vec<_>>>()?;
        let targets = psa_targets(&sources, &spec)?;
        let membership = dominant_membership(&sources)?.to_dense();
        Ok(Self {
            id,
            split,
            mixture: utt.mixture,
            references: utt.references,
            spec,
            sources,
            targets,
            membership,
        })
    }

    pub fn magnitude(&self) -> &Matrix {
        self.spec.magnitude()
    }
}

/// Train / dev / test utterances.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Prepared>,
    pub dev: Vec<Prepared>,
    pub test: Vec<Prepared>,
    pub stft: StftConfig,
}

impl Dataset {
    fn assemble(mut all: Vec<Prepared>, stft: &StftConfig) -> Result<Self> {
        let mut take = |s: Split| -> Vec<Prepared> {
            let (hit, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut all).into_iter().partition(|p| p.split == s);
            all = rest;
            hit
        };
        let train = take(Split::Train);
        let dev = take(Split::Dev);
        let test = take(Split::Test);
        if train.is_empty() {
            return Err(Error::InvalidConfig("corpus has no training utterances".into()));
        }
        Ok(Self {
            train,
            dev,
            test,
            stft: stft.clone(),
        })
    }

    /// Synthesizes the corpus in memory; identical to reading back what
    /// [`crate::datagen::build_corpus`] writes.
    pub fn generate(corpus: &CorpusConfig, stft: &StftConfig) -> Result<Self> {
        corpus.validate()?;
        let jobs: Vec<(Split, usize)> = Split::ALL
            .iter()
            .flat_map(|&s| (0..corpus.count(s)).map(move |i| (s, i)))
            .collect();
        let all = jobs
            .par_iter()
            .map(|&(split, i)| Prepared::new(utterance_id(split, i), split, stored_utterance(corpus, split, i)?, stft))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(all, stft)
    }

    pub fn from_manifest(manifest: &Manifest, sample_rate: u32, stft: &StftConfig) -> Result<Self> {
        manifest.check_split_disjoint()?;
        let all = manifest
            .records
            .par_iter()
            .map(|rec| Prepared::new(rec.id.clone(), rec.split, manifest.load_utterance(rec, sample_rate)?, stft))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(all, stft)
    }

    pub fn split(&self, split: Split) -> &[Prepared] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}
