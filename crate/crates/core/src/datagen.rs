//! Synthetic two-talker corpora.
//!
//! Each "speaker" is a harmonic voice model: an F0 band, a fixed formant
//! envelope drawn from the speaker's formant seed, and a syllable-rate
//! amplitude modulation. Utterances mix two distinct speakers at an SNR drawn
//! from `[snr_db_min, snr_db_max]`. Train and dev draw from one speaker pool;
//! test draws from a disjoint pool (open condition).

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{self, quantize, read_wav, AudioBuffer};
use crate::error::{Error, Result};

pub const MIN_DURATION_S: f64 = 0.5;

/// Deterministic child seed from a master seed, a tag and an index.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: String,
    pub f0_range: (f64, f64),
    pub formant_seed: u64,
    pub modulation_rate: f64,
}

impl SpeakerProfile {
    /// Draws a profile: F0 center log-uniform in [90, 280] Hz with a ±15% band,
    /// modulation rate in [3, 6] Hz.
    pub fn generate(id: impl Into<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = (rng.gen_range(90f64.ln()..280f64.ln())).exp();
        Self {
            id: id.into(),
            f0_range: (center * 0.85, center * 1.15),
            formant_seed: rng.gen(),
            modulation_rate: rng.gen_range(3.0..6.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.f0_range;
        if !(lo > 60.0 && hi < 400.0 && lo < hi) {
            return Err(Error::InvalidConfig(format!(
                "speaker {}: f0 range ({lo}, {hi}) outside (60, 400) Hz",
                self.id
            )));
        }
        if self.modulation_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "speaker {}: non-positive modulation rate",
                self.id
            )));
        }
        Ok(())
    }

    fn formants(&self) -> [(f64, f64, f64); 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.formant_seed);
        [
            (rng.gen_range(300.0..800.0), rng.gen_range(80.0..160.0), 1.0),
            (rng.gen_range(900.0..2200.0), rng.gen_range(100.0..200.0), rng.gen_range(0.4..0.9)),
            (rng.gen_range(2300.0..3500.0), rng.gen_range(150.0..250.0), rng.gen_range(0.2..0.5)),
        ]
    }
}

fn envelope(formants: &[(f64, f64, f64); 3], freq: f64) -> f64 {
    let peaks: f64 = formants
        .iter()
        .map(|&(c, bw, g)| g / (1.0 + ((freq - c) / bw).powi(2)))
        .sum();
    0.05 / (1.0 + freq / 1000.0) + peaks
}

/// Harmonic voice with a random F0 contour inside the profile band,
/// syllable-rate amplitude modulation and short pauses; unit RMS.
pub fn synth_source(
    profile: &SpeakerProfile,
    duration_s: f64,
    seed: u64,
    sample_rate: u32,
) -> Result<AudioBuffer> {
    profile.validate()?;
    if duration_s < MIN_DURATION_S {
        return Err(Error::InvalidConfig(format!(
            "duration {duration_s} s below {MIN_DURATION_S} s"
        )));
    }
    let sr = f64::from(sample_rate);
    let n = (duration_s * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let formants = profile.formants();
    let (lo, hi) = profile.f0_range;

    // F0 control points every 100 ms, cosine-interpolated.
    let step = 0.1 * sr;
    let n_ctrl = (n as f64 / step).ceil() as usize + 2;
    let ctrl: Vec<f64> = (0..n_ctrl).map(|_| rng.gen_range(lo..hi)).collect();

    let mod_phase = rng.gen_range(0.0..2.0 * PI);
    let mut pauses = Vec::new();
    for _ in 0..rng.gen_range(1..=2) {
        let len = rng.gen_range(0.06..0.15) * sr;
        let start = rng.gen_range(0.0..(n as f64 - len).max(1.0));
        pauses.push((start, start + len));
    }
    let ramp = 0.01 * sr;
    let max_harm = ((sr / 2.0 - 100.0) / lo).floor() as usize;
    let harm_phase: Vec<f64> = (0..max_harm).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();

    let mut phase = 0.0;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let pos = i as f64 / step;
        let k = pos.floor() as usize;
        let frac = pos - k as f64;
        let w = 0.5 - 0.5 * (PI * frac).cos();
        let f0 = ctrl[k] * (1.0 - w) + ctrl[k + 1] * w;
        phase += 2.0 * PI * f0 / sr;

        let t = i as f64 / sr;
        let mut gain = 0.55 + 0.45 * (2.0 * PI * profile.modulation_rate * t + mod_phase).sin();
        for &(a, b) in &pauses {
            let x = i as f64;
            let g = if x <= a - ramp || x >= b + ramp {
                1.0
            } else if x >= a && x <= b {
                0.02
            } else {
                let d = if x < a { (a - x) / ramp } else { (x - b) / ramp };
                0.02 + 0.98 * (0.5 - 0.5 * (PI * d).cos())
            };
            gain *= g;
        }

        let mut s = 0.0;
        for (h, ph) in harm_phase.iter().enumerate() {
            let f = (h + 1) as f64 * f0;
            if f >= sr / 2.0 - 100.0 {
                break;
            }
            s += envelope(&formants, f) * ((h + 1) as f64 * phase + ph).sin();
        }
        samples.push(gain * s);
    }
    let rms = (samples.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    for x in &mut samples {
        *x /= rms;
    }
    AudioBuffer::new(samples, sample_rate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub source_a: SpeakerProfile,
    pub source_b: SpeakerProfile,
    pub snr_db: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self, snr_range: (f64, f64)) -> Result<()> {
        if self.source_a.id == self.source_b.id {
            return Err(Error::InvalidConfig(format!(
                "mixture of speaker {} with itself",
                self.source_a.id
            )));
        }
        if !(self.snr_db >= snr_range.0 && self.snr_db <= snr_range.1) {
            return Err(Error::InvalidConfig(format!(
                "snr {} dB outside [{}, {}]",
                self.snr_db, snr_range.0, snr_range.1
            )));
        }
        Ok(())
    }
}

/// A mixture and the S references that sum to it.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub mixture: AudioBuffer,
    pub references: Vec<AudioBuffer>,
    pub spec: Option<MixtureSpec>,
}

impl Utterance {
    pub fn num_sources(&self) -> usize {
        self.references.len()
    }

    /// `max_n |mixture[n] − Σ_s ref_s[n]|`
    pub fn mixing_residual(&self) -> f64 {
        (0..self.mixture.len())
            .map(|n| {
                let sum: f64 = self.references.iter().map(|r| r.samples[n]).sum();
                (self.mixture.samples[n] - sum).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Scales `b` so that `10·log10(P_a / P_b) = snr_db` and sums.
pub fn mix(a: &AudioBuffer, b: &AudioBuffer, snr_db: f64) -> Result<Utterance> {
    if a.len() != b.len() || a.sample_rate != b.sample_rate {
        return Err(Error::shape(format!(
            "sources of {} @ {} Hz and {} @ {} Hz",
            a.len(),
            a.sample_rate,
            b.len(),
            b.sample_rate
        )));
    }
    let (pa, pb) = (a.power(), b.power());
    if pa == 0.0 || pb == 0.0 {
        return Err(Error::DegenerateSource("source has zero power".into()));
    }
    let gain = (pa / (pb * 10f64.powf(snr_db / 10.0))).sqrt();
    let b = b.scaled(gain);
    let mixture = AudioBuffer {
        samples: a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect(),
        sample_rate: a.sample_rate,
    };
    Ok(Utterance {
        mixture,
        references: vec![a.clone(), b],
        spec: None,
    })
}

pub fn generate_utterance(spec: &MixtureSpec, sample_rate: u32) -> Result<Utterance> {
    let a = synth_source(&spec.source_a, spec.duration_s, derive_seed(spec.seed, "a", 0), sample_rate)?;
    let b = synth_source(&spec.source_b, spec.duration_s, derive_seed(spec.seed, "b", 0), sample_rate)?;
    let mut utt = mix(&a, &b, spec.snr_db)?;
    utt.spec = Some(spec.clone());
    Ok(utt)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_train_speakers: usize,
    pub n_test_speakers: usize,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    /// Peak level of the loudest track after scaling for 16-bit storage.
    pub peak: f64,
    pub master_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            sample_rate: dsp::DEFAULT_SAMPLE_RATE,
            duration_s: 0.5,
            n_train: 300,
            n_dev: 100,
            n_test: 100,
            n_train_speakers: 101,
            n_test_speakers: 18,
            snr_db_min: 0.0,
            snr_db_max: 5.0,
            peak: 0.9,
            master_seed: 20190417,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duration_s < MIN_DURATION_S {
            return Err(Error::InvalidConfig(format!(
                "duration {} s below {MIN_DURATION_S} s",
                self.duration_s
            )));
        }
        if self.n_train_speakers < 2 || self.n_test_speakers < 2 {
            return Err(Error::InvalidConfig("each speaker pool needs at least 2 speakers".into()));
        }
        if !(self.snr_db_min <= self.snr_db_max) {
            return Err(Error::InvalidConfig("snr_db_min > snr_db_max".into()));
        }
        if !(self.peak > 0.0 && self.peak < 1.0) {
            return Err(Error::InvalidConfig("peak must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Dev => self.n_dev,
            Split::Test => self.n_test,
        }
    }

    pub fn speaker_pool(&self, split: Split) -> Vec<SpeakerProfile> {
        let (tag, n) = match split {
            Split::Train | Split::Dev => ("tr", self.n_train_speakers),
            Split::Test => ("tt", self.n_test_speakers),
        };
        (0..n)
            .map(|i| {
                let id = format!("{tag}_spk{i:03}");
                SpeakerProfile::generate(id, derive_seed(self.master_seed, &format!("speaker-{tag}"), i as u64))
            })
            .collect()
    }

    /// The `index`-th mixture of `split`, derived from the master seed only.
    pub fn mixture_spec(&self, split: Split, index: usize) -> MixtureSpec {
        let pool = self.speaker_pool(split);
        let seed = derive_seed(self.master_seed, split.as_str(), index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks: Vec<&SpeakerProfile> = pool.choose_multiple(&mut rng, 2).collect();
        picks.shuffle(&mut rng);
        let snr_db = if self.snr_db_max > self.snr_db_min {
            rng.gen_range(self.snr_db_min..=self.snr_db_max)
        } else {
            self.snr_db_min
        };
        MixtureSpec {
            source_a: picks[0].clone(),
            source_b: picks[1].clone(),
            snr_db,
            duration_s: self.duration_s,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub mixture_path: String,
    pub ref_paths: Vec<String>,
    pub snr_db: f64,
    pub speaker_ids: Vec<String>,
}

/// Line-delimited JSON manifest; paths are relative to `root`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::ManifestError(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line)
                .map_err(|e| Error::ManifestError(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(rec);
        }
        let manifest = Self {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            records,
        };
        manifest.check_split_disjoint()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("manifest record serializes"));
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn speakers(&self, split: Split) -> BTreeSet<&str> {
        self.split(split)
            .flat_map(|r| r.speaker_ids.iter().map(String::as_str))
            .collect()
    }

    /// Test speakers must not appear in train or dev; ids must be unique.
    pub fn check_split_disjoint(&self) -> Result<()> {
        let seen: BTreeSet<&str> = self
            .speakers(Split::Train)
            .union(&self.speakers(Split::Dev))
            .copied()
            .collect();
        if let Some(s) = self.speakers(Split::Test).intersection(&seen).next() {
            return Err(Error::SplitViolation(format!(
                "test speaker {s} also appears in train/dev"
            )));
        }
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::ManifestError(format!("duplicate utterance id {}", r.id)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_utterance(&self, rec: &ManifestRecord, sample_rate: u32) -> Result<Utterance> {
        let read = |rel: &str| {
            let p = self.resolve(rel);
            if !p.exists() {
                return Err(Error::ManifestError(format!("missing file {}", p.display())));
            }
            read_wav(p, sample_rate)
        };
        let mixture = read(&rec.mixture_path)?;
        let references = rec
            .ref_paths
            .iter()
            .map(|p| read(p))
            .collect::<Result<Vec<_>>>()?;
        if references.iter().any(|r| r.len() != mixture.len()) {
            return Err(Error::ManifestError(format!("{}: track lengths differ", rec.id)));
        }
        Ok(Utterance {
            mixture,
            references,
            spec: None,
        })
    }
}

/// Scales an utterance to `peak`, quantizes references to 16 bits and forms
/// the stored mixture as the integer sum, so the mixing identity holds on disk.
fn quantize_utterance(utt: &Utterance, peak: f64) -> (Vec<i16>, Vec<Vec<i16>>) {
    let loudest = std::iter::once(&utt.mixture)
        .chain(&utt.references)
        .flat_map(|a| a.samples.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let gain = if loudest > 0.0 { peak / loudest } else { 1.0 };
    let refs: Vec<Vec<i16>> = utt
        .references
        .iter()
        .map(|r| r.samples.iter().map(|&x| quantize(x * gain)).collect())
        .collect();
    let mix = (0..utt.mixture.len())
        .map(|n| {
            let s: i32 = refs.iter().map(|r| i32::from(r[n])).sum();
            s.clamp(i32::from(i16::MIN), i32::from(i16::MAX)) as i16
        })
        .collect();
    (mix, refs)
}

/// Identifier of the `index`-th utterance of `split`.
pub fn utterance_id(split: Split, index: usize) -> String {
    format!("{}_{index:05}", split.as_str())
}

/// The `index`-th utterance of `split` exactly as [`build_corpus`] stores it,
/// without touching the filesystem.
pub fn stored_utterance(config: &CorpusConfig, split: Split, index: usize) -> Result<Utterance> {
    let spec = config.mixture_spec(split, index);
    spec.validate((config.snr_db_min, config.snr_db_max))?;
    let utt = generate_utterance(&spec, config.sample_rate)?;
    let (mix, refs) = quantize_utterance(&utt, config.peak);
    let dequant = |x: &[i16]| AudioBuffer::new(x.iter().map(|&v| f64::from(v) / 32768.0).collect(), config.sample_rate);
    Ok(Utterance {
        mixture: dequant(&mix)?,
        references: refs.iter().map(|r| dequant(r)).collect::<Result<Vec<_>>>()?,
        spec: Some(spec),
    })
}

/// Writes `wav/<split>/<id>_{mix,s1,s2}.wav` and `manifest.jsonl` under `out`.
pub fn build_corpus(config: &CorpusConfig, out: impl AsRef<Path>) -> Result<Manifest> {
    config.validate()?;
    let out = out.as_ref();
    let train_pool: BTreeSet<String> = config.speaker_pool(Split::Train).into_iter().map(|p| p.id).collect();
    if config
        .speaker_pool(Split::Test)
        .iter()
        .any(|p| train_pool.contains(&p.id))
    {
        return Err(Error::SplitViolation("speaker pools overlap".into()));
    }

    let jobs: Vec<(Split, usize)> = Split::ALL
        .iter()
        .flat_map(|&s| (0..config.count(s)).map(move |i| (s, i)))
        .collect();
    for split in Split::ALL {
        let dir = out.join("wav").join(split.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let records = jobs
        .par_iter()
        .map(|&(split, i)| -> Result<ManifestRecord> {
            let spec = config.mixture_spec(split, i);
            spec.validate((config.snr_db_min, config.snr_db_max))?;
            let utt = generate_utterance(&spec, config.sample_rate)?;
            let id = utterance_id(split, i);
            let (mix, refs) = quantize_utterance(&utt, config.peak);
            let rel = |name: &str| format!("wav/{}/{id}_{name}.wav", split.as_str());
            let mixture_path = rel("mix");
            dsp::write_wav_i16(out.join(&mixture_path), &mix, config.sample_rate)?;
            let mut ref_paths = Vec::new();
            for (k, r) in refs.iter().enumerate() {
                let p = rel(&format!("s{}", k + 1));
                dsp::write_wav_i16(out.join(&p), r, config.sample_rate)?;
                ref_paths.push(p);
            }
            Ok(ManifestRecord {
                id,
                split,
                mixture_path,
                ref_paths,
                snr_db: spec.snr_db,
                speaker_ids: vec![spec.source_a.id.clone(), spec.source_b.id.clone()],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        root: out.to_path_buf(),
        records,
    };
    manifest.check_split_disjoint()?;
    manifest.save(out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig};

    fn profile() -> SpeakerProfile {
        SpeakerProfile::generate("spk", 42)
    }

    #[test]
    fn synthesis_is_deterministic_and_unit_rms() {
        let a = synth_source(&profile(), 0.5, 7, 8000).unwrap();
        let b = synth_source(&profile(), 0.5, 7, 8000).unwrap();
        assert_eq!(a, b);
        assert!((a.rms() - 1.0).abs() < 1e-6);
        assert_eq!(a.len(), 4000);
    }

    #[test]
    fn spectral_peak_is_a_harmonic_of_the_f0_band() {
        let p = profile();
        let audio = synth_source(&p, 1.0, 3, 8000).unwrap();
        let cfg = StftConfig {
            window_len_ms: 128.0,
            hop_ms: 64.0,
            ..StftConfig::default()
        };
        let spec = stft(&audio, &cfg).unwrap();
        let mut mean = vec![0.0; spec.bins()];
        for t in 0..spec.frames() {
            for (f, m) in spec.magnitude().row(t).iter().enumerate() {
                mean[f] += m * m;
            }
        }
        let peak = mean.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let bin_hz = 8000.0 / 1024.0;
        let freq = peak as f64 * bin_hz;
        let (lo, hi) = p.f0_range;
        let ok = (1..=40).any(|k| {
            let k = k as f64;
            freq + bin_hz >= k * lo && freq - bin_hz <= k * hi
        });
        assert!(ok, "peak at {freq} Hz for band {lo}-{hi}");
    }

    #[test]
    fn mixing_hits_requested_snr() {
        let a = synth_source(&profile(), 0.5, 1, 8000).unwrap();
        let b = synth_source(&SpeakerProfile::generate("other", 9), 0.5, 2, 8000).unwrap();
        for snr in [0.0, 2.5, 5.0] {
            let u = mix(&a, &b, snr).unwrap();
            let realized = 10.0 * (u.references[0].power() / u.references[1].power()).log10();
            assert!((realized - snr).abs() < 1e-6);
            assert_eq!(u.mixing_residual(), 0.0);
        }
        let u = mix(&a, &b, 5.0).unwrap();
        let ratio = u.references[0].power() / u.references[1].power();
        assert!((ratio - 3.1623).abs() < 1e-4);
    }

    #[test]
    fn silent_source_is_degenerate() {
        let a = synth_source(&profile(), 0.5, 1, 8000).unwrap();
        let z = AudioBuffer::zeros(a.len(), 8000);
        assert!(matches!(mix(&a, &z, 0.0), Err(Error::DegenerateSource(_))));
    }

    #[test]
    fn short_duration_is_rejected() {
        assert!(synth_source(&profile(), 0.3, 1, 8000).is_err());
    }

    #[test]
    fn speaker_pools_are_disjoint_with_distinct_seeds() {
        let cfg = CorpusConfig::default();
        let train = cfg.speaker_pool(Split::Train);
        let test = cfg.speaker_pool(Split::Test);
        let seeds: BTreeSet<u64> = train.iter().chain(&test).map(|p| p.formant_seed).collect();
        assert_eq!(seeds.len(), train.len() + test.len());
        for p in train.iter().chain(&test) {
            p.validate().unwrap();
        }
    }

    #[test]
    fn mixture_specs_use_two_distinct_speakers() {
        let cfg = CorpusConfig::default();
        for i in 0..50 {
            let s = cfg.mixture_spec(Split::Train, i);
            s.validate((0.0, 5.0)).unwrap();
            assert_eq!(s, cfg.mixture_spec(Split::Train, i));
        }
    }

    #[test]
    fn overlapping_manifest_is_a_split_violation() {
        let rec = |id: &str, split, spk: &str| ManifestRecord {
            id: id.into(),
            split,
            mixture_path: String::new(),
            ref_paths: vec![],
            snr_db: 0.0,
            speaker_ids: vec![spk.into(), "x".into()],
        };
        let m = Manifest {
            root: PathBuf::new(),
            records: vec![rec("a", Split::Train, "s1"), rec("b", Split::Test, "s1")],
        };
        assert!(matches!(m.check_split_disjoint(), Err(Error::SplitViolation(_))));
    }
}
