//! Synthetic speakers, utterances, and ratio-controlled corpora.
//!
//! Each speaker is a latent identity vector drawn from a group-conditioned
//! Gaussian: female identities center at `+c·u`, male identities at `-c·u`
//! along a fixed unit axis `u`, with isotropic spread `σ_sp`. An utterance
//! is a `T×F` frame matrix whose every frame is the speaker's identity
//! pushed through a fixed seeded mixing matrix plus per-frame Gaussian
//! noise. Identity is therefore exactly recoverable in principle, the
//! group axis is controllable, and any performance gap between groups can
//! only come from how much data a model saw per group.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    F,
    M,
}

impl Group {
    pub fn all() -> [Group; 2] {
        [Group::F, Group::M]
    }

    pub fn other(self) -> Group {
        match self {
            Group::F => Group::M,
            Group::M => Group::F,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::F => "F",
            Group::M => "M",
        }
    }
}

impl std::str::FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" | "f" | "female" => Ok(Group::F),
            "M" | "m" | "male" => Ok(Group::M),
            other => Err(Error::Config(format!("unknown group `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Speaker {
    pub id: u32,
    pub group: Group,
    pub identity: Vec<f64>,
}

/// A `T×F` frame matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMatrix {
    pub n_frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FrameMatrix {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Mean over frames `start..start+len`.
    pub fn mean_pool(&self, start: usize, len: usize) -> Vec<f64> {
        assert!(len >= 1 && start + len <= self.n_frames);
        let mut acc = vec![0.0; self.dim];
        for t in start..start + len {
            for (a, x) in acc.iter_mut().zip(self.frame(t)) {
                *a += x;
            }
        }
        let inv = 1.0 / len as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Utterance {
    pub id: u32,
    pub speaker_id: u32,
    pub frames: FrameMatrix,
}

impl Utterance {
    pub fn duration_frames(&self) -> usize {
        self.frames.n_frames
    }
}

/// Parameters of the synthetic voice model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Latent identity dimension.
    pub d_latent: usize,
    /// Frame feature dimension F.
    pub feature_dim: usize,
    /// Frames per utterance T.
    pub frames_per_utterance: usize,
    /// Distance of each group mean from the origin along the group axis.
    pub group_separation: f64,
    /// Within-group identity spread σ_sp.
    pub speaker_spread: f64,
    /// Per-frame noise σ_ut.
    pub utterance_noise: f64,
    pub utterances_per_speaker: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d_latent: 16,
            feature_dim: 40,
            frames_per_utterance: 200,
            group_separation: 1.5,
            speaker_spread: 1.0,
            utterance_noise: 0.8,
            utterances_per_speaker: 20,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_latent == 0 || self.feature_dim == 0 || self.frames_per_utterance == 0 {
            return Err(Error::Config("synth dimensions must be positive".into()));
        }
        if self.speaker_spread <= 0.0 || self.utterance_noise < 0.0 {
            return Err(Error::Config("spreads must be positive".into()));
        }
        if self.group_separation < 0.0 {
            return Err(Error::Config("group separation must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> SynthConfig {
        SynthConfig { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    pub id: String,
    pub ratio_label: String,
    pub config: SynthConfig,
    pub speakers: Vec<Speaker>,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn speaker(&self, id: u32) -> Option<&Speaker> {
        self.speakers.iter().find(|s| s.id == id)
    }

    pub fn group_of(&self, speaker_id: u32) -> Option<Group> {
        self.speaker(speaker_id).map(|s| s.group)
    }

    pub fn utterance(&self, id: u32) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    pub fn speakers_in(&self, group: Group) -> Vec<&Speaker> {
        self.speakers.iter().filter(|s| s.group == group).collect()
    }

    pub fn group_count(&self, group: Group) -> usize {
        self.speakers.iter().filter(|s| s.group == group).count()
    }

    pub fn utterances_of(&self, speaker_id: u32) -> Vec<&Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.speaker_id == speaker_id)
            .collect()
    }

    pub fn speaker_ids(&self) -> Vec<u32> {
        self.speakers.iter().map(|s| s.id).collect()
    }

    /// Internal consistency: unique speaker ids, finite identities, every
    /// utterance pointing at a known speaker.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.speakers {
            if !seen.insert(s.id) {
                return Err(Error::Artifact(format!("duplicate speaker id {}", s.id)));
            }
            if !s.identity.iter().all(|v| v.is_finite()) {
                return Err(Error::Artifact(format!(
                    "speaker {} has non-finite identity",
                    s.id
                )));
            }
        }
        for u in &self.utterances {
            if !seen.contains(&u.speaker_id) {
                return Err(Error::Artifact(format!(
                    "utterance {} references unknown speaker {}",
                    u.id, u.speaker_id
                )));
            }
            if u.frames.data.len() != u.frames.n_frames * u.frames.dim {
                return Err(Error::Artifact(format!(
                    "utterance {} frame buffer length mismatch",
                    u.id
                )));
            }
        }
        Ok(())
    }
}

/// Reduce a speaker-count pair to a ratio label such as `"9:1"`.
pub fn ratio_label(n_female: usize, n_male: usize) -> String {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let g = gcd(n_female.max(1), n_male.max(1)).max(1);
    if n_female == 0 {
        return format!("0:{}", n_male / g.max(1));
    }
    if n_male == 0 {
        return format!("{}:0", n_female / g.max(1));
    }
    format!("{}:{}", n_female / g, n_male / g)
}

/// The fixed unit group axis: the first latent basis vector.
fn group_axis(d_latent: usize) -> Vec<f64> {
    let mut u = vec![0.0; d_latent];
    u[0] = 1.0;
    u
}

/// Fixed seeded mixing matrix `A` (feature_dim × d_latent). Entries are
/// Normal(0, 1/d_latent) so `‖A z‖ ≈ ‖z‖`.
fn mixing_matrix(config: &SynthConfig, rng: &mut SeededRng) -> Matrix {
    let std = (1.0 / config.d_latent as f64).sqrt();
    let data: Vec<f64> = (0..config.feature_dim * config.d_latent)
        .map(|_| rng.normal(0.0, std))
        .collect();
    Matrix::from_vec(config.feature_dim, config.d_latent, data)
}

/// Generate a corpus with exactly `n_female` + `n_male` speakers, speaker
/// ids starting at `speaker_id_base`.
pub fn generate_corpus_with_base(
    config: &SynthConfig,
    n_female: usize,
    n_male: usize,
    speaker_id_base: u32,
) -> Result<Corpus> {
    config.validate()?;
    if n_female + n_male < 2 {
        return Err(Error::Config("need at least two speakers".into()));
    }
    if config.utterances_per_speaker > 0 && (n_female == 0 || n_male == 0) {
        return Err(Error::Config(
            "utterances requested for a group with zero speakers".into(),
        ));
    }

    let base = SeededRng::from_seed(config.seed);
    let mut mix_rng = base.derive("mixing-matrix");
    let mixing = mixing_matrix(config, &mut mix_rng);
    let axis = group_axis(config.d_latent);

    let mut speaker_rng = base.derive("speakers");
    let mut utterance_rng = base.derive("utterances");

    let mut speakers = Vec::with_capacity(n_female + n_male);
    let mut utterances = Vec::new();
    let mut next_utt_id: u32 = 0;

    let mut spawn_group = |group: Group,
                           count: usize,
                           id_offset: u32,
                           speakers: &mut Vec<Speaker>,
                           utterances: &mut Vec<Utterance>,
                           speaker_rng: &mut SeededRng,
                           utterance_rng: &mut SeededRng| {
        let sign = match group {
            Group::F => 1.0,
            Group::M => -1.0,
        };
        for k in 0..count {
            let id = speaker_id_base + id_offset + k as u32;
            let identity: Vec<f64> = axis
                .iter()
                .map(|&u_i| {
                    sign * config.group_separation * u_i
                        + speaker_rng.normal(0.0, config.speaker_spread)
                })
                .collect();
            let projected = mixing.matvec(&identity);
            for _ in 0..config.utterances_per_speaker {
                let t = config.frames_per_utterance;
                let f = config.feature_dim;
                let mut data = Vec::with_capacity(t * f);
                for _ in 0..t {
                    for &p in &projected {
                        data.push(p + utterance_rng.normal(0.0, config.utterance_noise));
                    }
                }
                utterances.push(Utterance {
                    id: next_utt_id,
                    speaker_id: id,
                    frames: FrameMatrix {
                        n_frames: t,
                        dim: f,
                        data,
                    },
                });
                next_utt_id += 1;
            }
            speakers.push(Speaker { id, group, identity });
        }
    };

    spawn_group(
        Group::F,
        n_female,
        0,
        &mut speakers,
        &mut utterances,
        &mut speaker_rng,
        &mut utterance_rng,
    );
    spawn_group(
        Group::M,
        n_male,
        n_female as u32,
        &mut speakers,
        &mut utterances,
        &mut speaker_rng,
        &mut utterance_rng,
    );

    let label = ratio_label(n_female, n_male);
    Ok(Corpus {
        id: format!("synth-{label}-s{}", config.seed),
        ratio_label: label,
        config: config.clone(),
        speakers,
        utterances,
    })
}

/// Generate a corpus with exactly `n_female` female and `n_male` male
/// speakers and `utterances_per_speaker` utterances each.
pub fn generate_corpus(config: &SynthConfig, n_female: usize, n_male: usize) -> Result<Corpus> {
    generate_corpus_with_base(config, n_female, n_male, 0)
}

/// One corpus per requested ratio, each with exactly `total_speakers`
/// speakers. Speakers are re-sampled independently per corpus: each ratio's
/// corpus seed derives from the family seed and the ratio itself, so adding
/// or reordering ratios never changes another corpus.
pub fn build_grc_suite(
    config: &SynthConfig,
    total_speakers: usize,
    ratios: &[(u32, u32)],
) -> Result<Vec<Corpus>> {
    ratios
        .iter()
        .map(|&(f_parts, m_parts)| {
            let (n_f, n_m) = split_ratio(total_speakers, f_parts, m_parts)?;
            let seed = crate::rng::derive_seed(config.seed, &format!("grc:{f_parts}:{m_parts}"));
            generate_corpus(&config.with_seed(seed), n_f, n_m)
        })
        .collect()
}

/// Split `total` into counts proportional to `(f_parts, m_parts)`.
/// Errors unless the split is exact; callers round explicitly.
pub fn split_ratio(total: usize, f_parts: u32, m_parts: u32) -> Result<(usize, usize)> {
    if f_parts == 0 || m_parts == 0 {
        return Err(Error::Config("ratio parts must be positive".into()));
    }
    let parts = (f_parts + m_parts) as usize;
    if total % parts != 0 {
        return Err(Error::Config(format!(
            "{total} speakers cannot be split {f_parts}:{m_parts} into integers"
        )));
    }
    let unit = total / parts;
    Ok((unit * f_parts as usize, unit * m_parts as usize))
}

/// The sub-corpus containing exactly the speakers and utterances of one group.
pub fn split_by_group(corpus: &Corpus, group: Group) -> Result<Corpus> {
    let speakers: Vec<Speaker> = corpus
        .speakers
        .iter()
        .filter(|s| s.group == group)
        .cloned()
        .collect();
    if speakers.is_empty() {
        return Err(Error::Config(format!(
            "corpus `{}` has no {} speakers",
            corpus.id,
            group.as_str()
        )));
    }
    let keep: std::collections::HashSet<u32> = speakers.iter().map(|s| s.id).collect();
    let utterances = corpus
        .utterances
        .iter()
        .filter(|u| keep.contains(&u.speaker_id))
        .cloned()
        .collect();
    let label = match group {
        Group::F => "1:0".to_string(),
        Group::M => "0:1".to_string(),
    };
    Ok(Corpus {
        id: format!("{}-{}", corpus.id, group.as_str()),
        ratio_label: label,
        config: corpus.config.clone(),
        speakers,
        utterances,
    })
}
