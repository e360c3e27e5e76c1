//! Embedding export for external projection tools (t-SNE and friends).

use std::path::Path;

use crate::encoders::EncoderModel;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::synth::{Corpus, Group};

/// Which embeddings to dump: the base encoder alone, or the three GFN
/// encoders concatenated per utterance (row width `3·D`).
pub enum EmbeddingSource<'a> {
    Base(&'a EncoderModel),
    Gfn {
        base: &'a EncoderModel,
        female: &'a EncoderModel,
        male: &'a EncoderModel,
    },
}

#[derive(Debug, Clone)]
pub struct EmbeddingRow {
    pub speaker_id: u32,
    pub group: Group,
    pub utterance_id: u32,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingDump {
    pub rows: Vec<EmbeddingRow>,
    pub width: usize,
}

/// Embed `n_utts_per_speaker` full utterances for each of `n_speakers`
/// randomly sampled speakers.
pub fn export_embeddings(
    source: &EmbeddingSource,
    corpus: &Corpus,
    n_speakers: usize,
    n_utts_per_speaker: usize,
    seed: u64,
) -> Result<EmbeddingDump> {
    if n_speakers < 2 || n_utts_per_speaker == 0 {
        return Err(Error::Config(
            "need at least 2 speakers and 1 utterance per speaker".into(),
        ));
    }
    let eligible: Vec<&crate::synth::Speaker> = corpus
        .speakers
        .iter()
        .filter(|s| corpus.utterances_of(s.id).len() >= n_utts_per_speaker)
        .collect();
    if eligible.len() < n_speakers {
        return Err(Error::Capacity(format!(
            "only {} speakers have {} utterances; {} requested",
            eligible.len(),
            n_utts_per_speaker,
            n_speakers
        )));
    }
    let mut rng = SeededRng::from_seed(seed);
    let picked = rng.sample_indices(eligible.len(), n_speakers);

    let mut rows = Vec::with_capacity(n_speakers * n_utts_per_speaker);
    for s_idx in picked {
        let speaker = eligible[s_idx];
        let utts = corpus.utterances_of(speaker.id);
        let utt_picks = rng.sample_indices(utts.len(), n_utts_per_speaker);
        for u_idx in utt_picks {
            let utt = utts[u_idx];
            let values = match source {
                EmbeddingSource::Base(model) => model.embed(&utt.frames)?,
                EmbeddingSource::Gfn { base, female, male } => {
                    let mut v = base.embed(&utt.frames)?;
                    v.extend(female.embed(&utt.frames)?);
                    v.extend(male.embed(&utt.frames)?);
                    v
                }
            };
            rows.push(EmbeddingRow {
                speaker_id: speaker.id,
                group: speaker.group,
                utterance_id: utt.id,
                values,
            });
        }
    }
    let width = rows.first().map_or(0, |r| r.values.len());
    Ok(EmbeddingDump { rows, width })
}

/// Write a dump as CSV: `speaker_id,group,utterance_id,e0,...,e{W-1}`.
pub fn save_embedding_csv(dump: &EmbeddingDump, path: &Path) -> Result<()> {
    let mut out = String::from("speaker_id,group,utterance_id");
    for i in 0..dump.width {
        out.push_str(&format!(",e{i}"));
    }
    out.push('\n');
    for row in &dump.rows {
        out.push_str(&format!(
            "{},{},{}",
            row.speaker_id,
            row.group.as_str(),
            row.utterance_id
        ));
        for v in &row.values {
            out.push_str(&format!(",{v:.9}"));
        }
        out.push('\n');
    }
    crate::synth::io::write_atomic(path, out.as_bytes())
}
