//! Corpus persistence.
//!
//! A corpus directory holds `manifest.json` plus one binary frame file per
//! utterance, named `utt_<id>.f64`: little-endian `f64`, row-major `T×F`.
//! The loader cross-checks every manifest entry against its file.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, FrameMatrix, Speaker, SynthConfig, Utterance};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    corpus_id: String,
    ratio_label: String,
    config: SynthConfig,
    speakers: Vec<Speaker>,
    utterances: Vec<UtteranceEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct UtteranceEntry {
    id: u32,
    speaker_id: u32,
    n_frames: usize,
    file: String,
}

fn frame_file_name(utt_id: u32) -> String {
    format!("utt_{utt_id:06}.f64")
}

/// Write `bytes` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    corpus.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        corpus_id: corpus.id.clone(),
        ratio_label: corpus.ratio_label.clone(),
        config: corpus.config.clone(),
        speakers: corpus.speakers.clone(),
        utterances: corpus
            .utterances
            .iter()
            .map(|u| UtteranceEntry {
                id: u.id,
                speaker_id: u.speaker_id,
                n_frames: u.frames.n_frames,
                file: frame_file_name(u.id),
            })
            .collect(),
    };
    for u in &corpus.utterances {
        let mut bytes = Vec::with_capacity(u.frames.data.len() * 8);
        for v in &u.frames.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(&dir.join(frame_file_name(u.id)), &bytes)?;
    }
    write_atomic(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format_version != MANIFEST_FORMAT_VERSION {
        return Err(Error::Artifact(format!(
            "unsupported corpus manifest version {}",
            manifest.format_version
        )));
    }
    let dim = manifest.config.feature_dim;
    let mut utterances = Vec::with_capacity(manifest.utterances.len());
    for entry in &manifest.utterances {
        let path: PathBuf = dir.join(&entry.file);
        let expected_bytes = entry.n_frames * dim * 8;
        let meta = fs::metadata(&path).map_err(|_| {
            Error::Artifact(format!(
                "utterance {} frame file `{}` missing",
                entry.id, entry.file
            ))
        })?;
        if meta.len() as usize != expected_bytes {
            return Err(Error::Artifact(format!(
                "utterance {} frame file `{}` has {} bytes, manifest implies {}",
                entry.id,
                entry.file,
                meta.len(),
                expected_bytes
            )));
        }
        let mut bytes = Vec::with_capacity(expected_bytes);
        fs::File::open(&path)?.read_to_end(&mut bytes)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Artifact(format!(
                "utterance {} contains non-finite frames",
                entry.id
            )));
        }
        utterances.push(Utterance {
            id: entry.id,
            speaker_id: entry.speaker_id,
            frames: FrameMatrix {
                n_frames: entry.n_frames,
                dim,
                data,
            },
        });
    }
    let corpus = Corpus {
        id: manifest.corpus_id,
        ratio_label: manifest.ratio_label,
        config: manifest.config,
        speakers: manifest.speakers,
        utterances,
    };
    corpus.validate()?;
    Ok(corpus)
}
