//! Recursive WAV directory ingestion.

use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use crate::dsp::{read_wav, AudioBuffer};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub audio: AudioBuffer,
}

fn is_wav(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// All `.wav` files under `root`, sorted by full path.
pub fn list_wavs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::UnreadableFile { path: root.to_path_buf(), reason: "not a directory".into() });
    }
    let mut paths = Vec::new();
    for entry in WalkDir::new(root).follow_links(true).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::UnreadableFile {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf()),
            reason: e.to_string(),
        })?;
        if entry.file_type().is_file() && is_wav(entry.path()) {
            paths.push(entry.into_path());
        }
    }
    paths.sort();
    Ok(paths)
}

/// Load every WAV under the given roots in lexicographic path order.
///
/// Any file that fails to decode, is empty, or is not at `expected_rate`
/// (when given) is collected; if there are any, all of them are reported
/// together in [`Error::UnreadableFiles`].
pub fn load_corpus<P: AsRef<Path>>(roots: &[P], expected_rate: Option<u32>) -> Result<Vec<CorpusEntry>> {
    let mut paths = Vec::new();
    for root in roots {
        paths.extend(list_wavs(root)?);
    }
    paths.sort();
    paths.dedup();
    if paths.is_empty() {
        return Err(Error::EmptyInput("corpus contains no .wav files"));
    }
    let mut entries = Vec::with_capacity(paths.len());
    let mut failures = Vec::new();
    for path in paths {
        match read_wav(&path) {
            Ok(audio) if audio.is_empty() => {
                failures.push(Error::UnreadableFile { path, reason: "no samples".into() });
            }
            Ok(audio) if expected_rate.is_some_and(|r| r != audio.sample_rate()) => {
                let reason = format!(
                    "sample rate {} Hz, expected {} Hz; resample the file first",
                    audio.sample_rate(),
                    expected_rate.unwrap()
                );
                failures.push(Error::UnreadableFile { path, reason });
            }
            Ok(audio) => entries.push(CorpusEntry { path, audio }),
            Err(e) => failures.push(Error::UnreadableFile { path, reason: e.to_string() }),
        }
    }
    if !failures.is_empty() {
        return Err(Error::UnreadableFiles(failures));
    }
    Ok(entries)
}
