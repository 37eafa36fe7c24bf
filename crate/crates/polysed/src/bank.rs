//! Event banks on disk: one subdirectory per class holding isolated-event WAVs.

use std::path::{Path, PathBuf};

use polysed_core::synth::{split_bank, EventBank};

use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::wav::{read_wav, write_wav};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_wav(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Reads every class of a bank directory. Multichannel examples are averaged
/// to mono.
pub fn read_event_bank(dir: &Path) -> Result<EventBank> {
    let mut bank = EventBank::new();
    for class_dir in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
        let label = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::format(&class_dir, "class directory name is not UTF-8"))?
            .to_string();
        let mut clips = Vec::new();
        for f in sorted_entries(&class_dir)?.into_iter().filter(|p| is_wav(p)) {
            let clip = read_wav(&f)?;
            clips.push(if clip.n_channels() == 1 { clip } else { clip.mixdown() });
        }
        bank.insert(label, clips);
    }
    if bank.is_empty() {
        return Err(Error::format(dir, "no class subdirectories"));
    }
    Ok(bank)
}

/// One side of a seeded per-class split with `floor(n·ratio)` training examples.
pub fn load_event_bank(dir: &Path, split: Split, ratio: f64, seed: u64) -> Result<EventBank> {
    let (train, test) = split_bank(&read_event_bank(dir)?, ratio, seed)?;
    Ok(match split {
        Split::Train => train,
        Split::Test => test,
    })
}

/// Writes `<dir>/<label>/<label>_NNN.wav` for every example.
pub fn write_event_bank(dir: &Path, bank: &EventBank) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (label, clips) in bank {
        for (i, clip) in clips.iter().enumerate() {
            let path = dir.join(label).join(format!("{label}_{i:03}.wav"));
            write_wav(&path, clip)?;
            written.push(path);
        }
    }
    Ok(written)
}
