//! On-disk radio-image datasets: a JSON-lines `manifest` plus one `.csir`
//! file per sample.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CsiError, Result};
use crate::image::RadioImage;
use crate::labels::{Activity, Occupancy, TAXONOMY_VERSION};
use crate::matrix::Matrix;
use crate::preprocess::Preprocessor;
use crate::synth::{derive_seed, mix_scenario, synth_matrix};

pub const MANIFEST: &str = "manifest";
pub const SAMPLE_MAGIC: &[u8; 4] = b"CSIR";
pub const SAMPLE_VERSION: u32 = 1;

/// A labeled image plus where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RadioImage,
    pub seed: Option<u64>,
    pub source: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    taxonomy_version: u32,
    rod_classes: Vec<String>,
    har_classes: Vec<String>,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    file: String,
    rod_label: Option<usize>,
    har_label: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    source: String,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

pub fn dataset_write(samples: &[Sample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CsiError::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST);
    let mut manifest = BufWriter::new(File::create(&manifest_path).map_err(|e| CsiError::io(&manifest_path, e))?);
    let header = Header {
        taxonomy_version: TAXONOMY_VERSION,
        rod_classes: names(&Occupancy::NAMES),
        har_classes: names(&Activity::NAMES),
        count: samples.len(),
    };
    json_line(&mut manifest, &manifest_path, &header)?;
    for (i, s) in samples.iter().enumerate() {
        let file = format!("{i:06}.csir");
        write_sample(&dir.join(&file), s.image.values())?;
        let entry = Entry {
            file,
            rod_label: s.image.rod.map(Occupancy::index),
            har_label: s.image.har.map(Activity::index),
            seed: s.seed,
            source: s.source.clone(),
        };
        json_line(&mut manifest, &manifest_path, &entry)?;
    }
    manifest.flush().map_err(|e| CsiError::io(&manifest_path, e))
}

pub fn dataset_read(dir: &Path) -> Result<Vec<Sample>> {
    let manifest_path = dir.join(MANIFEST);
    let file = File::open(&manifest_path).map_err(|e| CsiError::io(&manifest_path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| CsiError::Format("manifest is empty".into()))?
        .map_err(|e| CsiError::io(&manifest_path, e))?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| CsiError::Format(format!("manifest header: {e}")))?;
    if header.taxonomy_version != TAXONOMY_VERSION {
        return Err(CsiError::Format(format!(
            "manifest taxonomy version {} (expected {TAXONOMY_VERSION})",
            header.taxonomy_version
        )));
    }
    if header.rod_classes != names(&Occupancy::NAMES) || header.har_classes != names(&Activity::NAMES) {
        return Err(CsiError::Format("manifest class lists differ from this build".into()));
    }
    let mut out = Vec::with_capacity(header.count);
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| CsiError::io(&manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: Entry = serde_json::from_str(&line)
            .map_err(|e| CsiError::Format(format!("manifest line {}: {e}", n + 2)))?;
        let rod = entry.rod_label.map(Occupancy::from_index).transpose()?;
        let har = entry.har_label.map(Activity::from_index).transpose()?;
        if entry.file.contains(['/', '\\']) {
            return Err(CsiError::Format(format!("sample path {} leaves the dataset", entry.file)));
        }
        let values = read_sample(&dir.join(&entry.file))?;
        out.push(Sample {
            image: RadioImage::new(values, rod, har)?,
            seed: entry.seed,
            source: entry.source,
        });
    }
    if out.len() != header.count {
        return Err(CsiError::Format(format!(
            "manifest announces {} samples, lists {}",
            header.count,
            out.len()
        )));
    }
    Ok(out)
}

fn write_sample(path: &Path, m: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + m.data().len() * 4);
    buf.extend_from_slice(SAMPLE_MAGIC);
    buf.extend_from_slice(&SAMPLE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| CsiError::io(path, e))
}

fn read_sample(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CsiError::io(path, e))?;
    let bad = |what: String| CsiError::Format(format!("{}: {what}", path.display()));
    if bytes.len() < 16 || &bytes[0..4] != SAMPLE_MAGIC {
        return Err(bad("not a CSIR sample".into()));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    if word(4) != SAMPLE_VERSION {
        return Err(bad(format!("sample version {} unsupported", word(4))));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(4)) != Some(body.len()) {
        return Err(bad(format!("{rows}x{cols} header but {} payload bytes", body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Matrix::new(rows, cols, data)
}

/// `count` samples cycling through every scenario, reproducible from `seed`.
pub fn synth_dataset(count: usize, seed: u64, pre: &Preprocessor) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let scenario = mix_scenario(i);
            let s = derive_seed(seed, i as u64);
            let image = pre.process(&synth_matrix(scenario, s), Some(scenario.rod()), scenario.har())?;
            Ok(Sample {
                image,
                seed: Some(s),
                source: format!("synth:{}", scenario.name()),
            })
        })
        .collect()
}

fn json_line<T: Serialize>(w: &mut impl Write, path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string(v).map_err(|e| CsiError::Format(e.to_string()))?;
    writeln!(w, "{text}").map_err(|e| CsiError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_the_first_manifest_line() {
        let dir = tempfile::tempdir().unwrap();
        dataset_write(&[], dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.starts_with("{\"taxonomy_version\":1"));
        assert!(dataset_read(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn corrupted_sample_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_dataset(1, 1, &Preprocessor::default()).unwrap();
        dataset_write(&samples, dir.path()).unwrap();
        let f = dir.path().join("000000.csir");
        let mut bytes = fs::read(&f).unwrap();
        bytes[8] = 7;
        fs::write(&f, bytes).unwrap();
        assert!(matches!(dataset_read(dir.path()), Err(CsiError::Format(_))));
    }
}
