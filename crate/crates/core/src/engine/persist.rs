//! Versioned on-disk index layout.
//!
//! ```text
//! index.toml             format version, config, channel kinds
//! shapes.tsv             id<TAB>label, in manifest order
//! ch<i>_codebook.bin     centroids of channel i
//! ch<i>_fif.bin          first inverted file of channel i
//! ch<i>_features.bin     database view descriptors of channel i
//! ch<i>_activations.bin  channel i activations before augmentation
//! activations.bin        final database activations
//! sif.bin                second inverted file
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChannelIndex, IndexBundle, IndexConfig, RerankContext, ShapeEntry};
use crate::codebook::Codebook;
use crate::features::{decode_feature_file, encode_feature_file, records_to_views, ChannelKind};
use crate::matching::FirstInvertedFile;
use crate::rerank::{decode_activations, encode_activations, SecondInvertedFile};
use crate::{Error, Result};

pub const FORMAT_VERSION: &str = "gift-index-1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: String,
    shapes: usize,
    channels: Vec<ChannelKind>,
    config: IndexConfig,
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| Error::io(&path, e))
}

fn context_err(name: &str, e: Error) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{name}: {msg}")),
        other => other,
    }
}

pub(super) fn save(bundle: &IndexBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = Header {
        format_version: FORMAT_VERSION.to_owned(),
        shapes: bundle.len(),
        channels: bundle.channels.iter().map(|c| c.kind).collect(),
        config: bundle.config.clone(),
    };
    let toml = toml::to_string(&header).map_err(|e| Error::Format(format!("index header: {e}")))?;
    write(dir, "index.toml", toml.as_bytes())?;

    let mut tsv = String::new();
    for s in &bundle.shapes {
        if s.id.contains(['\t', '\n']) {
            return Err(Error::Format(format!(
                "shape id {:?} cannot be stored",
                s.id
            )));
        }
        tsv.push_str(&s.id);
        tsv.push('\t');
        tsv.push_str(s.label.as_deref().unwrap_or(""));
        tsv.push('\n');
    }
    write(dir, "shapes.tsv", tsv.as_bytes())?;

    for (i, ch) in bundle.channels.iter().enumerate() {
        write(
            dir,
            &format!("ch{i}_codebook.bin"),
            &ch.fif.codebook().encode(),
        )?;
        write(dir, &format!("ch{i}_fif.bin"), &ch.fif.encode())?;
        let records = bundle
            .shapes
            .iter()
            .zip(&ch.views)
            .map(|(s, v)| (s.id.as_str(), v.as_slice()));
        write(
            dir,
            &format!("ch{i}_features.bin"),
            &encode_feature_file(records)?,
        )?;
        write(
            dir,
            &format!("ch{i}_activations.bin"),
            &encode_activations(&bundle.rerank.channel_acts[i]),
        )?;
    }
    write(
        dir,
        "activations.bin",
        &encode_activations(&bundle.rerank.final_acts),
    )?;
    write(dir, "sif.bin", &bundle.rerank.sif.encode())
}

fn parse_shapes(text: &str) -> Result<Vec<ShapeEntry>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let (id, label) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected id<TAB>label".into(),
            })?;
            Ok(ShapeEntry {
                id: id.to_owned(),
                label: (!label.is_empty()).then(|| label.to_owned()),
            })
        })
        .collect()
}

pub(super) fn load(dir: &Path) -> Result<IndexBundle> {
    let header_bytes = read(dir, "index.toml")?;
    let header_text = String::from_utf8(header_bytes)
        .map_err(|_| Error::Format("index.toml is not UTF-8".into()))?;
    let header: Header =
        toml::from_str(&header_text).map_err(|e| Error::Format(format!("index.toml: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "index format {} does not match reader {FORMAT_VERSION}",
            header.format_version
        )));
    }
    header.config.validate()?;

    let shapes_bytes = read(dir, "shapes.tsv")?;
    let shapes = parse_shapes(&String::from_utf8_lossy(&shapes_bytes))?;
    let n = shapes.len();
    if n != header.shapes {
        return Err(Error::Format(format!(
            "shapes.tsv lists {n} shapes, header says {}",
            header.shapes
        )));
    }

    let mut channels = Vec::new();
    let mut channel_acts = Vec::new();
    for (i, &kind) in header.channels.iter().enumerate() {
        let name = format!("ch{i}_codebook.bin");
        let codebook = Codebook::decode(&read(dir, &name)?).map_err(|e| context_err(&name, e))?;
        let name = format!("ch{i}_fif.bin");
        let fif = FirstInvertedFile::decode(&read(dir, &name)?, codebook)
            .map_err(|e| context_err(&name, e))?;
        let name = format!("ch{i}_features.bin");
        let records = decode_feature_file(&read(dir, &name)?).map_err(|e| context_err(&name, e))?;
        let views = records_to_views(records, false)?;
        if views.len() != n || views.iter().zip(&shapes).any(|((id, _), s)| *id != s.id) {
            return Err(Error::Format(format!("{name} does not follow shapes.tsv")));
        }
        if fif.n_shapes() != n {
            return Err(Error::Format(format!(
                "ch{i}_fif.bin indexes {} shapes, expected {n}",
                fif.n_shapes()
            )));
        }
        let name = format!("ch{i}_activations.bin");
        let acts = decode_activations(&read(dir, &name)?).map_err(|e| context_err(&name, e))?;
        if acts.len() != n {
            return Err(Error::Format(format!(
                "{name} holds {} activations, expected {n}",
                acts.len()
            )));
        }
        channel_acts.push(acts);
        channels.push(ChannelIndex {
            kind,
            fif,
            views: views.into_iter().map(|(_, v)| v).collect(),
        });
    }
    let final_acts = decode_activations(&read(dir, "activations.bin")?)
        .map_err(|e| context_err("activations.bin", e))?;
    let sif = SecondInvertedFile::decode(&read(dir, "sif.bin")?)
        .map_err(|e| context_err("sif.bin", e))?;
    if final_acts.len() != n || sif.len() != n {
        return Err(Error::Format(
            "activation files do not match the shape list".into(),
        ));
    }
    let rerank = RerankContext::from_parts(channel_acts, final_acts, sif);
    Ok(IndexBundle::from_parts(
        header.config,
        shapes,
        channels,
        rerank,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_tsv_parsing() {
        let s = parse_shapes("a\tcup\nb\t\n").unwrap();
        assert_eq!(s[0].label.as_deref(), Some("cup"));
        assert_eq!(s[1].label, None);
        assert!(parse_shapes("no-tab\n").is_err());
    }

    #[test]
    fn missing_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load(&dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }
}
