//! On-disk format for models and activation probes.
//!
//! A store named `out/m` is two files: `out/m.manifest.json` (UTF-8 JSON)
//! and `out/m.blob` (row-major little-endian f32, tensors back to back in
//! manifest order). The manifest carries a CRC32 of the whole blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivationProbe, ModelSpec, ModelState, NormStats};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST_SUFFIX: &str = ".manifest.json";
const BLOB_SUFFIX: &str = ".blob";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Model,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub kind: StoreKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
    pub entries: Vec<Entry>,
    pub checksum: u32,
}

impl StoreManifest {
    /// Structural checks that need no blob: version, non-empty, contiguous
    /// monotone offsets, lengths matching shapes.
    pub fn validate(&self, path: &Path) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version(self.format_version));
        }
        if self.entries.is_empty() {
            return Err(Error::format(path, "manifest has no entries"));
        }
        let mut expected_offset = 0u64;
        for e in &self.entries {
            if e.byte_offset != expected_offset {
                return Err(Error::format(
                    path,
                    format!("entry {} starts at {}, expected {expected_offset}", e.name, e.byte_offset),
                ));
            }
            let want = 4 * e.shape.iter().product::<usize>() as u64;
            if e.byte_length != want {
                return Err(Error::format(
                    path,
                    format!("entry {} has {} bytes, shape needs {want}", e.name, e.byte_length),
                ));
            }
            expected_offset += e.byte_length;
        }
        Ok(())
    }

    fn blob_len(&self) -> u64 {
        self.entries.iter().map(|e| e.byte_length).sum()
    }
}

/// `(manifest, blob)` paths for a store prefix. A trailing
/// `.manifest.json` or `.blob` on `path` is ignored.
pub fn store_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = s
        .strip_suffix(MANIFEST_SUFFIX)
        .or_else(|| s.strip_suffix(BLOB_SUFFIX))
        .unwrap_or(&s);
    (
        PathBuf::from(format!("{stem}{MANIFEST_SUFFIX}")),
        PathBuf::from(format!("{stem}{BLOB_SUFFIX}")),
    )
}

pub fn running_mean_name(layer: usize) -> String {
    format!("hidden.{layer}.running_mean")
}

pub fn running_var_name(layer: usize) -> String {
    format!("hidden.{layer}.running_var")
}

fn write_store(
    path: &Path,
    kind: StoreKind,
    spec: Option<ModelSpec>,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    let (manifest_path, blob_path) = store_paths(path);
    let mut blob = Vec::with_capacity(tensors.iter().map(|(_, t)| 4 * t.len()).sum());
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let offset = blob.len() as u64;
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            byte_offset: offset,
            byte_length: blob.len() as u64 - offset,
        });
    }
    let manifest = StoreManifest {
        format_version: FORMAT_VERSION,
        kind,
        spec,
        entries,
        checksum: crc32fast::hash(&blob),
    };
    manifest.validate(&manifest_path)?;
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

fn read_store(path: &Path, kind: StoreKind) -> Result<(StoreManifest, Vec<(String, Tensor)>)> {
    let (manifest_path, blob_path) = store_paths(path);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: StoreManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    manifest.validate(&manifest_path)?;
    if manifest.kind != kind {
        return Err(Error::format(
            &manifest_path,
            format!("expected a {kind:?} store, found {:?}", manifest.kind),
        ));
    }
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let actual = crc32fast::hash(&blob);
    if actual != manifest.checksum {
        return Err(Error::Checksum {
            expected: manifest.checksum,
            actual,
        });
    }
    if blob.len() as u64 != manifest.blob_len() {
        return Err(Error::format(
            &blob_path,
            format!("blob has {} bytes, manifest covers {}", blob.len(), manifest.blob_len()),
        ));
    }
    let tensors = manifest
        .entries
        .iter()
        .map(|e| {
            let bytes = &blob[e.byte_offset as usize..(e.byte_offset + e.byte_length) as usize];
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Tensor::new(e.shape.clone(), data).map(|t| (e.name.clone(), t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, tensors))
}

/// Writes parameters in canonical order followed by running norm statistics.
pub fn save_model(m: &ModelState, path: &Path) -> Result<()> {
    m.validate()?;
    let mut tensors: Vec<(String, &Tensor)> = m
        .spec
        .param_shapes()
        .into_iter()
        .map(|(name, _)| {
            let t = m.param(&name);
            (name, t)
        })
        .collect();
    let stats: Vec<(usize, Tensor, Tensor)> = m
        .norm_stats
        .iter()
        .map(|(&i, s)| {
            Ok((i, Tensor::vector(s.mean.clone())?, Tensor::vector(s.var.clone())?))
        })
        .collect::<Result<_>>()?;
    for (i, mean, var) in &stats {
        tensors.push((running_mean_name(*i), mean));
        tensors.push((running_var_name(*i), var));
    }
    write_store(path, StoreKind::Model, Some(m.spec.clone()), &tensors)
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    let (manifest, tensors) = read_store(path, StoreKind::Model)?;
    let (manifest_path, _) = store_paths(path);
    let spec = manifest
        .spec
        .ok_or_else(|| Error::format(&manifest_path, "model manifest lacks a spec"))?;
    let mut params = BTreeMap::new();
    let mut means = BTreeMap::new();
    let mut vars = BTreeMap::new();
    for (name, t) in tensors {
        let stat = name
            .strip_prefix("hidden.")
            .and_then(|rest| rest.split_once('.'))
            .and_then(|(i, field)| Some((i.parse::<usize>().ok()?, field)));
        match stat {
            Some((i, "running_mean")) => {
                means.insert(i, t.into_data());
            }
            Some((i, "running_var")) => {
                vars.insert(i, t.into_data());
            }
            _ => {
                if params.insert(name.clone(), t).is_some() {
                    return Err(Error::format(&manifest_path, format!("duplicate entry {name}")));
                }
            }
        }
    }
    let mut norm_stats = BTreeMap::new();
    for (i, mean) in means {
        let var = vars
            .remove(&i)
            .ok_or_else(|| Error::format(&manifest_path, format!("layer {i} lacks running_var")))?;
        norm_stats.insert(i, NormStats { mean, var });
    }
    if let Some(i) = vars.keys().next() {
        return Err(Error::format(&manifest_path, format!("layer {i} lacks running_mean")));
    }
    ModelState::from_parts(spec, params, norm_stats)
}

pub fn save_probe(p: &ActivationProbe, path: &Path) -> Result<()> {
    let names: Vec<String> = (0..p.layers.len()).map(|l| format!("layer.{l}")).collect();
    let tensors: Vec<(String, &Tensor)> = names.into_iter().zip(&p.layers).collect();
    write_store(path, StoreKind::Probe, None, &tensors)
}

pub fn load_probe(path: &Path) -> Result<ActivationProbe> {
    let (_, tensors) = read_store(path, StoreKind::Probe)?;
    ActivationProbe::new(tensors.into_iter().map(|(_, t)| t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelSpec};
    use proptest::prelude::*;

    fn bits(m: &ModelState) -> Vec<u32> {
        m.flatten().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let spec: ModelSpec = "6-8g2-5-3".parse().unwrap();
        let mut m = build_model(&spec.with_heads(2), 4).unwrap();
        m.norm_stats.get_mut(&0).unwrap().mean = vec![0.25, -1.5];
        let p1 = dir.path().join("a");
        let p2 = dir.path().join("b");
        save_model(&m, &p1).unwrap();
        let back = load_model(&p1).unwrap();
        assert_eq!(back, m);
        save_model(&back, &p2).unwrap();
        let (m1, b1) = store_paths(&p1);
        let (m2, b2) = store_paths(&p2);
        assert_eq!(fs::read(b1).unwrap(), fs::read(b2).unwrap());
        assert_eq!(fs::read(m1).unwrap(), fs::read(m2).unwrap());
    }

    #[test]
    fn corrupted_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m");
        save_model(&build_model(&ModelSpec::mlp(3, &[4], 2), 0).unwrap(), &p).unwrap();
        let (_, blob) = store_paths(&p);
        let mut bytes = fs::read(&blob).unwrap();
        bytes[5] ^= 0x40;
        fs::write(&blob, bytes).unwrap();
        assert!(matches!(load_model(&p), Err(Error::Checksum { .. })));
    }

    #[test]
    fn manifest_validation() {
        let path = Path::new("x.manifest.json");
        let mut man = StoreManifest {
            format_version: FORMAT_VERSION,
            kind: StoreKind::Model,
            spec: None,
            entries: vec![],
            checksum: 0,
        };
        assert!(matches!(man.validate(path), Err(Error::Format { .. })));
        man.entries.push(Entry {
            name: "w".into(),
            shape: vec![2, 3],
            byte_offset: 0,
            byte_length: 24,
        });
        assert!(man.validate(path).is_ok());
        man.entries.push(Entry {
            name: "v".into(),
            shape: vec![1],
            byte_offset: 20,
            byte_length: 4,
        });
        assert!(man.validate(path).is_err());
        man.entries.pop();
        man.format_version = 2;
        assert!(matches!(man.validate(path), Err(Error::Version(2))));
    }

    #[test]
    fn shape_tampering_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m");
        save_model(&build_model(&ModelSpec::mlp(3, &[4], 2), 0).unwrap(), &p).unwrap();
        let (man, _) = store_paths(&p);
        let text = fs::read_to_string(&man).unwrap();
        let mut parsed: StoreManifest = serde_json::from_str(&text).unwrap();
        parsed.entries[0].shape = vec![3, 4];
        fs::write(&man, serde_json::to_string(&parsed).unwrap()).unwrap();
        assert!(matches!(load_model(&p), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_model(&dir.path().join("nope")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn probe_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = ActivationProbe::new(vec![
            Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap(),
            Tensor::matrix(1, 3, vec![-1.0, 0.0, f32::MIN_POSITIVE]).unwrap(),
        ])
        .unwrap();
        save_probe(&p, &dir.path().join("probe")).unwrap();
        assert_eq!(load_probe(&dir.path().join("probe.manifest.json")).unwrap(), p);
        assert!(load_model(&dir.path().join("probe")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn load_save_is_bitwise_identity(seed in any::<u64>(), width in 1usize..12, scale in -1e30f32..1e30) {
            let dir = tempfile::tempdir().unwrap();
            let mut m = build_model(&ModelSpec::mlp(3, &[width, 4], 2), seed).unwrap();
            m.param_mut("hidden.0.bias").data_mut()[0] = scale;
            m.param_mut("hidden.1.bias").data_mut()[0] = -0.0;
            let p = dir.path().join("m");
            save_model(&m, &p).unwrap();
            let back = load_model(&p).unwrap();
            prop_assert_eq!(bits(&back), bits(&m));
        }
    }
}
