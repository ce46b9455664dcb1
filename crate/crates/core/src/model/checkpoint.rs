use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha1::{Digest, Sha1};

use super::{param_shapes, Model, ModelConfig, ModelError, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::tokenization::{BpeModel, WordPieceModel};

const MANIFEST: &str = "manifest.txt";
const TENSOR_DIR: &str = "tensors";
const BPE_VOCAB: &str = "bpe.vocab";
const BPE_MERGES: &str = "bpe.merges";
const WP_VOCAB: &str = "wp.vocab";
const FORMAT: &str = "1";

/// Hash of `bytes` as git stores a blob: SHA-1 over `"blob <len>\0"` + bytes.
pub fn git_blob_sha1(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A model on disk plus free-form metadata (seeds, training settings).
///
/// Layout: `manifest.txt` (`key = value` lines), the three tokenizer files
/// and `tensors/<name>.f64` holding little-endian `f64` values in row-major
/// order. The manifest records every file's hash and every tensor's shape;
/// loading checks both.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: BTreeMap<String, String>,
}

fn err(path: &Path, msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn tensor_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            meta: BTreeMap::new(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join(TENSOR_DIR))?;
        let m = &self.model;
        m.bpe.save(&dir.join(BPE_VOCAB), &dir.join(BPE_MERGES))?;
        m.wp.save(&dir.join(WP_VOCAB))?;

        let mut manifest = String::from("# orthoroberta checkpoint\n");
        manifest.push_str(&format!("format = {FORMAT}\n"));
        for (k, v) in m.config.to_pairs() {
            manifest.push_str(&format!("model.{k} = {v}\n"));
        }
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta.{k} = {v}\n"));
        }
        for f in [BPE_VOCAB, BPE_MERGES, WP_VOCAB] {
            let hash = git_blob_sha1(&fs::read(dir.join(f))?);
            manifest.push_str(&format!("file.{f} = {hash}\n"));
        }
        for (name, t) in m.params.iter() {
            let bytes = tensor_bytes(t);
            fs::write(dir.join(TENSOR_DIR).join(format!("{name}.f64")), &bytes)?;
            manifest.push_str(&format!(
                "tensor.{name} = {} {}\n",
                shape_str(t.shape()),
                git_blob_sha1(&bytes)
            ));
        }
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        if !manifest_path.is_file() {
            return Err(err(dir, "no manifest.txt"));
        }
        let src = fs::read_to_string(&manifest_path)?;
        let mut model_pairs = Vec::new();
        let mut meta = BTreeMap::new();
        let mut files = BTreeMap::new();
        let mut tensors = BTreeMap::new();
        let mut format = None;
        for (i, line) in src.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| err(&manifest_path, format!("line {}: expected `key = value`", i + 1)))?;
            if k == "format" {
                format = Some(v.to_string());
            } else if let Some(k) = k.strip_prefix("model.") {
                model_pairs.push((k.to_string(), v.to_string()));
            } else if let Some(k) = k.strip_prefix("meta.") {
                meta.insert(k.to_string(), v.to_string());
            } else if let Some(k) = k.strip_prefix("file.") {
                files.insert(k.to_string(), v.to_string());
            } else if let Some(k) = k.strip_prefix("tensor.") {
                tensors.insert(k.to_string(), v.to_string());
            } else {
                return Err(err(&manifest_path, format!("unknown key `{k}`")));
            }
        }
        if format.as_deref() != Some(FORMAT) {
            return Err(err(&manifest_path, format!("unsupported format {format:?}")));
        }
        let config = ModelConfig::from_pairs(model_pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;

        for f in [BPE_VOCAB, BPE_MERGES, WP_VOCAB] {
            let want = files.get(f).ok_or_else(|| err(dir, format!("manifest lacks file.{f}")))?;
            let path = dir.join(f);
            let bytes = fs::read(&path).map_err(|e| err(&path, e.to_string()))?;
            if &git_blob_sha1(&bytes) != want {
                return Err(err(&path, "content hash mismatch"));
            }
        }
        let bpe = BpeModel::load(&dir.join(BPE_VOCAB), &dir.join(BPE_MERGES))?;
        let wp = WordPieceModel::load(&dir.join(WP_VOCAB))?;

        let expected = param_shapes(&config);
        if expected.len() != tensors.len() {
            return Err(err(
                dir,
                format!("expected {} tensors, manifest lists {}", expected.len(), tensors.len()),
            ));
        }
        let mut params = ParamSet::new();
        for (name, shape) in expected {
            let entry = tensors
                .get(&name)
                .ok_or_else(|| err(dir, format!("missing tensor `{name}`")))?;
            let (shape_s, hash) = entry
                .split_once(' ')
                .ok_or_else(|| err(dir, format!("tensor `{name}`: malformed entry")))?;
            if shape_s != shape_str(&shape) {
                return Err(err(
                    dir,
                    format!("tensor `{name}`: shape {shape_s}, config implies {}", shape_str(&shape)),
                ));
            }
            let path = dir.join(TENSOR_DIR).join(format!("{name}.f64"));
            let bytes = fs::read(&path).map_err(|e| err(&path, e.to_string()))?;
            if git_blob_sha1(&bytes) != hash {
                return Err(err(&path, "content hash mismatch"));
            }
            let n: usize = shape.iter().product();
            if bytes.len() != n * 8 {
                return Err(err(&path, format!("{} bytes for {n} values", bytes.len())));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        let model = Model::new(config, params, bpe, wp)?;
        Ok(Self { model, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // values from `git hash-object`
        assert_eq!(git_blob_sha1(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
        assert_eq!(git_blob_sha1(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    }
}
