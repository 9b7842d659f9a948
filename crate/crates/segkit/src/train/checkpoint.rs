//! Checkpoints: a text manifest of parameter names and shapes next to a
//! single file of concatenated binary tensor blobs, in manifest order.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::io::{read_tensor, write_tensor};

const MANIFEST_FILE: &str = "manifest.txt";
const TENSORS_FILE: &str = "tensors.segkt";

pub fn save_checkpoint(dir: &Path, store: &ParamStore) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut manifest = String::new();
    let mut blob = Vec::new();
    for (_, p) in store.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{}\t{}\n", p.name, dims.join("x")));
        write_tensor(&mut blob, &p.value).map_err(|e| Error::io(TENSORS_FILE, e))?;
    }
    let mpath = dir.join(MANIFEST_FILE);
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    let tpath = dir.join(TENSORS_FILE);
    let mut f =
        std::fs::File::create(&tpath).map_err(|e| Error::io(tpath.display().to_string(), e))?;
    f.write_all(&blob)
        .map_err(|e| Error::io(tpath.display().to_string(), e))?;
    Ok(())
}

/// Load checkpoint values into a freshly built store. Names and shapes
/// must match the store's registration order exactly.
pub fn load_checkpoint(dir: &Path, store: &mut ParamStore) -> Result<()> {
    let mpath = dir.join(MANIFEST_FILE);
    let manifest = std::fs::read_to_string(&mpath)
        .map_err(|_| Error::MissingFile(mpath.display().to_string()))?;
    let tpath = dir.join(TENSORS_FILE);
    let blob = std::fs::read(&tpath).map_err(|_| Error::MissingFile(tpath.display().to_string()))?;
    let mut cursor = blob.as_slice();

    let names: Vec<&str> = manifest
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split('\t').next().unwrap_or(""))
        .collect();
    if names.len() != store.len() {
        return Err(Error::BadManifest(format!(
            "checkpoint has {} parameters, model wants {}",
            names.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (i, id) in ids.into_iter().enumerate() {
        let expected = store.get(id).name.clone();
        if names[i] != expected {
            return Err(Error::BadManifest(format!(
                "checkpoint parameter {i} is {:?}, model wants {expected:?}",
                names[i]
            )));
        }
        let tensor = read_tensor(&mut cursor)?;
        if tensor.shape() != store.value(id).shape() {
            return Err(Error::BadManifest(format!(
                "checkpoint shape {:?} vs model {:?} for {expected}",
                tensor.shape(),
                store.value(id).shape()
            )));
        }
        store.set_value(id, tensor);
    }
    Ok(())
}

/// Serialized bytes of every parameter under a name prefix; used to
/// verify that frozen subtrees do not change.
pub fn prefix_bytes(store: &ParamStore, prefix: &str) -> Vec<u8> {
    let mut out = Vec::new();
    for (_, p) in store.iter() {
        if p.name.starts_with(prefix) {
            write_tensor(&mut out, &p.value).expect("in-memory write");
        }
    }
    out
}
