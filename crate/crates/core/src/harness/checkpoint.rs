//! Checkpoints: a JSON manifest naming every tensor and its shape, next to a
//! payload of little-endian `f64` values in manifest order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, HarnessError, Result};
use crate::gpl::Algorithm;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT: &str = "openteam-checkpoint/1";
/// Name prefix of target-network entries.
pub const TARGET_PREFIX: &str = "target/";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config_hash: String,
    pub global_step: u64,
    pub algorithm: Algorithm,
    /// Payload file name, relative to the manifest.
    pub payload: String,
    pub payload_bytes: u64,
    pub payload_sha256: String,
    /// Digest of the entry list, so shape edits are caught on load.
    pub layout_sha256: String,
    pub params: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub online: ParamStore,
    pub target: ParamStore,
}

fn layout_digest(entries: &[Entry]) -> String {
    let mut h = Sha256::new();
    for e in entries {
        h.update(e.name.as_bytes());
        h.update([0u8]);
        for d in &e.shape {
            h.update((*d as u64).to_le_bytes());
        }
        h.update([0xffu8]);
    }
    hex::encode(h.finalize())
}

fn entries(online: &ParamStore, target: &ParamStore) -> Vec<(String, Tensor)> {
    online
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .chain(target.iter().map(|(k, v)| (format!("{TARGET_PREFIX}{k}"), v.clone())))
        .collect()
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`; returns the manifest path.
pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    config_hash: &str,
    global_step: u64,
    algorithm: Algorithm,
    online: &ParamStore,
    target: &ParamStore,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let all = entries(online, target);
    let mut payload = Vec::with_capacity(all.iter().map(|(_, t)| t.len() * 8).sum());
    for (_, t) in &all {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let params: Vec<Entry> = all
        .iter()
        .map(|(name, t)| Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let payload_name = format!("{stem}.bin");
    let manifest = Manifest {
        format: FORMAT.into(),
        config_hash: config_hash.into(),
        global_step,
        algorithm,
        payload: payload_name.clone(),
        payload_bytes: payload.len() as u64,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
        layout_sha256: layout_digest(&params),
        params,
    };
    let bin = dir.join(&payload_name);
    std::fs::write(&bin, &payload).map_err(io_err(&bin))?;
    let path = dir.join(format!("{stem}.json"));
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |m: String| HarnessError::Checkpoint(format!("{}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(bad(format!("unknown format {:?}", manifest.format)));
    }
    if layout_digest(&manifest.params) != manifest.layout_sha256 {
        return Err(bad("parameter names or shapes differ from the recorded layout".into()));
    }
    let bin = path.parent().unwrap_or(Path::new(".")).join(&manifest.payload);
    let payload = std::fs::read(&bin).map_err(io_err(&bin))?;
    let expected: usize = manifest.params.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if payload.len() != expected * 8 || payload.len() as u64 != manifest.payload_bytes {
        return Err(bad(format!(
            "payload has {} bytes, manifest describes {} values ({} bytes recorded)",
            payload.len(),
            expected,
            manifest.payload_bytes
        )));
    }
    if hex::encode(Sha256::digest(&payload)) != manifest.payload_sha256 {
        return Err(bad("payload digest mismatch".into()));
    }
    let mut online = ParamStore::new();
    let mut target = ParamStore::new();
    let mut offset = 0;
    for e in &manifest.params {
        let n: usize = e.shape.iter().product();
        let data = payload[offset..offset + 8 * n]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        offset += 8 * n;
        let t = Tensor::new(&e.shape, data).map_err(|err| bad(err.to_string()))?;
        let res = match e.name.strip_prefix(TARGET_PREFIX) {
            Some(name) => target.insert(name, t),
            None => online.insert(e.name.clone(), t),
        };
        res.map_err(|err| bad(err.to_string()))?;
    }
    Ok(Checkpoint {
        manifest,
        online,
        target,
    })
}

/// Line-per-difference comparison of names and shapes.
pub fn layout_diff(expected: &ParamStore, found: &ParamStore) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in expected.iter() {
        match found.get(k) {
            Err(_) => out.push(format!("- {k} {:?} missing", v.shape())),
            Ok(t) if t.shape() != v.shape() => {
                out.push(format!("~ {k} expected {:?}, found {:?}", v.shape(), t.shape()))
            }
            Ok(_) => {}
        }
    }
    for (k, v) in found.iter() {
        if !expected.contains(k) {
            out.push(format!("+ {k} {:?} unexpected", v.shape()));
        }
    }
    out
}

pub fn check_layout(expected: &ParamStore, found: &ParamStore) -> Result<()> {
    let diff = layout_diff(expected, found);
    if diff.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Incompatible(diff.join("\n")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store(seed: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("a.w", Tensor::new(&[2, 2], seed[..4].to_vec()).unwrap()).unwrap();
        p.insert("b", Tensor::vector(seed[4..].to_vec())).unwrap();
        p
    }

    fn save(dir: &Path, online: &ParamStore) -> PathBuf {
        let t = online.with_prefix("a.");
        save_checkpoint(dir, "ck", "h", 7, Algorithm::GplQ, online, &t).unwrap()
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(bits in prop::collection::vec(any::<u64>(), 6..12)) {
            let values: Vec<f64> = bits.iter().map(|b| f64::from_bits(*b)).collect();
            let dir = tempfile::tempdir().unwrap();
            let p = store(&values);
            let ck = load_checkpoint(&save(dir.path(), &p)).unwrap();
            for (k, v) in p.iter() {
                let got = ck.online.get(k).unwrap();
                prop_assert_eq!(got.shape(), v.shape());
                let a: Vec<u64> = got.data().iter().map(|x| x.to_bits()).collect();
                let b: Vec<u64> = v.data().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
            prop_assert_eq!(ck.target.len(), 1);
            prop_assert_eq!(ck.manifest.global_step, 7);
        }
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = save(dir.path(), &store(&[1.0; 7]));
        let bin = dir.path().join("ck.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(HarnessError::Checkpoint(_))));
    }

    #[test]
    fn shape_edit_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = save(dir.path(), &store(&[1.0; 7]));
        let text = std::fs::read_to_string(&path).unwrap();
        let mut m: Manifest = serde_json::from_str(&text).unwrap();
        m.params[0].shape = vec![4, 1];
        std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("shapes"), "{err}");
    }

    #[test]
    fn layout_diff_lists_every_difference() {
        let a = store(&[0.0; 7]);
        let mut b = ParamStore::new();
        b.insert("a.w", Tensor::zeros(&[4])).unwrap();
        b.insert("c", Tensor::zeros(&[1])).unwrap();
        let d = layout_diff(&a, &b);
        assert_eq!(d.len(), 3, "{d:?}");
        assert!(check_layout(&a, &a).is_ok());
        assert!(matches!(check_layout(&a, &b), Err(HarnessError::Incompatible(_))));
    }
}
