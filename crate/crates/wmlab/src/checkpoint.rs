//! Versioned binary checkpoint: magic + JSON header + raw f32 parameter
//! payload in store order. Loading rejects a mismatched config hash.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wmlab_nn::ParamStore;

use crate::digest::StreamDigest;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WMLABCK1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub module: String,
    pub config_hash: String,
    pub step: u64,
    pub seed: u64,
    #[serde(default)]
    pub phase: Option<String>,
}

pub fn save_checkpoint(store: &ParamStore, header: &CheckpointHeader, path: &Path) -> Result<()> {
    let header_json = serde_json::to_vec(header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for i in 0..store.len() {
        let p = store.get(i);
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    if *pos + 4 > bytes.len() {
        return Err(Error::Incompatible("truncated checkpoint".into()));
    }
    let v = u32::from_le_bytes([bytes[*pos], bytes[*pos + 1], bytes[*pos + 2], bytes[*pos + 3]]);
    *pos += 4;
    Ok(v)
}

/// Read just the header.
pub fn peek_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path)
        .map_err(|_| Error::MissingArtifact(format!("checkpoint {}", path.display())))?;
    parse_header(&bytes).map(|(h, _)| h)
}

fn parse_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Incompatible("not a checkpoint file".into()));
    }
    let mut pos = 8;
    let hlen = read_u32(bytes, &mut pos)? as usize;
    if pos + hlen > bytes.len() {
        return Err(Error::Incompatible("truncated checkpoint header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[pos..pos + hlen])?;
    Ok((header, pos + hlen))
}

/// Load parameters by name into an already-built store of the same
/// architecture. `restrict_groups`, when nonempty, loads only those groups.
pub fn load_checkpoint(
    store: &mut ParamStore,
    path: &Path,
    expected_config_hash: &str,
    restrict_groups: &[&str],
) -> Result<CheckpointHeader> {
    let bytes = fs::read(path)
        .map_err(|_| Error::MissingArtifact(format!("checkpoint {}", path.display())))?;
    let (header, mut pos) = parse_header(&bytes)?;
    if header.config_hash != expected_config_hash {
        return Err(Error::Incompatible(format!(
            "checkpoint config hash {} does not match expected {expected_config_hash}",
            header.config_hash
        )));
    }
    let mut by_name: std::collections::BTreeMap<String, usize> = Default::default();
    for i in 0..store.len() {
        by_name.insert(store.get(i).name.clone(), i);
    }
    let mut loaded = 0usize;
    while pos < bytes.len() {
        let nlen = read_u32(&bytes, &mut pos)? as usize;
        let name = String::from_utf8(bytes[pos..pos + nlen].to_vec())
            .map_err(|_| Error::Incompatible("bad parameter name".into()))?;
        pos += nlen;
        let rows = read_u32(&bytes, &mut pos)? as usize;
        let cols = read_u32(&bytes, &mut pos)? as usize;
        let n = rows * cols;
        if pos + 4 * n > bytes.len() {
            return Err(Error::Incompatible(format!("truncated payload for {name}")));
        }
        if let Some(&i) = by_name.get(&name) {
            let take = restrict_groups.is_empty() || restrict_groups.contains(&store.group_of(i));
            if take {
                let value = store.get(i).value.clone();
                if value.rows() != rows || value.cols() != cols {
                    return Err(Error::Incompatible(format!(
                        "{name}: checkpoint shape {rows}x{cols} vs model {}x{}",
                        value.rows(),
                        value.cols()
                    )));
                }
                let dst = store.get_mut(i).value.data_mut();
                for (j, chunk) in bytes[pos..pos + 4 * n].chunks_exact(4).enumerate() {
                    dst[j] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                }
                loaded += 1;
            }
        }
        pos += 4 * n;
    }
    if loaded == 0 {
        return Err(Error::Incompatible(format!(
            "checkpoint {} shares no parameters with this model",
            path.display()
        )));
    }
    Ok(header)
}

/// Digest of one parameter group's exact bytes (freeze-contract checks).
pub fn group_digest(store: &ParamStore, group: &str) -> String {
    let mut d = StreamDigest::new();
    for &i in store.group_params(group) {
        let p = store.get(i);
        d.update_bytes(p.name.as_bytes());
        d.update_f32s(p.value.data());
    }
    d.finish()
}

/// Digest over every group, keyed by name, for whole-checkpoint comparisons.
pub fn store_digest(store: &ParamStore) -> String {
    let mut d = StreamDigest::new();
    for g in store.groups() {
        d.update_bytes(g.name.as_bytes());
        for &i in &g.params {
            let p = store.get(i);
            d.update_bytes(p.name.as_bytes());
            d.update_f32s(p.value.data());
        }
    }
    d.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use wmlab_nn::Tensor;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add_normal("idm", "a", 2, 3, 1.0, 1);
        s.add_normal("quantizer", "b", 4, 2, 1.0, 2);
        s
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = std::env::temp_dir().join(format!("wmlab-ckpt-{}", std::process::id()));
        let path = dir.join("m.ckpt");
        let s = store();
        let header = CheckpointHeader {
            module: "test".into(),
            config_hash: "h1".into(),
            step: 10,
            seed: 3,
            phase: None,
        };
        save_checkpoint(&s, &header, &path).unwrap();

        let mut s2 = store();
        s2.get_mut(0).value.data_mut()[0] = 99.0;
        let h = load_checkpoint(&mut s2, &path, "h1", &[]).unwrap();
        assert_eq!(h.step, 10);
        assert_eq!(store_digest(&s), store_digest(&s2));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn mismatched_config_hash_is_rejected() {
        let dir = std::env::temp_dir().join(format!("wmlab-ckpt2-{}", std::process::id()));
        let path = dir.join("m.ckpt");
        let s = store();
        let header = CheckpointHeader {
            module: "test".into(),
            config_hash: "h1".into(),
            step: 0,
            seed: 0,
            phase: None,
        };
        save_checkpoint(&s, &header, &path).unwrap();
        let mut s2 = store();
        assert!(matches!(
            load_checkpoint(&mut s2, &path, "other", &[]),
            Err(Error::Incompatible(_))
        ));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn group_restriction_loads_only_that_group() {
        let dir = std::env::temp_dir().join(format!("wmlab-ckpt3-{}", std::process::id()));
        let path = dir.join("m.ckpt");
        let mut s = store();
        save_checkpoint(
            &s,
            &CheckpointHeader { module: "t".into(), config_hash: "h".into(), step: 0, seed: 0, phase: None },
            &path,
        )
        .unwrap();
        // scramble both groups, restore only "idm"
        s.get_mut(0).value = Tensor::full(2, 3, 7.0);
        s.get_mut(1).value = Tensor::full(4, 2, 7.0);
        let before_q = group_digest(&s, "quantizer");
        load_checkpoint(&mut s, &path, "h", &["idm"]).unwrap();
        assert_ne!(s.get(0).value.data()[0], 7.0);
        assert_eq!(group_digest(&s, "quantizer"), before_q);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
