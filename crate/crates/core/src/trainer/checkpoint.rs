use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::adam::AdamState;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::nn::ParamSet;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
const MAGIC: &[u8; 4] = b"MBT1";
const TENSOR_KEY: &str = "tensor";

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl StoredTensor {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic, expected MBT1".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("four bytes"));
        let rank = word(4) as usize;
        let header = 8 + 4 * rank;
        if bytes.len() < header {
            return Err(bad(format!("truncated header for rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank).map(|i| word(8 + 4 * i) as usize).collect();
        let n: usize = shape.iter().product();
        if bytes.len() != header + 4 * n {
            return Err(bad(format!(
                "payload is {} bytes, shape {shape:?} needs {}",
                bytes.len() - header,
                4 * n
            )));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        Ok(StoredTensor { shape, data })
    }
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

/// A manifest plus named tensors. Stored as a directory holding
/// `manifest.txt` and one `<name>.mbt` file per tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelCheckpoint {
    pub manifest: Manifest,
    tensors: BTreeMap<String, StoredTensor>,
}

impl ModelCheckpoint {
    pub fn new(manifest: Manifest) -> Self {
        ModelCheckpoint {
            manifest,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert_tensor(&mut self, name: &str, tensor: StoredTensor) {
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn tensor(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.get(name)
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let dotted = format!("{prefix}.");
        self.tensors.keys().any(|k| k.starts_with(&dotted))
    }

    /// Stores every parameter as `prefix.<name>`.
    pub fn insert_params(&mut self, prefix: &str, params: &ParamSet<f32>) {
        for name in params.names() {
            let t = StoredTensor {
                shape: params.shape(name).expect("own name").to_vec(),
                data: params.values(name).expect("own name").to_vec(),
            };
            self.insert_tensor(&format!("{prefix}.{name}"), t);
        }
    }

    /// The tensors under `prefix.` as a parameter set.
    pub fn params(&self, prefix: &str) -> Result<ParamSet<f32>> {
        let dotted = format!("{prefix}.");
        let mut ps = ParamSet::new();
        for (k, t) in &self.tensors {
            if let Some(name) = k.strip_prefix(&dotted) {
                ps.insert(name, &t.shape, t.data.clone());
            }
        }
        if ps.is_empty() {
            return Err(Error::ArchitectureMismatch(format!("checkpoint has no `{prefix}` tensors")));
        }
        Ok(ps)
    }

    /// Stores moment estimates as `prefix.m.<name>` and `prefix.v.<name>`;
    /// the step count goes to the manifest.
    pub fn insert_adam(&mut self, prefix: &str, params: &ParamSet<f32>, state: &AdamState<f32>) {
        self.manifest.set(format!("{prefix}.t"), state.t);
        for (kind, map) in [("m", &state.m), ("v", &state.v)] {
            for (name, data) in map {
                let shape = params.shape(name).map(<[usize]>::to_vec).unwrap_or_else(|_| vec![data.len()]);
                self.insert_tensor(
                    &format!("{prefix}.{kind}.{name}"),
                    StoredTensor {
                        shape,
                        data: data.clone(),
                    },
                );
            }
        }
    }

    pub fn adam(&self, prefix: &str) -> Result<AdamState<f32>> {
        let mut st = AdamState::new();
        st.t = self.manifest.parse_or(&format!("{prefix}.t"), 0)?;
        for (kind, map) in [("m", &mut st.m), ("v", &mut st.v)] {
            let dotted = format!("{prefix}.{kind}.");
            for (k, t) in &self.tensors {
                if let Some(name) = k.strip_prefix(&dotted) {
                    map.insert(name.to_string(), t.data.clone());
                }
            }
        }
        Ok(st)
    }

    /// Content hash over the manifest and every tensor payload.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest.to_text().as_bytes());
        for (k, t) in &self.tensors {
            h.update(k.as_bytes());
            h.update(t.encode());
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn full_manifest(&self) -> Manifest {
        let mut m = self.manifest.clone();
        m.set("format_version", FORMAT_VERSION);
        for (k, t) in &self.tensors {
            m.set(format!("{TENSOR_KEY}.{k}"), shape_text(&t.shape));
        }
        m
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (k, t) in &self.tensors {
            fs::write(dir.join(format!("{k}.mbt")), t.encode())?;
        }
        fs::write(dir.join(MANIFEST_FILE), self.full_manifest().to_text())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::Checkpoint {
            path: mpath.clone(),
            reason: e.to_string(),
        })?;
        let full = Manifest::from_text(&text).map_err(|e| Error::Checkpoint {
            path: mpath.clone(),
            reason: e.to_string(),
        })?;
        let version: u32 = full.parse("format_version")?.ok_or_else(|| Error::Checkpoint {
            path: mpath.clone(),
            reason: "missing format_version".into(),
        })?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint {
                path: mpath,
                reason: format!("unsupported format_version {version}"),
            });
        }
        let mut ck = ModelCheckpoint::default();
        let listed = full.section(TENSOR_KEY);
        for (k, v) in full.iter() {
            if k != "format_version" && !k.starts_with(&format!("{TENSOR_KEY}.")) {
                ck.manifest.set(k, v);
            }
        }
        for (name, shape) in listed.iter() {
            let path: PathBuf = dir.join(format!("{name}.mbt"));
            let bytes = fs::read(&path).map_err(|e| Error::Checkpoint {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let t = StoredTensor::decode(&bytes, &path)?;
            if shape_text(&t.shape) != shape {
                return Err(Error::Checkpoint {
                    path,
                    reason: format!("manifest lists shape {shape}, file holds {}", shape_text(&t.shape)),
                });
            }
            ck.tensors.insert(name.to_string(), t);
        }
        Ok(ck)
    }
}

/// Compares parameter names and shapes against a reference layout.
pub fn check_layout(expected: &ParamSet<f32>, got: &ParamSet<f32>, what: &str) -> Result<()> {
    let a: Vec<&str> = expected.names().collect();
    let b: Vec<&str> = got.names().collect();
    if let Some(missing) = a.iter().find(|n| !got.contains(n)) {
        return Err(Error::ArchitectureMismatch(format!("{what}: checkpoint lacks parameter {missing}")));
    }
    if let Some(extra) = b.iter().find(|n| !expected.contains(n)) {
        return Err(Error::ArchitectureMismatch(format!("{what}: unexpected parameter {extra} in checkpoint")));
    }
    for n in a {
        let (sa, sb) = (expected.shape(n)?, got.shape(n)?);
        if sa != sb {
            return Err(Error::ArchitectureMismatch(format!("{what}: {n} has shape {sb:?}, expected {sa:?}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tensor_layout() {
        let t = StoredTensor {
            shape: vec![2, 1],
            data: vec![1.0, -2.5],
        };
        let bytes = t.encode();
        assert_eq!(&bytes[..4], b"MBT1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24);
        let p = Path::new("x.mbt");
        assert_eq!(StoredTensor::decode(&bytes, p).unwrap(), t);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(StoredTensor::decode(&bad, p), Err(Error::Checkpoint { .. })));
        assert!(StoredTensor::decode(&bytes[..20], p).is_err());
    }

    fn sample() -> ModelCheckpoint {
        let mut m = Manifest::new();
        m.set("kind", "generator");
        let mut ck = ModelCheckpoint::new(m);
        let mut ps = ParamSet::new();
        ps.insert("a.weight", &[2, 2], vec![0.1, 0.2, 0.3, f32::MIN_POSITIVE]);
        ps.insert("b", &[1], vec![-0.0]);
        ck.insert_params("generator", &ps);
        ck
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        ck.save(d1.path()).unwrap();
        let back = ModelCheckpoint::load(d1.path()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.id(), ck.id());
        back.save(d2.path()).unwrap();
        for f in ["manifest.txt", "generator.a.weight.mbt", "generator.b.mbt"] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap());
        }
        let text = fs::read_to_string(d1.path().join("manifest.txt")).unwrap();
        assert!(text.contains("format_version = 1"));
        assert_eq!(text.matches("tensor.generator.a.weight").count(), 1);
    }

    #[test]
    fn load_errors_name_the_file() {
        let d = tempfile::tempdir().unwrap();
        sample().save(d.path()).unwrap();
        let f = d.path().join("generator.b.mbt");
        fs::write(&f, b"JUNKJUNK").unwrap();
        match ModelCheckpoint::load(d.path()) {
            Err(Error::Checkpoint { path, .. }) => assert_eq!(path, f),
            other => panic!("unexpected {other:?}"),
        }
        fs::remove_file(&f).unwrap();
        assert!(matches!(ModelCheckpoint::load(d.path()), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn layout_check() {
        let ck = sample();
        let ps = ck.params("generator").unwrap();
        check_layout(&ps, &ps, "g").unwrap();
        let mut other = ParamSet::new();
        other.insert("a.weight", &[4], vec![0.0; 4]);
        other.insert("b", &[1], vec![0.0]);
        assert!(matches!(check_layout(&other, &ps, "g"), Err(Error::ArchitectureMismatch(_))));
        assert!(matches!(ck.params("critic"), Err(Error::ArchitectureMismatch(_))));
    }

    proptest! {
        #[test]
        fn tensor_round_trip(shape in prop::collection::vec(1usize..4, 0..4), seed in any::<u32>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32) & 0x7f7f_ffff)).collect();
            let t = StoredTensor { shape, data };
            let back = StoredTensor::decode(&t.encode(), Path::new("p")).unwrap();
            prop_assert_eq!(back.encode(), t.encode());
        }
    }
}
