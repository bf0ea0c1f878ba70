//! Persisted model bundle: `manifest.json` plus `tensors.bin`.
//!
//! `tensors.bin` is a concatenation of records, each
//! `u32 rank, rank × u32 dims, prod(dims) × f32` (all little-endian).
//! The manifest lists the tensor names in record order together with the
//! SHA-256 of the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::write_atomic;
use crate::autoencoder::{AutoencoderSpec, AutoencoderState};
use crate::error::{Error, Result};
use crate::inference::{InferenceConfig, InferenceModel};
use crate::tensor::{NamedTensor, TensorMap};

pub const BUNDLE_VERSION: &str = "v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSection {
    pub config: InferenceConfig,
    /// Descriptor columns the model consumes, in order.
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: String,
    pub config: serde_json::Value,
    pub appearance: Option<AutoencoderSpec>,
    pub temporal: Option<AutoencoderSpec>,
    pub inference: Option<InferenceSection>,
    pub tensors: Vec<String>,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelBundle {
    /// Free-form echo of the configuration that produced the bundle.
    pub config: serde_json::Value,
    pub appearance: Option<AutoencoderState>,
    pub temporal: Option<AutoencoderState>,
    pub inference: Option<(InferenceModel, Vec<usize>)>,
}

pub fn encode_tensors(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    for t in tensors {
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("tensor payload is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8], names: &[String]) -> Result<Vec<NamedTensor>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let rank = cur.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor `{name}` has implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let bytes_needed = shape
            .iter()
            .try_fold(4usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let data = cur
            .take(bytes_needed)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(NamedTensor {
            name: name.clone(),
            shape,
            data,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "tensor payload has {} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok(out)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelBundle {
    fn tensors(&self) -> Vec<NamedTensor> {
        let mut t = Vec::new();
        if let Some(ae) = &self.appearance {
            t.extend(ae.to_tensors("appearance"));
        }
        if let Some(ae) = &self.temporal {
            t.extend(ae.to_tensors("temporal"));
        }
        if let Some((m, _)) = &self.inference {
            t.extend(m.to_tensors("inference"));
        }
        t
    }

    /// Serialized (manifest, payload) pair.
    pub fn encode(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let tensors = self.tensors();
        let payload = encode_tensors(&tensors);
        let manifest = BundleManifest {
            version: BUNDLE_VERSION.to_string(),
            config: self.config.clone(),
            appearance: self.appearance.as_ref().map(|a| a.spec.clone()),
            temporal: self.temporal.as_ref().map(|a| a.spec.clone()),
            inference: self.inference.as_ref().map(|(m, c)| InferenceSection {
                config: m.config.clone(),
                columns: c.clone(),
            }),
            tensors: tensors.into_iter().map(|t| t.name).collect(),
            payload_sha256: sha256_hex(&payload),
        };
        let mut json = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| Error::Format(format!("cannot serialize manifest: {e}")))?;
        json.push(b'\n');
        Ok((json, payload))
    }

    pub fn decode(manifest: &[u8], payload: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(manifest)
            .map_err(|e| Error::Format(format!("manifest is not valid JSON: {e}")))?;
        match value.get("version").and_then(|v| v.as_str()) {
            Some(BUNDLE_VERSION) => {}
            Some(v) => {
                return Err(Error::Incompatible(format!(
                    "bundle version `{v}`, this build reads `{BUNDLE_VERSION}`"
                )))
            }
            None => return Err(Error::Format("manifest has no version field".into())),
        }
        let manifest: BundleManifest = serde_json::from_value(value)
            .map_err(|e| Error::Format(format!("malformed manifest: {e}")))?;
        if sha256_hex(payload) != manifest.payload_sha256 {
            return Err(Error::Corrupt("tensor payload checksum does not match the manifest".into()));
        }
        let map = TensorMap::new(decode_tensors(payload, &manifest.tensors)?);
        let appearance = manifest
            .appearance
            .as_ref()
            .map(|s| AutoencoderState::from_tensors(s, "appearance", &map))
            .transpose()?;
        let temporal = manifest
            .temporal
            .as_ref()
            .map(|s| AutoencoderState::from_tensors(s, "temporal", &map))
            .transpose()?;
        let inference = match &manifest.inference {
            Some(sec) => {
                let m = InferenceModel::from_tensors(&sec.config, "inference", &map)?;
                if m.dims() != sec.columns.len() {
                    return Err(Error::Format(format!(
                        "inference model has {} inputs but {} columns are listed",
                        m.dims(),
                        sec.columns.len()
                    )));
                }
                Some((m, sec.columns.clone()))
            }
            None => None,
        };
        Ok(Self {
            config: manifest.config,
            appearance,
            temporal,
            inference,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let (manifest, payload) = self.encode()?;
        // payload first: a manifest never points at a missing payload
        write_atomic(dir.join(TENSORS_FILE), &payload)?;
        write_atomic(dir.join(MANIFEST_FILE), &manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::io(p, e))
        };
        Self::decode(&read(MANIFEST_FILE)?, &read(TENSORS_FILE)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::ae_init;

    fn small_spec() -> AutoencoderSpec {
        AutoencoderSpec {
            input_size: 8,
            encoder_widths: [2, 2, 2, 2],
            decoder_widths: [2, 2, 2],
        }
    }

    #[test]
    fn tensor_records_round_trip() {
        let t = vec![
            NamedTensor::new("a", vec![2, 2], vec![1.0, -2.0, 3.5, f32::MIN_POSITIVE]),
            NamedTensor::scalar("b", 0.25),
            NamedTensor::new("c", vec![0, 3], vec![]),
        ];
        let names: Vec<String> = t.iter().map(|t| t.name.clone()).collect();
        assert_eq!(decode_tensors(&encode_tensors(&t), &names).unwrap(), t);
    }

    #[test]
    fn truncated_payload() {
        let t = vec![NamedTensor::new("a", vec![3], vec![1.0, 2.0, 3.0])];
        let bytes = encode_tensors(&t);
        assert!(matches!(
            decode_tensors(&bytes[..bytes.len() - 1], &["a".into()]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn autoencoder_bundle_round_trip() {
        let b = ModelBundle {
            config: serde_json::json!({"seed": 3}),
            appearance: Some(ae_init(&small_spec(), 1).unwrap()),
            temporal: Some(ae_init(&small_spec(), 2).unwrap()),
            inference: None,
        };
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        let back = ModelBundle::load(dir.path()).unwrap();
        assert_eq!(back, b);
        let (m1, p1) = b.encode().unwrap();
        let (m2, p2) = back.encode().unwrap();
        assert_eq!((m1, p1), (m2, p2));
    }

    #[test]
    fn version_and_checksum() {
        let b = ModelBundle {
            appearance: Some(ae_init(&small_spec(), 1).unwrap()),
            ..Default::default()
        };
        let (m, p) = b.encode().unwrap();
        let text = String::from_utf8(m.clone()).unwrap().replace("\"v1\"", "\"v999\"");
        assert!(matches!(ModelBundle::decode(text.as_bytes(), &p), Err(Error::Incompatible(_))));
        let mut bad = p.clone();
        bad[10] ^= 0x40;
        assert!(matches!(ModelBundle::decode(&m, &bad), Err(Error::Corrupt(_))));
    }
}
