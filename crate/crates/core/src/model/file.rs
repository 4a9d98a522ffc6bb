//! Binary model container.
//!
//! ```text
//! magic "UFMODEL\0" | u32 format version | u64 metadata length | metadata JSON
//! | u32 tensor count | tensors | 32-byte SHA-256 of everything before it
//! tensor: u32 name length | name | u32 rank | u64 dims[rank] | f32 LE payload
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{FeatureRouting, ModelSpec};
use super::net::{head_specs, trunk_specs, ModelMetadata, MultiHeadNet, Normalization};
use crate::nn::{DenseLayer, Mlp};
use crate::sim::FeatureSchema;
use crate::{Arm, Error, Result};

const MAGIC: &[u8; 8] = b"UFMODEL\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct FileMetadata {
    schema_version: u32,
    arms: Vec<Arm>,
    feature_names: Vec<String>,
    spec: ModelSpec,
    routing: FeatureRouting,
    normalization: Normalization,
    metadata: ModelMetadata,
}

fn tensor_names(prefix: &str, mlp: &Mlp) -> Vec<(String, Vec<u64>, Vec<f32>)> {
    let mut out = Vec::new();
    for (l, layer) in mlp.layers().iter().enumerate() {
        out.push((
            format!("{prefix}.layer{l}.weight"),
            vec![layer.out_dim() as u64, layer.in_dim() as u64],
            layer.weights().to_vec(),
        ));
        out.push((format!("{prefix}.layer{l}.bias"), vec![layer.out_dim() as u64], layer.bias().to_vec()));
    }
    out
}

impl MultiHeadNet {
    /// Serialised model file bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = FileMetadata {
            schema_version: FORMAT_VERSION,
            arms: self.spec.arms.clone(),
            feature_names: self.schema.names().to_vec(),
            spec: self.spec.clone(),
            routing: self.routing.clone(),
            normalization: self.norm.clone(),
            metadata: self.meta.clone(),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serialises");
        let mut tensors = tensor_names("trunk", &self.trunk);
        for (arm, head) in self.spec.arms.iter().zip(&self.heads) {
            tensors.extend(tensor_names(&format!("heads.{arm}"), head));
        }

        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, dims, data) in tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                buf.extend_from_slice(&d.to_le_bytes());
            }
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    /// SHA-256 of [`MultiHeadNet::to_bytes`].
    pub fn digest(&self) -> String {
        crate::util::sha256_hex(&self.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return Err(Error::Format(format!("file is truncated ({} bytes)", bytes.len())));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            if &body[..MAGIC.len()] != MAGIC {
                return Err(Error::Format("not a model file (bad magic)".into()));
            }
            return Err(Error::Format("checksum mismatch: file is corrupted or truncated".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let meta_len = r.u64()? as usize;
        let meta: FileMetadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Format(format!("metadata: {e}")))?;
        if meta.schema_version != FORMAT_VERSION {
            return Err(Error::Format(format!("metadata schema version {} is not supported", meta.schema_version)));
        }
        if meta.arms != meta.spec.arms {
            return Err(Error::Format("arm order in metadata disagrees with the architecture".into()));
        }
        meta.spec.validate().map_err(|e| Error::Format(e.to_string()))?;
        let schema = FeatureSchema::from_names(meta.feature_names).map_err(|e| Error::Format(e.to_string()))?;
        if FeatureRouting::for_set(meta.spec.features, &schema) != meta.routing {
            return Err(Error::Format("stored feature routing does not match the feature set".into()));
        }

        let count = r.u32()? as usize;
        let mut tensors = std::collections::HashMap::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let payload = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            tensors.insert(name, (dims, data));
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!("{} unexpected trailing bytes", body.len() - r.pos)));
        }

        let mut build = |prefix: &str, specs| -> Result<Mlp> {
            let mut layers = Vec::new();
            for l in 0.. {
                let Some((wd, w)) = tensors.remove(&format!("{prefix}.layer{l}.weight")) else {
                    break;
                };
                let (bd, b) = tensors
                    .remove(&format!("{prefix}.layer{l}.bias"))
                    .ok_or_else(|| Error::Format(format!("missing tensor {prefix}.layer{l}.bias")))?;
                if wd.len() != 2 || bd != [wd[0]] {
                    return Err(Error::Format(format!("tensor shapes of {prefix}.layer{l} are inconsistent")));
                }
                layers.push(DenseLayer::from_parts(wd[1], wd[0], w, b).map_err(|e| Error::Format(e.to_string()))?);
            }
            Mlp::new(layers, specs).map_err(|e| Error::Format(format!("{prefix}: {e}")))
        };
        let trunk = build("trunk", trunk_specs(&meta.spec))?;
        let heads = meta
            .spec
            .arms
            .iter()
            .map(|arm| build(&format!("heads.{arm}"), head_specs(&meta.spec)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }

        let mut widths = vec![meta.routing.trunk.len()];
        widths.extend(&meta.spec.trunk_widths);
        let trunk_ok = trunk.in_dim() == widths[0] && trunk.widths() == widths[1..];
        let mut hw = meta.spec.head_widths.clone();
        hw.push(1);
        let heads_ok = heads
            .iter()
            .all(|h| h.in_dim() == trunk.out_dim() + meta.routing.head.len() && h.widths() == hw);
        if !trunk_ok || !heads_ok {
            return Err(Error::Format("tensor shapes disagree with the recorded architecture".into()));
        }

        let mut model = MultiHeadNet {
            spec: meta.spec,
            norm: Normalization::identity(schema.len()),
            schema,
            routing: meta.routing,
            trunk,
            heads,
            meta: meta.metadata,
        };
        model
            .set_normalization(meta.normalization)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(model)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_model(model: &MultiHeadNet, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MultiHeadNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    MultiHeadNet::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, FeatureSet};
    use crate::nn::LossKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> MultiHeadNet {
        let spec = ModelSpec {
            loss: LossKind::MedaBCE,
            ..Default::default()
        };
        let mut m = init_model(&spec, &FeatureSchema::with_latents(6), 17).unwrap();
        m.set_normalization(Normalization {
            mean: (0..11).map(|i| i as f64 * 0.37 + 1.0 / 3.0).collect(),
            std: (0..11).map(|i| 1.0 + i as f64 / 7.0).collect(),
        })
        .unwrap();
        m.metadata_mut().untrained_heads = vec![Arm::LE];
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ufm");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..11).map(|_| rng.random_range(-50.0..50.0)).collect();
            assert_eq!(m.predict_all_heads(&x).unwrap(), back.predict_all_heads(&x).unwrap());
        }
    }

    #[test]
    fn every_single_byte_corruption_is_detected() {
        let bytes = model().to_bytes();
        for pos in (0..bytes.len()).step_by(997).chain([bytes.len() - 1]) {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            assert!(matches!(MultiHeadNet::from_bytes(&bad), Err(Error::Format(_))), "byte {pos}");
        }
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = model().to_bytes();
        for len in [0, 10, 100, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(MultiHeadNet::from_bytes(&bytes[..len]), Err(Error::Format(_))));
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = model().to_bytes();
        bytes[8] = 2;
        let n = bytes.len() - DIGEST_LEN;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        let err = MultiHeadNet::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }

    #[test]
    fn permuted_arm_file_maps_back_to_the_same_arms() {
        let m = model();
        let order = [Arm::ME, Arm::HE, Arm::NE, Arm::Placebo, Arm::LE];
        let permuted = m.with_arm_order(&order).unwrap();
        let back = MultiHeadNet::from_bytes(&permuted.to_bytes()).unwrap();
        assert_eq!(back.arms(), order);
        let x = [1.5; 11];
        assert_eq!(back.predict_all_heads(&x).unwrap(), m.predict_all_heads(&x).unwrap());
    }

    #[test]
    fn feature_set_survives_round_trip() {
        let spec = ModelSpec {
            features: FeatureSet::Latent,
            ..Default::default()
        };
        let m = init_model(&spec, &FeatureSchema::with_latents(6), 1).unwrap();
        let back = MultiHeadNet::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.spec().features, FeatureSet::Latent);
        assert_eq!(back.routing(), m.routing());
    }
}
