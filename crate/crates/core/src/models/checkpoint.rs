//! Checkpoint container: a JSON header (configs, counters, seed, tensor
//! manifest) followed by raw little-endian f32 tensor data. Round-trips are
//! bit-exact; loading validates every tensor name and shape against the
//! configs and fails loudly on any mismatch.

use crate::error::{Error, Result};
use crate::models::deblur::{DeblurConfig, DeblurNet};
use crate::models::module::Network;
use crate::models::reblur::{ReblurConfig, ReblurNet};
use crate::training::adam::Adam;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RBLRCKP1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: u64,
    pub step: u64,
    pub seed: u64,
    pub deblur: DeblurNet<f32>,
    pub reblur: ReblurNet<f32>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub deblur: Adam<f32, DeblurNet<f32>>,
    pub reblur: Adam<f32, ReblurNet<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    deblur_config: DeblurConfig,
    reblur_config: ReblurConfig,
    epoch: u64,
    step: u64,
    seed: u64,
    adam_steps: Option<(u64, u64)>,
    tensors: Vec<TensorEntry>,
}

/// Flat named views over every tensor a checkpoint persists.
fn collect<'a, N: Network<f32>>(prefix: &str, net: &'a N, out: &mut Vec<(String, Vec<usize>, Vec<f32>)>) {
    for (name, conv) in net.conv_names().into_iter().zip(net.convs()) {
        out.push((
            format!("{prefix}.{name}.weight"),
            conv.weight.shape().to_vec(),
            conv.weight.iter().copied().collect(),
        ));
        out.push((
            format!("{prefix}.{name}.bias"),
            conv.bias.shape().to_vec(),
            conv.bias.iter().copied().collect(),
        ));
    }
}

fn fill<N: Network<f32>>(
    prefix: &str,
    net: &mut N,
    data: &std::collections::HashMap<String, (Vec<usize>, Vec<f32>)>,
) -> Result<()> {
    let names = net.conv_names();
    for (name, conv) in names.into_iter().zip(net.convs_mut()) {
        for (field, shape, slot) in [
            ("weight", conv.weight.shape().to_vec(), conv.weight.as_slice_mut().unwrap()),
            ("bias", conv.bias.shape().to_vec(), conv.bias.as_slice_mut().unwrap()),
        ] {
            let key = format!("{prefix}.{name}.{field}");
            let (got_shape, values) = data
                .get(&key)
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {key}")))?;
            if *got_shape != shape || values.len() != slot.len() {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor {key}: expected shape {shape:?}, got {got_shape:?}"
                )));
            }
            slot.copy_from_slice(values);
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn deblur_config(&self) -> &DeblurConfig {
        &self.deblur.config
    }

    pub fn reblur_config(&self) -> &ReblurConfig {
        &self.reblur.config
    }

    /// Writes atomically (temp file + rename) so interrupted runs never leave
    /// a partial checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tensors = Vec::new();
        collect("deblur", &self.deblur, &mut tensors);
        collect("reblur", &self.reblur, &mut tensors);
        let adam_steps = self.optimizer.as_ref().map(|o| (o.deblur.step_count(), o.reblur.step_count()));
        if let Some(opt) = &self.optimizer {
            collect("adam_d.m", opt.deblur.first_moment(), &mut tensors);
            collect("adam_d.v", opt.deblur.second_moment(), &mut tensors);
            collect("adam_r.m", opt.reblur.first_moment(), &mut tensors);
            collect("adam_r.v", opt.reblur.second_moment(), &mut tensors);
        }
        let header = Header {
            deblur_config: self.deblur.config.clone(),
            reblur_config: self.reblur.config.clone(),
            epoch: self.epoch,
            step: self.step,
            seed: self.seed,
            adam_steps,
            tensors: tensors
                .iter()
                .map(|(name, shape, _)| TensorEntry { name: name.clone(), shape: shape.clone() })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header)?;

        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(MAGIC).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&(header_json.len() as u64).to_le_bytes())
                .map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&header_json).map_err(|e| Error::io(&tmp, e))?;
            for (_, _, values) in &tensors {
                let mut bytes = Vec::with_capacity(values.len() * 4);
                for v in values {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            }
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MAGIC {
            return Err(Error::CheckpointMismatch("bad magic bytes".into()));
        }
        let mut len_bytes = [0u8; 8];
        f.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        f.read_exact(&mut header_json).map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_slice(&header_json)?;

        let mut data = std::collections::HashMap::new();
        for entry in &header.tensors {
            let count: usize = entry.shape.iter().product();
            let mut bytes = vec![0u8; count * 4];
            f.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            data.insert(entry.name.clone(), (entry.shape.clone(), values));
        }
        let expected: usize = header.tensors.len();
        if data.len() != expected {
            return Err(Error::CheckpointMismatch("duplicate tensor names".into()));
        }

        let mut deblur = DeblurNet::<f32>::zeros(&header.deblur_config)?;
        let mut reblur = ReblurNet::<f32>::zeros(&header.reblur_config)?;
        fill("deblur", &mut deblur, &data)?;
        fill("reblur", &mut reblur, &data)?;
        let optimizer = match header.adam_steps {
            Some((td, tr)) => {
                let mut md = deblur.zeros_like();
                let mut vd = deblur.zeros_like();
                let mut mr = reblur.zeros_like();
                let mut vr = reblur.zeros_like();
                fill("adam_d.m", &mut md, &data)?;
                fill("adam_d.v", &mut vd, &data)?;
                fill("adam_r.m", &mut mr, &data)?;
                fill("adam_r.v", &mut vr, &data)?;
                Some(OptimizerState {
                    deblur: Adam::from_state(md, vd, td),
                    reblur: Adam::from_state(mr, vr, tr),
                })
            }
            None => None,
        };
        Ok(Checkpoint {
            epoch: header.epoch,
            step: header.step,
            seed: header.seed,
            deblur,
            reblur,
            optimizer,
        })
    }
}
