//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "LARGOCK1"
//! method_len   u32
//! method       method_len bytes of UTF-8
//! activation   u8       0 = tanh, 1 = relu
//! layer_count  u32
//! per layer:
//!   kind       u8       0 = dense, 1 = lora, 2 = regulated lora
//!   out, in    u32, u32
//!   weight     out*in f64, row-major (the dense weight, or the frozen base)
//!   bias       out f64
//!   kind >= 1: rank u32, a (out*rank f64), b (rank*in f64)
//!   kind == 2: gamma_a f64, gamma_b f64, gamma_lr f64,
//!              norm_mode u8 (0 = entrywise, 1 = mars_row_sum), clamp u8
//! ```
//!
//! Floats are stored as raw bit patterns, so a reload is bitwise identical.

use std::path::Path;

use super::{Activation, Layer, LayerWeight, ModelState};
use crate::error::{Error, Result};
use crate::largo::{GammaPair, LargoState};
use crate::linalg::{Mat, NormMode};
use crate::lora::LoraAdapter;

const MAGIC: &[u8; 8] = b"LARGOCK1";

pub fn to_bytes(ms: &ModelState, method: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, method.len() as u32);
    out.extend_from_slice(method.as_bytes());
    out.push(match ms.activation {
        Activation::Tanh => 0,
        Activation::Relu => 1,
    });
    put_u32(&mut out, ms.layers.len() as u32);
    for layer in &ms.layers {
        let (o, i) = layer.weight.shape();
        let kind = match &layer.weight {
            LayerWeight::Dense(_) => 0,
            LayerWeight::Lora(_) => 1,
            LayerWeight::Largo(_) => 2,
        };
        out.push(kind);
        put_u32(&mut out, o as u32);
        put_u32(&mut out, i as u32);
        put_f64s(&mut out, layer.weight.base().data());
        put_f64s(&mut out, &layer.bias);
        let adapter = match &layer.weight {
            LayerWeight::Dense(_) => None,
            LayerWeight::Lora(ad) => Some(ad),
            LayerWeight::Largo(st) => Some(&st.adapter),
        };
        if let Some(ad) = adapter {
            put_u32(&mut out, ad.rank() as u32);
            put_f64s(&mut out, ad.a().data());
            put_f64s(&mut out, ad.b().data());
        }
        if let LayerWeight::Largo(st) = &layer.weight {
            put_f64s(
                &mut out,
                &[st.gammas.gamma_a, st.gammas.gamma_b, st.gammas.gamma_lr],
            );
            out.push(match st.norm_mode {
                NormMode::Entrywise => 0,
                NormMode::MarsRowSum => 1,
            });
            out.push(st.clamp_shrink_only as u8);
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ModelState, String)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mlen = r.u32()? as usize;
    let method = String::from_utf8(r.take(mlen)?.to_vec())
        .map_err(|_| Error::Format("method tag is not UTF-8".into()))?;
    let activation = match r.u8()? {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        v => return Err(Error::Format(format!("unknown activation tag {v}"))),
    };
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.u8()?;
        let o = r.u32()? as usize;
        let i = r.u32()? as usize;
        let w = r.mat(o, i)?;
        let bias = r.f64s(o)?;
        let weight = match kind {
            0 => LayerWeight::Dense(w),
            1 | 2 => {
                let rank = r.u32()? as usize;
                let a = r.mat(o, rank)?;
                let b = r.mat(rank, i)?;
                let ad = LoraAdapter::new(w, a, b)?;
                if kind == 1 {
                    LayerWeight::Lora(ad)
                } else {
                    let g = r.f64s(3)?;
                    let norm_mode = match r.u8()? {
                        0 => NormMode::Entrywise,
                        1 => NormMode::MarsRowSum,
                        v => return Err(Error::Format(format!("unknown norm tag {v}"))),
                    };
                    let clamp = r.u8()? != 0;
                    let gammas = GammaPair::new(g[0], g[1], g[2])?;
                    LayerWeight::Largo(
                        LargoState::new(ad, gammas)
                            .with_norm_mode(norm_mode)
                            .with_clamp(clamp),
                    )
                }
            }
            v => return Err(Error::Format(format!("unknown layer kind {v}"))),
        };
        layers.push(Layer { weight, bias });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok((ModelState::from_layers(activation, layers)?, method))
}

pub fn save(ms: &ModelState, method: &str, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(ms, method)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelState, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format("checkpoint truncated".into())),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn mat(&mut self, rows: usize, cols: usize) -> Result<Mat> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("size overflow".into()))?;
        Mat::from_vec(rows, cols, self.f64s(n)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rand_normal, Rng};
    use crate::model::MlpSpec;

    #[test]
    fn roundtrip_all_layer_kinds() {
        let spec = MlpSpec::new(vec![5, 6, 4, 3], Activation::Relu).unwrap();
        let mut rng = Rng::new(1);
        let mut ms = ModelState::init(&spec, &mut rng).unwrap();
        let w0 = ms.layers[0].weight.base().clone();
        let ad = LoraAdapter::kaiming(w0, 2, &mut rng).unwrap();
        ms.layers[0].weight = LayerWeight::Lora(ad.clone());
        let w1 = ms.layers[1].weight.base().clone();
        let a = rand_normal(&mut rng, 4, 2, 1.0).unwrap();
        let b = rand_normal(&mut rng, 2, 6, 1.0).unwrap();
        let st = LargoState::new(
            LoraAdapter::new(w1, a, b).unwrap(),
            GammaPair::new(0.3, 1e-4, 0.7).unwrap(),
        )
        .with_norm_mode(NormMode::MarsRowSum)
        .with_clamp(true);
        ms.layers[1].weight = LayerWeight::Largo(st);
        ms.layers[2].bias = vec![0.1, -f64::MIN_POSITIVE, 3.0];

        let bytes = to_bytes(&ms, "largo");
        let (back, method) = from_bytes(&bytes).unwrap();
        assert_eq!(method, "largo");
        assert_eq!(back, ms);
        assert_eq!(to_bytes(&back, "largo"), bytes);
    }

    #[test]
    fn rejects_corrupt_input() {
        let spec = MlpSpec::new(vec![2, 2, 2], Activation::Tanh).unwrap();
        let ms = ModelState::init(&spec, &mut Rng::new(0)).unwrap();
        let bytes = to_bytes(&ms, "pretrained");
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(from_bytes(b"NOTACKPT").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
