use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FieldArch, FieldModel};
use crate::{Error, Result};

const HASH_INIT: f32 = 1e-4;

/// Flat trainable parameters of one field, in the layout documented on [`crate::field`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f32>,
}

impl ParamVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!(
                "parameter {i} is {}",
                self.values[i]
            ))),
            None => Ok(()),
        }
    }

    /// Rejects a parameter vector whose length does not match `arch`.
    pub fn check_arch(&self, arch: &FieldArch) -> Result<()> {
        let expected = arch.param_count();
        if self.len() != expected {
            return Err(Error::Integrity(format!(
                "parameter count {} does not match architecture ({expected})",
                self.len()
            )));
        }
        Ok(())
    }

    /// Writes the architecture as a `key=value` block terminated by `end`, then
    /// the values as little-endian `f32`.
    pub fn write_to<W: Write>(&self, arch: &FieldArch, mut w: W) -> std::io::Result<()> {
        for (k, v) in arch.to_kv() {
            writeln!(w, "{k}={v}")?;
        }
        writeln!(w, "end")?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<(FieldArch, Self)> {
        let mut map = std::collections::BTreeMap::new();
        let mut line = Vec::new();
        loop {
            line.clear();
            let mut byte = [0u8; 1];
            loop {
                r.read_exact(&mut byte)
                    .map_err(|e| Error::Integrity(format!("truncated parameter header: {e}")))?;
                if byte[0] == b'\n' {
                    break;
                }
                line.push(byte[0]);
            }
            let text = String::from_utf8(line.clone())
                .map_err(|_| Error::Integrity("parameter header is not UTF-8".into()))?;
            if text == "end" {
                break;
            }
            let (k, v) = text
                .split_once('=')
                .ok_or_else(|| Error::Integrity(format!("bad header line `{text}`")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let arch = FieldArch::from_kv(&map)?;
        let mut buf = vec![0u8; arch.param_count() * 4];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Integrity(format!("truncated parameter block: {e}")))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((arch, Self::new(values)))
    }
}

/// Deterministic initialization: hash rows uniform in `[-1e-4, 1e-4]`, dense
/// weights He-uniform on the layer fan-in, biases zero.
pub fn init_params(arch: &FieldArch, seed: u64) -> Result<ParamVector> {
    let model = FieldModel::new(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0f32; model.param_count()];
    for v in &mut values[..arch.hash_param_count()] {
        *v = rng.gen_range(-HASH_INIT..=HASH_INIT);
    }
    for (offset, fan_in, fan_out) in model.weight_blocks() {
        let bound = (6.0 / fan_in as f32).sqrt();
        for v in &mut values[offset..offset + fan_in * fan_out] {
            *v = rng.gen_range(-bound..=bound);
        }
    }
    Ok(ParamVector::new(values))
}
