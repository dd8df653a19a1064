//! Named parameter registry, initialization and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "MTPL" | version u32 | count u32 |
//!   per entry: name_len u16 | name (UTF-8) | rank u8 | extents u64 × rank | values f64 × Π extents
//! ```

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Gradients, Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MTPL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("duplicate parameter name {0:?}")]
    Duplicate(String),
    #[error("unknown parameter {0:?}")]
    Unknown(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Parameters keyed by unique name, with one gradient slot each.
#[derive(Clone, Debug)]
pub struct ModelParams {
    entries: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl ModelParams {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: BTreeMap::new(),
            grads: BTreeMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), ParamError> {
        if self.entries.contains_key(name) {
            return Err(ParamError::Duplicate(name.to_string()));
        }
        self.grads
            .insert(name.to_string(), Tensor::zeros(value.shape()));
        self.entries.insert(name.to_string(), value);
        Ok(())
    }

    /// Uniform(−a, a) with `a = gain·sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_glorot(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
    ) -> Result<(), ParamError> {
        let a = gain * (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.gen_range(-a..=a))
            .collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, data)?)
    }

    pub fn insert_normal(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
    ) -> Result<(), ParamError> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| std * self.standard_normal()).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    fn standard_normal(&mut self) -> f64 {
        // Box–Muller
        let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = self.rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ParamError> {
        self.entries
            .get(name)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, ParamError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor, ParamError> {
        self.grads
            .get(name)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().fill(0.0);
        }
    }

    /// Adds the gradients of a backward pass into the slots.
    pub fn accumulate(
        &mut self,
        bound: &BoundParams<'_>,
        grads: &Gradients,
    ) -> Result<(), ParamError> {
        for (name, var) in &bound.vars {
            if let Some(g) = grads.get(*var) {
                self.grads
                    .get_mut(name)
                    .ok_or_else(|| ParamError::Unknown(name.clone()))?
                    .add_assign(g)?;
            }
        }
        Ok(())
    }

    pub(crate) fn entries_and_grads_mut(
        &mut self,
    ) -> impl Iterator<Item = (&String, &mut Tensor, &Tensor)> {
        self.entries
            .iter_mut()
            .zip(self.grads.values())
            .map(|((k, v), g)| (k, v, g))
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), ParamError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| ParamError::Format(format!("name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
            let rank = u8::try_from(t.rank())
                .map_err(|_| ParamError::Format(format!("rank too large for {name}")))?;
            w.write_all(&[rank])?;
            for &e in t.shape() {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_checkpoint(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_checkpoint<R: Read>(mut r: R, seed: u64) -> Result<Self, ParamError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ParamError::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(ParamError::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut params = Self::new(seed);
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| ParamError::Format(format!("name is not UTF-8: {e}")))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            params.insert(&name, Tensor::new(shape, data)?)?;
        }
        Ok(params)
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Tape leaves for every parameter of one forward pass.
pub struct BoundParams<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>, ParamError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ModelParams::new(0);
        p.insert("a", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(
            p.insert("a", Tensor::scalar(2.0)),
            Err(ParamError::Duplicate(_))
        ));
    }

    #[test]
    fn checkpoint_layout_is_exact() {
        let mut p = ModelParams::new(0);
        p.insert("w", Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap())
            .unwrap();
        let bytes = p.to_checkpoint_bytes();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"MTPL");
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u16.to_le_bytes());
        expect.extend_from_slice(b"w");
        expect.push(2);
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(&1.0f64.to_le_bytes());
        expect.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let err = ModelParams::read_checkpoint(&b"XXXX\x01\0\0\0\0\0\0\0"[..], 0);
        assert!(matches!(err, Err(ParamError::Format(_))));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let build = || {
            let mut p = ModelParams::new(42);
            p.insert_glorot("a", 3, 4, 1.0).unwrap();
            p.insert_normal("b", &[2, 2], 0.5).unwrap();
            p
        };
        assert_eq!(build(), build());
    }
}
