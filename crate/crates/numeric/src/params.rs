use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::{NumericError, Result, Shape, Tensor};

pub const PARAM_MAGIC: &[u8; 4] = b"RPND";
pub const PARAM_FORMAT_VERSION: u32 = 1;

/// Named learnable tensors, iterated in sorted name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
    rng_seed: u64,
}

impl ParameterStore {
    pub fn new(rng_seed: u64) -> Self {
        Self { params: BTreeMap::new(), rng_seed }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NumericError::DuplicateParameter(name));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// A store with the same names and shapes, all entries zero.
    pub fn zeros_like(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::from_shape(v.shape(), vec![0.0; v.numel()]).expect("same shape")))
            .collect();
        Self { params, rng_seed: self.rng_seed }
    }

    /// Writes the standalone format: magic, version, seed, then the entries.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(PARAM_MAGIC)?;
        w.write_all(&PARAM_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.rng_seed.to_le_bytes())?;
        self.write_entries(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_header(r)?;
        let seed = read_u64(r)?;
        Self::read_entries(r, seed)
    }

    /// Entry block: count, then per parameter name length, UTF-8 name,
    /// rank, dims and little-endian `f64` payload.
    pub fn write_entries<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let dims = t.dims();
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for &d in dims {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_entries<R: Read>(r: &mut R, rng_seed: u64) -> Result<Self> {
        let count = read_u32(r)?;
        let mut store = Self::new(rng_seed);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            if name_len > 4096 {
                return Err(NumericError::Format(format!("parameter name length {name_len}")));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| NumericError::Format(e.to_string()))?;
            let rank = read_u32(r)? as usize;
            let dims = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let shape = Shape::new(&dims)?;
            let mut data = Vec::with_capacity(shape.numel());
            let mut buf = [0u8; 8];
            for _ in 0..shape.numel() {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            store.insert(name, Tensor::from_shape(shape, data)?)?;
        }
        Ok(store)
    }
}

/// Reads and validates the `RPND` magic and version.
pub fn read_header<R: Read>(r: &mut R) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PARAM_MAGIC {
        return Err(NumericError::Format(format!(
            "bad magic {:?}, expected `RPND`",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(r)?;
    if version != PARAM_FORMAT_VERSION {
        return Err(NumericError::Version { found: version, expected: PARAM_FORMAT_VERSION });
    }
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
