//! Named parameter storage and the `EFNW` checkpoint format.
//!
//! ```text
//! "EFNW" | u32 version | u32 count
//! count * ( u32 name_len | name (UTF-8) | u32 ndim | ndim * u32 dim | f32 data... )
//! ```
//! All integers and reals are little-endian.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EFNW";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            tensor,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Overwrites values from `other` by name. Every parameter of `self`
    /// must be present with identical dims.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .by_name
                .get(&p.name)
                .map(|&i| &other.params[i])
                .ok_or_else(|| Error::Validation(format!("checkpoint lacks parameter {:?}", p.name)))?;
            if src.tensor.dims() != p.tensor.dims() {
                return Err(Error::Validation(format!(
                    "parameter {:?}: checkpoint dims {:?} differ from model dims {:?}",
                    p.name,
                    src.tensor.dims(),
                    p.tensor.dims()
                )));
            }
            p.tensor = src.tensor.clone();
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.write_u32::<LittleEndian>(VERSION).unwrap();
        buf.write_u32::<LittleEndian>(self.params.len() as u32).unwrap();
        for p in &self.params {
            buf.write_u32::<LittleEndian>(p.name.len() as u32).unwrap();
            buf.extend_from_slice(p.name.as_bytes());
            buf.write_u32::<LittleEndian>(p.tensor.ndim() as u32).unwrap();
            for &d in p.tensor.dims() {
                buf.write_u32::<LittleEndian>(d as u32).unwrap();
            }
            for &v in p.tensor.data() {
                buf.write_f32::<LittleEndian>(v.as_f64() as f32).unwrap();
            }
        }
        buf
    }

    /// Decodes a checkpoint. All parameters come back marked trainable;
    /// use [`ParamStore::load_from`] to copy values into a built model.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let eof = |cur: &Cursor<&[u8]>| Error::parse_at_byte(cur.position(), "truncated checkpoint");
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(|_| eof(&cur))?;
        if &magic != MAGIC {
            return Err(Error::parse_at_byte(0, "bad magic, expected \"EFNW\""));
        }
        let version = cur.read_u32::<LittleEndian>().map_err(|_| eof(&cur))?;
        if version != VERSION {
            return Err(Error::parse_at_byte(4, format!("unsupported checkpoint version {version}")));
        }
        let count = cur.read_u32::<LittleEndian>().map_err(|_| eof(&cur))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = cur.read_u32::<LittleEndian>().map_err(|_| eof(&cur))? as usize;
            let remaining = bytes.len() - cur.position() as usize;
            if name_len > remaining {
                return Err(eof(&cur));
            }
            let mut name = vec![0u8; name_len];
            cur.read_exact(&mut name).map_err(|_| eof(&cur))?;
            let name = String::from_utf8(name).map_err(|_| Error::parse_at_byte(cur.position(), "parameter name is not UTF-8"))?;
            let ndim = cur.read_u32::<LittleEndian>().map_err(|_| eof(&cur))? as usize;
            if ndim > 16 {
                return Err(Error::parse_at_byte(cur.position(), format!("implausible ndim {ndim}")));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(cur.read_u32::<LittleEndian>().map_err(|_| eof(&cur))? as usize);
            }
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let remaining = bytes.len() - cur.position() as usize;
            let n = match n {
                Some(n) if n.checked_mul(4).is_some_and(|b| b <= remaining) => n,
                _ => return Err(eof(&cur)),
            };
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(T::of(cur.read_f32::<LittleEndian>().map_err(|_| eof(&cur))? as f64));
            }
            store
                .add(name, Tensor::new(dims, data)?, true)
                .map_err(|e| Error::parse_at_byte(cur.position(), e.to_string()))?;
        }
        if cur.position() as usize != bytes.len() {
            return Err(Error::parse_at_byte(cur.position(), "trailing bytes after last parameter"));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.25]).unwrap(), true)
            .unwrap();
        s.add("b", Tensor::scalar(4.0), false).unwrap();
        s
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = sample_store();
        assert!(s.add("b", Tensor::scalar(1.0), true).is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample_store();
        let back = ParamStore::<f32>::from_bytes(&s.to_bytes()).unwrap();
        for ((_, a), (_, b)) in s.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.dims(), b.tensor.dims());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
    }

    #[test]
    fn load_from_checks_dims() {
        let mut s = sample_store();
        let mut other = ParamStore::new();
        other.add("a.weight", Tensor::zeros(vec![3, 2]), true).unwrap();
        other.add("b", Tensor::scalar(0.0), true).unwrap();
        assert!(s.load_from(&other).is_err());
    }

    proptest! {
        #[test]
        fn truncation_is_an_error(cut in 0usize..200) {
            let bytes = sample_store().to_bytes();
            if cut < bytes.len() {
                prop_assert!(ParamStore::<f32>::from_bytes(&bytes[..cut]).is_err());
            }
        }

        #[test]
        fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
            let _ = ParamStore::<f32>::from_bytes(&bytes);
        }
    }
}
