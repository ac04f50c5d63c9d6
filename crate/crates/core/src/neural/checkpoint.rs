//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "DGST" | u16 version | u32 tensor count
//! per tensor: u16 name length | name (UTF-8) | u8 dtype (0 = f32) | u8 rank
//!             | u32 dims[rank] | f32 data[product(dims)]
//! ```
//!
//! Every parameter `<name>` is followed by its Adam moments `<name>.adam1`
//! and `<name>.adam2`; a final rank-0 tensor `step` carries the optimizer
//! step counter.

use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DGST";
pub const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
const STEP_NAME: &str = "step";

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F32);
    out.push(t.dims().len() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_params(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.parameter_count() * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&((store.len() * 3 + 1) as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id);
        let (m1, m2) = store.moments(id);
        write_tensor(&mut out, name, store.value(id));
        write_tensor(&mut out, &format!("{name}.adam1"), m1);
        write_tensor(&mut out, &format!("{name}.adam2"), m2);
    }
    write_tensor(&mut out, STEP_NAME, &Tensor::scalar(store.step() as f32));
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u16("name length")? as usize;
        let name = std::str::from_utf8(self.take(len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = self.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("tensor `{name}` has unsupported dtype {dtype}")));
        }
        let rank = self.u8("rank")? as usize;
        let dims = (0..rank)
            .map(|_| self.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or(Error::Truncated("data"))?, "data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::from_vec(&dims, data)?))
    }
}

fn read_all(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| Error::BadMagic)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        out.push(r.tensor()?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Rebuilds a store from checkpoint bytes.
pub fn load_params(bytes: &[u8]) -> Result<ParamStore> {
    let tensors = read_all(bytes)?;
    let mut moments: HashMap<String, Tensor> = HashMap::new();
    let mut store = ParamStore::new();
    let mut step = 0u64;
    for (name, t) in tensors {
        if name == STEP_NAME {
            step = t.item() as u64;
        } else if name.ends_with(".adam1") || name.ends_with(".adam2") {
            moments.insert(name, t);
        } else {
            store.add(name, t)?;
        }
    }
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let m1 = moments
            .remove(&format!("{name}.adam1"))
            .ok_or_else(|| Error::MissingTensor(format!("{name}.adam1")))?;
        let m2 = moments
            .remove(&format!("{name}.adam2"))
            .ok_or_else(|| Error::MissingTensor(format!("{name}.adam2")))?;
        if m1.dims() != store.value(id).dims() || m2.dims() != store.value(id).dims() {
            return Err(Error::Format(format!("moment shape mismatch for `{name}`")));
        }
        store.set_moments(id, m1, m2);
    }
    if let Some(name) = moments.into_keys().min() {
        return Err(Error::UnexpectedTensor(name));
    }
    store.set_step(step);
    Ok(store)
}

/// Loads checkpoint bytes into an existing store with a known layout.
/// Every tensor must match a parameter of `store` by name and shape.
pub fn load_params_into(bytes: &[u8], store: &mut ParamStore) -> Result<()> {
    let loaded = load_params(bytes)?;
    for id in loaded.ids() {
        let name = loaded.name(id);
        let target = store.id(name).ok_or_else(|| Error::UnexpectedTensor(name.to_string()))?;
        if store.value(target).dims() != loaded.value(id).dims() {
            return Err(Error::Shape {
                op: "load_params_into",
                left: store.value(target).dims().to_vec(),
                right: loaded.value(id).dims().to_vec(),
            });
        }
    }
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let src = loaded.id(&name).ok_or(Error::MissingTensor(name))?;
        *store.value_mut(id) = loaded.value(src).clone();
        let (m1, m2) = loaded.moments(src);
        store.set_moments(id, m1.clone(), m2.clone());
    }
    store.set_step(loaded.step());
    store.zero_grads();
    Ok(())
}
