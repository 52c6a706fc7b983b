//! Little-endian binary parameter container.
//!
//! Layout:
//!
//! ```text
//! magic     8 bytes  "FSRCKPT\0"
//! version   u32
//! config    u32 length + UTF-8 bytes (echo of the run configuration)
//! count     u32
//! count x { name: u32 length + UTF-8, rank: u32, dims: rank x u64, data: numel x f64 }
//! checksum  u64      FNV-1a over every preceding byte
//! ```

use std::path::Path;

use facesr_grad::{AdamState, ParamSet, Tensor};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FSRCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn new(config: impl Into<String>) -> Self {
        Checkpoint { config: config.into(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Stores every tensor of `params` as `{prefix}/{name}`.
    pub fn push_params(&mut self, prefix: &str, params: &ParamSet) {
        for (name, t) in params.iter() {
            self.push(format!("{prefix}/{name}"), t.clone());
        }
    }

    /// Reads back a parameter set with the names and shapes of `like`.
    pub fn params(&self, prefix: &str, like: &ParamSet) -> Result<ParamSet> {
        let values = like
            .iter()
            .map(|(name, _)| {
                let key = format!("{prefix}/{name}");
                self.get(&key)
                    .cloned()
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {key}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(like.with_values(values)?)
    }

    pub fn push_adam(&mut self, prefix: &str, params: &ParamSet, state: &AdamState) {
        self.push(format!("{prefix}/step"), Tensor::scalar(state.step as f64));
        for (i, name) in params.names().iter().enumerate() {
            self.push(format!("{prefix}/m/{name}"), state.m[i].clone());
            self.push(format!("{prefix}/v/{name}"), state.v[i].clone());
        }
    }

    pub fn adam(&self, prefix: &str, params: &ParamSet) -> Result<AdamState> {
        let get = |key: String| {
            self.get(&key).cloned().ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))
        };
        let step = get(format!("{prefix}/step"))?.item() as u64;
        let mut state = AdamState::new(params);
        state.step = step;
        for (i, name) in params.names().iter().enumerate() {
            state.m[i] = get(format!("{prefix}/m/{name}"))?;
            state.v[i] = get(format!("{prefix}/v/{name}"))?;
        }
        Ok(state)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
            for &d in t.dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if stored != fnv1a(body) {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = dims.iter().product();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
            tensors.push((name, Tensor::new(facesr_grad::Shape::new(dims), data)?));
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// FNV-1a of the serialised form.
    pub fn hash(&self) -> u64 {
        fnv1a(&self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("seed = 1\n");
        c.push("a", Tensor::new([2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.5, 3.0]).unwrap());
        c.push("b", Tensor::scalar(42.0));
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.config, c.config);
        assert_eq!(back.to_bytes(), bytes);
        for ((na, ta), (nb, tb)) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(na, nb);
            assert_eq!(ta.dims(), tb.dims());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(ta), bits(tb));
        }
    }

    #[test]
    fn corruption_and_truncation_are_detected() {
        let bytes = sample().to_bytes();
        let mut flipped = bytes.clone();
        flipped[20] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"nonsense").is_err());
    }

    #[test]
    fn params_and_adam_state_survive() {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let mut st = AdamState::new(&ps);
        st.step = 3;
        st.m[0] = Tensor::new([2], vec![0.5, 0.25]).unwrap();
        let mut c = Checkpoint::new("");
        c.push_params("sr", &ps);
        c.push_adam("adam_sr", &ps, &st);
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.params("sr", &ps).unwrap().checksum(), ps.checksum());
        let st2 = back.adam("adam_sr", &ps).unwrap();
        assert_eq!(st2.step, 3);
        assert_eq!(st2.m[0], st.m[0]);
        assert!(back.params("other", &ps).is_err());
    }
}
