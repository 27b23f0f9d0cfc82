//! Binary checkpoint format.
//!
//! ```text
//! "PFVAECKP" | version u32
//! config:     u32 len | UTF-8 `key = value` echo
//! params:     u32 count | tensor records
//! optimizer:  u32 count | tensor records | u64 t
//! iteration:  u64
//! rng:        u32 len | 32-byte seed, u64 stream, u128 word position
//! ```
//!
//! A tensor record is `u32 name len | name | u32 rank | u32 dims… | f64 data…`.
//! All integers and reals are little-endian. The optimizer records are
//! `adam.hyper` (lr, β₁, β₂, ε̂), `adam.clip` (empty or one value), then
//! `m.<param>` and `v.<param>` per parameter.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::gradcore::ParamSet;
use crate::optim::AdamState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PFVAECKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ParamSet,
    pub adam: AdamState,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("length fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }

    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.bytes(name.as_bytes());
        self.u32(t.rank());
        for &d in t.shape() {
            self.u32(d);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(Error::Truncated {
            expected: self.pos.saturating_add(n),
            found: self.buf.len(),
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` too large")))?;
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` too large")))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }

    fn tensors(&mut self) -> Result<Vec<(String, Tensor)>> {
        let n = self.u32()?;
        (0..n).map(|_| self.tensor()).collect()
    }
}

fn expect_name(found: &str, want: &str) -> Result<()> {
    if found == want {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!(
            "expected record `{want}`, found `{found}`"
        )))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.bytes(self.config.to_text().as_bytes());

        w.u32(self.params.len());
        for (name, t) in self.params.iter() {
            w.tensor(name, t);
        }

        let a = &self.adam;
        w.u32(2 + 2 * self.params.len());
        let hyper = vec![a.lr, a.beta1, a.beta2, a.eps_hat];
        w.tensor("adam.hyper", &Tensor::new(vec![4], hyper).expect("shape"));
        let clip: Vec<f64> = a.clip_norm.into_iter().collect();
        w.tensor(
            "adam.clip",
            &Tensor::new(vec![clip.len()], clip).expect("shape"),
        );
        for ((name, _), m) in self.params.iter().zip(&a.m) {
            w.tensor(&format!("m.{name}"), m);
        }
        for ((name, _), v) in self.params.iter().zip(&a.v) {
            w.tensor(&format!("v.{name}"), v);
        }
        w.u64(a.t);

        w.u64(self.iteration);

        let mut rng = Vec::with_capacity(56);
        rng.extend_from_slice(&self.rng.get_seed());
        rng.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        rng.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        w.bytes(&rng);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.u32()? as u32;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let config = RunConfig::from_text(&r.string()?)?;

        let mut params = ParamSet::new();
        for (name, t) in r.tensors()? {
            params.insert(name, t)?;
        }

        let mut opt = r.tensors()?.into_iter();
        let mut next = |want: &str| -> Result<Tensor> {
            let (name, t) = opt
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing record `{want}`")))?;
            expect_name(&name, want)?;
            Ok(t)
        };
        let hyper = next("adam.hyper")?;
        let clip = next("adam.clip")?;
        if hyper.len() != 4 || clip.len() > 1 {
            return Err(Error::Checkpoint(
                "malformed optimizer hyperparameters".into(),
            ));
        }
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for (prefix, out) in [("m", &mut m), ("v", &mut v)] {
            for (name, (_, p)) in names.iter().zip(params.iter()) {
                let t = next(&format!("{prefix}.{name}"))?;
                if t.shape() != p.shape() {
                    return Err(Error::Checkpoint(format!(
                        "moment shape mismatch for `{name}`"
                    )));
                }
                out.push(t);
            }
        }
        if opt.next().is_some() {
            return Err(Error::Checkpoint("unexpected optimizer record".into()));
        }
        let h = hyper.data();
        let adam = AdamState {
            lr: h[0],
            beta1: h[1],
            beta2: h[2],
            eps_hat: h[3],
            clip_norm: clip.data().first().copied(),
            t: r.u64()?,
            m,
            v,
        };

        let iteration = r.u64()?;

        let state = r.bytes()?;
        if state.len() != 56 {
            return Err(Error::Checkpoint(format!(
                "rng state has {} bytes",
                state.len()
            )));
        }
        let seed: [u8; 32] = state[..32].try_into().expect("32 bytes");
        let stream = u64::from_le_bytes(state[32..40].try_into().expect("8 bytes"));
        let word_pos = u128::from_le_bytes(state[40..].try_into().expect("16 bytes"));
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        if r.pos != buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                buf.len() - r.pos
            )));
        }
        Ok(Self {
            config,
            params,
            adam,
            iteration,
            rng,
        })
    }

    /// Writes through a temporary file and rename, so an existing checkpoint
    /// is never left half-written.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
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
    use crate::nets::VaeModel;
    use rand::{RngCore, SeedableRng};

    fn sample() -> Checkpoint {
        let mut config = RunConfig::default();
        config.input_dim = 6;
        config.hidden_dims = vec![3];
        config.flow_length = 2;
        config.clip_norm = Some(5.0);
        let model = VaeModel::init(config.vae(), 9).unwrap();
        let mut adam = AdamState::new(model.params(), config.lr);
        adam.clip_norm = config.clip_norm;
        adam.t = 17;
        adam.m[0].data_mut()[0] = 0.25;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        rng.next_u32();
        Checkpoint {
            config,
            params: model.params().clone(),
            adam,
            iteration: 17,
            rng,
        }
    }

    #[test]
    fn byte_identical_round_trip() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &VERSION.to_le_bytes());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rng_resumes_mid_stream() {
        let ckpt = sample();
        let mut a = ckpt.rng.clone();
        let mut b = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap().rng;
        for _ in 0..5 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::VersionMismatch {
                found: 7,
                expected: VERSION
            })
        ));
        for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let mut long = bytes;
        long.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&long),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let ckpt = sample();
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }
}
