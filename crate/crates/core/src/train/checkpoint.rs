//! Checkpoint files. Little-endian layout:
//!
//! ```text
//! "CKPT1" | version u32 | config text
//! | param count u32 | (name, TNSR1 tensor)*
//! | t u64 | first-moment count u32 | TNSR1* | second-moment count u32 | TNSR1*
//! | step u64 | epoch u64 | loss stats | best f1 (flag u8, f64)
//! | rng seed [u8; 32] | rng stream u64 | rng word position u128
//! | order length u32 | u32* | cursor u64
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::optim::OptimState;
use super::step::{LossStats, TrainState};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{read_tensor, write_tensor, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    /// Resolved run configuration the checkpoint was produced with.
    pub config: String,
    pub params: Vec<(String, Tensor<T>)>,
    pub state: TrainState<T>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor<T: Real>(&mut self, t: &Tensor<T>) -> Result<()> {
        write_tensor(&mut self.0, t)
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
    fn tensor<T: Real>(&mut self) -> Result<Tensor<T>> {
        read_tensor(&mut self.0).map_err(|e| match e {
            Error::Format(m) if m.contains("truncated") => Error::Format("truncated checkpoint".into()),
            other => other,
        })
    }
    fn tensors<T: Real>(&mut self) -> Result<Vec<Tensor<T>>> {
        let n = self.u32()?;
        (0..n).map(|_| self.tensor()).collect()
    }
}

pub fn encode_checkpoint<T: Real>(config: &str, params: &ParamStore<T>, state: &TrainState<T>) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.str(config);
    w.u32(params.len() as u32);
    for id in params.ids() {
        w.str(params.name(id));
        w.tensor(params.get(id))?;
    }
    w.u64(state.optim.t);
    for set in [&state.optim.first, &state.optim.second] {
        w.u32(set.len() as u32);
        for t in set {
            w.tensor(t)?;
        }
    }
    w.u64(state.step);
    w.u64(state.epoch);
    let s = &state.stats;
    w.u64(s.count);
    w.f64(s.sum);
    w.f64(s.last);
    w.u64(s.epoch_count);
    w.f64(s.epoch_sum);
    w.u8(state.best_f1.is_some() as u8);
    w.f64(state.best_f1.unwrap_or(0.0));
    w.0.extend_from_slice(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.0.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    w.u32(state.order.len() as u32);
    for &i in &state.order {
        w.u32(i);
    }
    w.u64(state.cursor as u64);
    Ok(w.0)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader(bytes);
    let magic = r.take(CHECKPOINT_MAGIC.len()).map_err(|_| Error::Version {
        expected: "CKPT1".into(),
        found: String::from_utf8_lossy(bytes).into_owned(),
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Version { expected: "CKPT1".into(), found: String::from_utf8_lossy(magic).into_owned() });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { expected: CHECKPOINT_VERSION.to_string(), found: version.to_string() });
    }
    let config = r.str()?;
    let n = r.u32()?;
    let params = (0..n).map(|_| Ok((r.str()?, r.tensor()?))).collect::<Result<Vec<_>>>()?;
    let t = r.u64()?;
    let first = r.tensors()?;
    let second = r.tensors()?;
    let step = r.u64()?;
    let epoch = r.u64()?;
    let stats = LossStats { count: r.u64()?, sum: r.f64()?, last: r.f64()?, epoch_count: r.u64()?, epoch_sum: r.f64()? };
    let has_best = r.u8()? != 0;
    let best = r.f64()?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let order_len = r.u32()?;
    let order = (0..order_len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let cursor = r.u64()? as usize;
    if !r.0.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.0.len())));
    }
    let state = TrainState {
        step,
        epoch,
        optim: OptimState { t, first, second },
        stats,
        rng,
        order,
        cursor,
        best_f1: has_best.then_some(best),
    };
    Ok(Checkpoint { config, params, state })
}

/// Writes atomically through a sibling temporary file.
pub fn save_checkpoint<T: Real>(path: &Path, config: &str, params: &ParamStore<T>, state: &TrainState<T>) -> Result<()> {
    let bytes = encode_checkpoint(config, params, state)?;
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

impl<T: Real> Checkpoint<T> {
    /// Copies parameters into `store`, which must hold exactly the same
    /// names in the same order with the same shapes.
    pub fn restore_params(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (id, (name, value)) in store.ids().zip(&self.params) {
            if store.name(id) != name {
                return Err(Error::CheckpointMismatch(format!("expected `{}`, found `{name}`", store.name(id))));
            }
            if store.shape(id) != value.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "`{name}` has shape {:?}, model expects {:?}",
                    value.shape(),
                    store.shape(id)
                )));
            }
        }
        for (id, (_, value)) in store.ids().collect::<Vec<_>>().into_iter().zip(&self.params) {
            store.set(id, value.clone())?;
        }
        Ok(())
    }
}
