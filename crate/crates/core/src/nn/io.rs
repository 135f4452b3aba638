//! `RLNN1` binary format for [`NetworkState`], little-endian throughout:
//!
//! ```text
//! magic "RLNN1"
//! u32 tensor count, then per tensor: u32 ndim, u64 dims[ndim], f64 data[..]
//! u8 has_slots; if 1: u64 step, then `first` and `second` as
//!     u32 count, per entry: u64 len, f64 data[len]
//! u64 batches_trained
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::network::NetworkState;
use crate::error::{Error, Result};
use crate::optim::OptimizerSlots;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"RLNN1";

pub fn write_state<W: Write>(state: &NetworkState, mut w: W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(state.params.len() as u32).to_le_bytes())?;
    for t in &state.params {
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        write_f64s(&mut w, t.data())?;
    }
    match &state.slots {
        None => w.write_all(&[0])?,
        Some(s) => {
            w.write_all(&[1])?;
            w.write_all(&s.step.to_le_bytes())?;
            for group in [&s.first, &s.second] {
                w.write_all(&(group.len() as u32).to_le_bytes())?;
                for v in group {
                    w.write_all(&(v.len() as u64).to_le_bytes())?;
                    write_f64s(&mut w, v)?;
                }
            }
        }
    }
    w.write_all(&state.batches_trained.to_le_bytes())?;
    w.flush()
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_state<R: Read>(mut r: R) -> Result<NetworkState> {
    let mut magic = [0u8; 5];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected RLNN1")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 8 {
            return Err(Error::Format(format!("tensor with {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        params.push(Tensor::from_vec(&shape, read_f64s(&mut r, n)?)?);
    }
    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag)?;
    let slots = match flag[0] {
        0 => None,
        1 => {
            let step = read_u64(&mut r)?;
            let mut groups = Vec::with_capacity(2);
            for _ in 0..2 {
                let n = read_u32(&mut r)? as usize;
                let mut group = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    let len = read_u64(&mut r)? as usize;
                    group.push(read_f64s(&mut r, len)?);
                }
                groups.push(group);
            }
            let second = groups.pop().unwrap_or_default();
            let first = groups.pop().unwrap_or_default();
            Some(OptimizerSlots { step, first, second })
        }
        other => return Err(Error::Format(format!("bad slot flag {other}"))),
    };
    let batches_trained = read_u64(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after state".into()));
    }
    Ok(NetworkState {
        params,
        slots,
        batches_trained,
    })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated state file: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 20));
    let mut b = [0u8; 8];
    for _ in 0..n {
        read_exact(r, &mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn save_state(state: &NetworkState, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_state(state, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_state(path: &Path) -> Result<NetworkState> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_state(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::build_network;
    use crate::nn::spec::{ArchOptions, Architecture};
    use crate::optim::OptimizerKind;

    #[test]
    fn round_trip_with_and_without_slots() {
        let (spec, mut state) =
            build_network(Architecture::Cnn2Multibranch, 16, 3, &ArchOptions::default(), 4).unwrap();
        let mut buf = Vec::new();
        write_state(&state, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"RLNN1");
        assert_eq!(read_state(buf.as_slice()).unwrap(), state);

        let mut slots = OptimizerSlots::new(OptimizerKind::Adam, &state.params);
        slots.step = 12;
        slots.first[0][0] = -0.25;
        state.slots = Some(slots);
        state.batches_trained = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.rlnn");
        save_state(&state, &path).unwrap();
        let back = load_state(&path).unwrap();
        assert_eq!(back, state);
        back.check(&spec).unwrap();
    }

    #[test]
    fn rejects_corrupt_input() {
        let (_, state) = build_network(Architecture::Vanilla, 6, 3, &ArchOptions::default(), 4).unwrap();
        let mut buf = Vec::new();
        write_state(&state, &mut buf).unwrap();
        assert!(matches!(read_state(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_state(bad.as_slice()), Err(Error::Format(_))));
        buf.push(0);
        assert!(matches!(read_state(buf.as_slice()), Err(Error::Format(_))));
    }
}
