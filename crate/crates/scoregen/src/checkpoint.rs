//! Binary model checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "SGCKPT\0\0" | version u32 | schedule hash u64 | σ f64 | d u64 | β f64 | n u64 | nets u64
//! per net: k u64 | j u64 | t_start f64 | t_end f64
//!          depth u64 | width u64 | weight_bound f64 | sup_cap f64 | lip_cap f64
//!          gain f64 | layers u64 | dims u64… | params u64 | params f64…
//! SHA-256 of everything above (32 bytes)
//! ```

use std::fs;
use std::path::Path;

use scoregen_core::schedule::IntervalArch;
use scoregen_core::{ScoreModel, TanhNet, TimeSchedule};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result, Stage};

pub const MAGIC: &[u8; 8] = b"SGCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub version: u32,
    pub schedule_hash: u64,
    pub sigma: f64,
    pub d: usize,
    pub beta: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    /// `(k, j, net)` in file order.
    pub nets: Vec<(usize, usize, TanhNet)>,
}

pub fn encode(model: &ScoreModel) -> Vec<u8> {
    let schedule = model.schedule();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u64(&mut buf, schedule.hash());
    put_f64(&mut buf, model.sigma());
    put_u64(&mut buf, schedule.d as u64);
    put_f64(&mut buf, schedule.beta);
    put_u64(&mut buf, schedule.n as u64);
    put_u64(&mut buf, model.nets().len() as u64);
    for (&(k, j), net) in schedule.intervals().iter().zip(model.nets()) {
        put_u64(&mut buf, k as u64);
        put_u64(&mut buf, j as u64);
        let (a, b) = net.interval();
        put_f64(&mut buf, a);
        put_f64(&mut buf, b);
        let arch = net.arch();
        put_u64(&mut buf, arch.depth as u64);
        put_u64(&mut buf, arch.width as u64);
        put_f64(&mut buf, arch.weight_bound);
        put_f64(&mut buf, arch.sup_cap);
        put_f64(&mut buf, arch.lip_cap);
        put_f64(&mut buf, net.gain());
        put_u64(&mut buf, net.dims().len() as u64);
        for &w in net.dims() {
            put_u64(&mut buf, w as u64);
        }
        put_u64(&mut buf, net.params().len() as u64);
        for &p in net.params() {
            put_f64(&mut buf, p);
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptChecksum);
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let header = Header {
        version,
        schedule_hash: r.u64()?,
        sigma: r.f64()?,
        d: r.usize()?,
        beta: r.f64()?,
        n: r.usize()?,
    };
    let count = r.usize()?;
    let mut nets = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let (k, j) = (r.usize()?, r.usize()?);
        let interval = (r.f64()?, r.f64()?);
        let arch = IntervalArch {
            depth: r.usize()?,
            width: r.usize()?,
            weight_bound: r.f64()?,
            sup_cap: r.f64()?,
            lip_cap: r.f64()?,
        };
        let gain = r.f64()?;
        let layers = r.usize()?;
        let dims = (0..layers).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let np = r.usize()?;
        let params = (0..np).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let net = TanhNet::from_parts(dims, params, arch, interval, gain).stage("checkpoint")?;
        nets.push((k, j, net));
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after the last network".into()));
    }
    Ok(Checkpoint { header, nets })
}

pub fn save(model: &ScoreModel, path: &Path) -> Result<Vec<u8>> {
    let bytes = encode(model);
    fs::write(path, &bytes).map_err(io_err(path))?;
    Ok(bytes)
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path).map_err(io_err(path))?)
}

/// Rebuilds the model against `schedule`, which must be the one it was trained on.
pub fn into_model(ckpt: Checkpoint, schedule: &TimeSchedule) -> Result<ScoreModel> {
    let expected = schedule.hash();
    if ckpt.header.schedule_hash != expected {
        return Err(Error::ScheduleMismatch { found: ckpt.header.schedule_hash, expected });
    }
    if ckpt.nets.iter().map(|(k, j, _)| (*k, *j)).ne(schedule.intervals().iter().copied()) {
        return Err(Error::Checkpoint("network blocks do not follow the schedule's intervals".into()));
    }
    let nets = ckpt.nets.into_iter().map(|(_, _, n)| n).collect();
    ScoreModel::from_nets(schedule.clone(), ckpt.header.sigma, nets).stage("checkpoint")
}

pub fn load(path: &Path, schedule: &TimeSchedule) -> Result<ScoreModel> {
    into_model(read(path)?, schedule)
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size field overflows".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
