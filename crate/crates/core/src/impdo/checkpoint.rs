//! Binary checkpoints of a [`UnitCellMPDO`].
//!
//! All integers and floats are little-endian. The byte layout is described
//! in `docs/checkpoint-format.md`; the file ends with a CRC-32 of every
//! preceding byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use thiserror::Error;

use super::{FlipGauge, StateMeta, UnitCellMPDO};
use crate::lindblad::{Grading, ModelError, ModelParams};
use crate::symtensor::{
    Charge, ChargeTensor, Direction, GradedIndex, Parity, SchmidtValues, TensorError, TruncationParams,
};
use crate::C64;

pub const MAGIC: &[u8; 8] = b"OPENTCK\0";
pub const FORMAT_VERSION: u32 = 1;

/// Caps on counts read from a file, so a damaged length cannot trigger a huge
/// allocation before the checksum is consulted.
const MAX_RANK: u32 = 8;
const MAX_COUNT: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint corrupted: {0}")]
    Corrupt(String),
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn i64(&mut self, x: i64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn charge(&mut self, q: Charge) {
        self.i64(q.qk);
        self.i64(q.qb);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt(format!("unexpected end at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn charge(&mut self) -> Result<Charge> {
        Ok(Charge::new(self.i64()?, self.i64()?))
    }
    fn count(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        if n > MAX_COUNT {
            return Err(CheckpointError::Corrupt(format!("{what} count {n} out of range")));
        }
        Ok(n as usize)
    }
}

fn write_tensor(w: &mut Writer, t: &ChargeTensor) {
    w.u32(t.rank() as u32);
    for leg in t.indices() {
        w.u8(match leg.direction() {
            Direction::In => 0,
            Direction::Out => 1,
        });
        w.u64(leg.num_sectors() as u64);
        for &(q, d) in leg.sectors() {
            w.charge(q);
            w.u64(d as u64);
        }
    }
    w.u64(t.num_blocks() as u64);
    for (key, block) in t.blocks() {
        for &q in key {
            w.charge(q);
        }
        for z in block.iter() {
            w.f64(z.re);
            w.f64(z.im);
        }
    }
}

fn read_tensor(r: &mut Reader) -> Result<ChargeTensor> {
    let rank = r.u32()?;
    if rank == 0 || rank > MAX_RANK {
        return Err(CheckpointError::Corrupt(format!("tensor rank {rank}")));
    }
    let mut legs = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let dir = match r.u8()? {
            0 => Direction::In,
            1 => Direction::Out,
            x => return Err(CheckpointError::Corrupt(format!("leg direction tag {x}"))),
        };
        let n = r.count("sector")?;
        let mut sectors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let q = r.charge()?;
            sectors.push((q, r.count("degeneracy")?));
        }
        legs.push(GradedIndex::new(sectors, dir)?);
    }
    let nblocks = r.count("block")?;
    let mut blocks = Vec::with_capacity(nblocks.min(1024));
    for _ in 0..nblocks {
        let key: Vec<Charge> = (0..rank).map(|_| r.charge()).collect::<Result<_>>()?;
        let shape: Vec<usize> = key
            .iter()
            .zip(&legs)
            .map(|(q, leg)| {
                leg.degeneracy(*q)
                    .ok_or_else(|| CheckpointError::Corrupt(format!("block charge {q} missing from its leg")))
            })
            .collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(16).ok_or_else(|| CheckpointError::Corrupt("block size".into()))?)?;
        let data: Vec<C64> = raw
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                C64::new(re, im)
            })
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        blocks.push((key, arr));
    }
    Ok(ChargeTensor::from_blocks(legs, blocks)?)
}

fn write_lambda(w: &mut Writer, l: &SchmidtValues) {
    w.u64(l.sectors().len() as u64);
    for (q, v) in l.sectors() {
        w.charge(*q);
        w.u64(v.len() as u64);
        for &x in v {
            w.f64(x);
        }
    }
}

fn read_lambda(r: &mut Reader) -> Result<SchmidtValues> {
    let n = r.count("spectrum sector")?;
    let mut sectors = BTreeMap::new();
    for _ in 0..n {
        let q = r.charge()?;
        let len = r.count("spectrum length")?;
        let v: Vec<f64> = (0..len).map(|_| r.f64()).collect::<Result<_>>()?;
        if sectors.insert(q, v).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate spectrum sector {q}")));
        }
    }
    Ok(SchmidtValues::new(sectors)?)
}

/// Serializes `state` to bytes, checksum included.
pub fn to_bytes(state: &UnitCellMPDO) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    let p = &state.params;
    w.f64(p.coupling);
    w.f64(p.gamma);
    w.f64(p.dt);
    let t = &state.truncation;
    w.u64(t.chi_max as u64);
    w.f64(t.eps_trunc);
    w.u8(t.normalize as u8);
    w.f64(t.degeneracy_tol);
    w.u8(match state.grading {
        Grading::Strong => 0,
        Grading::Weak => 1,
    });
    let m = &state.meta;
    w.u64(m.steps);
    w.f64(state.time());
    w.f64(m.trunc_weight);
    w.f64(m.log_norm);
    w.f64(m.trace_ref);
    w.u64(m.split_groups);
    for g in &state.gammas {
        write_tensor(&mut w, g);
    }
    for l in &state.lambdas {
        write_lambda(&mut w, l);
    }
    match &state.flip {
        None => w.u8(0),
        Some(f) => {
            w.u8(1);
            for p in &f.parity {
                w.u64(p.len() as u64);
                for &x in p {
                    w.u8(x as u8);
                }
            }
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

/// Parses a checkpoint, verifying magic, version and checksum first.
pub fn from_bytes(bytes: &[u8]) -> Result<UnitCellMPDO> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(CheckpointError::Corrupt(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version, expected: FORMAT_VERSION });
    }
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }

    let params = ModelParams { coupling: r.f64()?, gamma: r.f64()?, dt: r.f64()? };
    params.validate()?;
    let chi_max = usize::try_from(r.u64()?).unwrap_or(usize::MAX);
    let truncation = TruncationParams {
        chi_max,
        eps_trunc: r.f64()?,
        normalize: r.u8()? != 0,
        degeneracy_tol: r.f64()?,
    };
    let grading = match r.u8()? {
        0 => Grading::Strong,
        1 => Grading::Weak,
        x => return Err(CheckpointError::Corrupt(format!("grading tag {x}"))),
    };
    let steps = r.u64()?;
    let _elapsed = r.f64()?;
    let meta = StateMeta {
        steps,
        trunc_weight: r.f64()?,
        log_norm: r.f64()?,
        trace_ref: r.f64()?,
        split_groups: r.u64()?,
    };
    let gammas = [read_tensor(&mut r)?, read_tensor(&mut r)?];
    let lambdas = [read_lambda(&mut r)?, read_lambda(&mut r)?];
    let flip = match r.u8()? {
        0 => None,
        1 => {
            let mut read = || -> Result<Vec<Parity>> {
                let n = r.count("parity")?;
                (0..n)
                    .map(|_| match r.u8()? as Parity {
                        p @ (1 | -1) => Ok(p),
                        p => Err(CheckpointError::Corrupt(format!("parity value {p}"))),
                    })
                    .collect()
            };
            let parity = [read()?, read()?];
            Some(FlipGauge { parity })
        }
        x => return Err(CheckpointError::Corrupt(format!("flip tag {x}"))),
    };
    if r.pos != body.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let state = UnitCellMPDO { params, truncation, grading, gammas, lambdas, meta, flip };
    for bond in 0..2 {
        if let Some(f) = state.bond_flip(bond) {
            f.map_err(|e| CheckpointError::Corrupt(format!("bond {bond} parities: {e}")))?;
        }
    }
    Ok(state)
}

/// Writes `state` to `path` through a temporary file and a rename.
pub fn save(state: &UnitCellMPDO, path: &Path) -> Result<()> {
    let bytes = to_bytes(state);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<UnitCellMPDO> {
    from_bytes(&fs::read(path)?)
}
