//! Binary trajectory files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic     8 bytes  "NSVGDTRJ"
//! version   u32      1
//! n, d      u64, u64
//! count     u64      number of snapshots
//! retention u32 length + UTF-8 text, e.g. "every(5)"
//! count × { iteration u64, gamma f64, elapsed_time f64, n·d f64 row-major positions }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::Retention;
use crate::dynamics::{Snapshot, Trajectory};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

pub const TRAJECTORY_MAGIC: &[u8; 8] = b"NSVGDTRJ";
pub const TRAJECTORY_VERSION: u32 = 1;

fn bad(reason: impl Into<String>) -> Error {
    Error::Parse {
        what: "trajectory file",
        input: String::new(),
        reason: reason.into(),
    }
}

pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut out = BufWriter::new(out);
    let first = &traj.snapshots()[0].ensemble;
    let retention = traj.retention().to_string();
    out.write_all(TRAJECTORY_MAGIC)?;
    out.write_all(&TRAJECTORY_VERSION.to_le_bytes())?;
    out.write_all(&(first.n() as u64).to_le_bytes())?;
    out.write_all(&(first.d() as u64).to_le_bytes())?;
    out.write_all(&(traj.snapshots().len() as u64).to_le_bytes())?;
    out.write_all(&(retention.len() as u32).to_le_bytes())?;
    out.write_all(retention.as_bytes())?;
    for s in traj.snapshots() {
        out.write_all(&s.ensemble.iteration.to_le_bytes())?;
        out.write_all(&s.gamma.to_le_bytes())?;
        out.write_all(&s.ensemble.elapsed_time.to_le_bytes())?;
        for v in s.ensemble.positions() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => bad("truncated file"),
        _ => Error::Io(e),
    })?;
    Ok(b)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = BufReader::new(input);
    if &read_array::<8, _>(&mut r)? != TRAJECTORY_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != TRAJECTORY_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = read_u64(&mut r)? as usize;
    let d = read_u64(&mut r)? as usize;
    let count = read_u64(&mut r)?;
    let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if len > 256 {
        return Err(bad("retention tag too long"));
    }
    let mut tag = vec![0u8; len];
    r.read_exact(&mut tag).map_err(|_| bad("truncated file"))?;
    let retention: Retention = String::from_utf8(tag)
        .map_err(|_| bad("retention tag is not UTF-8"))?
        .parse()?;
    let cells = n.checked_mul(d).ok_or_else(|| bad("n·d overflows"))?;
    let mut snapshots = Vec::new();
    for _ in 0..count {
        let iteration = read_u64(&mut r)?;
        let gamma = read_f64(&mut r)?;
        let elapsed = read_f64(&mut r)?;
        let mut pos = Vec::with_capacity(cells);
        for _ in 0..cells {
            pos.push(read_f64(&mut r)?);
        }
        snapshots.push(Snapshot {
            ensemble: Ensemble::at(pos, n, d, iteration, elapsed)?,
            gamma,
        });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes"));
    }
    Trajectory::from_snapshots(snapshots, retention)
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_trajectory(File::create(path)?, traj)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    read_trajectory(File::open(path)?)
}
