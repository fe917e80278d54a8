//! `VOXG` occupancy and `TRAV` traversability file formats (little-endian).
//!
//! Both start with a 4-byte magic, `u32` version 1, `u32` dims, `f64` origin
//! and `f64` resolution, followed by a `u64` record count.

use std::path::Path;

use super::{GridMeta, OccupancyGrid, TravKey, TravTensor, TrialCount, Voxel};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

const VERSION: u32 = 1;

fn write_meta(w: &mut Writer, m: &GridMeta) {
    for d in m.dims {
        w.u32(d);
    }
    for o in m.origin {
        w.f64(o);
    }
    w.f64(m.resolution);
}

fn read_meta(r: &mut Reader) -> Result<GridMeta> {
    let at = r.offset();
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let origin = [r.f64()?, r.f64()?, r.f64()?];
    let res = r.f64()?;
    GridMeta::new(dims, origin, res).map_err(|e| Error::format(at, e.to_string()))
}

fn read_voxel(r: &mut Reader, meta: &GridMeta) -> Result<Voxel> {
    let at = r.offset();
    let v = [r.u32()?, r.u32()?, r.u32()?];
    let vox = Voxel::new(v[0] as i32, v[1] as i32, v[2] as i32);
    if v.iter().any(|&x| x > i32::MAX as u32) || !meta.contains(vox) {
        return Err(Error::format(at, format!("voxel {v:?} outside grid")));
    }
    Ok(vox)
}

pub fn encode_grid(grid: &OccupancyGrid) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(b"VOXG");
    w.u32(VERSION);
    write_meta(&mut w, grid.meta());
    w.u64(grid.len() as u64);
    for v in grid.iter() {
        w.u32(v.i as u32);
        w.u32(v.j as u32);
        w.u32(v.k as u32);
    }
    w.into_inner()
}

pub fn decode_grid(data: &[u8]) -> Result<OccupancyGrid> {
    let mut r = Reader::new(data);
    r.header(b"VOXG", VERSION)?;
    let meta = read_meta(&mut r)?;
    let n = r.u64()?;
    let n = r.check_count(n, 12)?;
    let mut g = OccupancyGrid::new(meta);
    for _ in 0..n {
        let at = r.offset();
        let v = read_voxel(&mut r, &meta)?;
        if !g.insert(v).expect("validated voxel") {
            return Err(Error::format(at, format!("duplicate voxel {:?}", v.as_array())));
        }
    }
    r.finish()?;
    Ok(g)
}

pub fn encode_trav(t: &TravTensor) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(b"TRAV");
    w.u32(VERSION);
    write_meta(&mut w, &t.meta);
    w.u64(t.len() as u64);
    for (k, c) in t.iter() {
        w.u32(k.voxel.i as u32);
        w.u32(k.voxel.j as u32);
        w.u32(k.voxel.k as u32);
        w.u8(k.heading_idx);
        w.u8(k.action_idx);
        w.u8(c.n_suc);
        w.u8(c.n_total);
    }
    w.into_inner()
}

pub fn decode_trav(data: &[u8]) -> Result<TravTensor> {
    let mut r = Reader::new(data);
    r.header(b"TRAV", VERSION)?;
    let meta = read_meta(&mut r)?;
    let n = r.u64()?;
    let n = r.check_count(n, 16)?;
    let mut t = TravTensor::new(meta);
    for _ in 0..n {
        let at = r.offset();
        let voxel = read_voxel(&mut r, &meta)?;
        let key = TravKey {
            voxel,
            heading_idx: r.u8()?,
            action_idx: r.u8()?,
        };
        let count = TrialCount {
            n_suc: r.u8()?,
            n_total: r.u8()?,
        };
        t.insert(key, count).map_err(|e| Error::format(at, e.to_string()))?;
    }
    r.finish()?;
    Ok(t)
}

pub fn write_grid(path: &Path, grid: &OccupancyGrid) -> Result<()> {
    write_file(path, &encode_grid(grid))
}

pub fn read_grid(path: &Path) -> Result<OccupancyGrid> {
    decode_grid(&read_file(path)?)
}

pub fn write_trav(path: &Path, t: &TravTensor) -> Result<()> {
    write_file(path, &encode_trav(t))
}

pub fn read_trav(path: &Path) -> Result<TravTensor> {
    decode_trav(&read_file(path)?)
}
