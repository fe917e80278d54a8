use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{Dataset, Head, Label, Window, WINDOW_DIMS};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::voxgrid::Voxel;

const MAGIC: &[u8; 4] = b"TWND";
const VERSION: u32 = 1;

fn put_coord(w: &mut Writer, v: Voxel) {
    w.u16(v.i as u16);
    w.u16(v.j as u16);
    w.u16(v.k as u16);
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u8(ds.head.channels() as u8);
    w.u64(ds.windows.len() as u64);
    for win in &ds.windows {
        w.f32(win.yaw);
        w.u32(win.center.i as u32);
        w.u32(win.center.j as u32);
        w.u32(win.center.k as u32);
        w.u32(win.input.len() as u32);
        for &v in &win.input {
            put_coord(&mut w, v);
        }
        w.u32(win.labels.len() as u32);
        for (&v, l) in &win.labels {
            put_coord(&mut w, v);
            for &x in &l.values {
                w.f32(x);
            }
            for &p in &l.present {
                w.u8(p as u8);
            }
        }
    }
    w.into_inner()
}

fn get_coord(r: &mut Reader) -> Result<Voxel> {
    let at = r.offset();
    let v = Voxel::new(r.u16()? as i32, r.u16()? as i32, r.u16()? as i32);
    if v.i >= WINDOW_DIMS[0] as i32 || v.j >= WINDOW_DIMS[1] as i32 || v.k >= WINDOW_DIMS[2] as i32 {
        return Err(Error::format(at, format!("coordinate {:?} outside the window", v.as_array())));
    }
    Ok(v)
}

fn check_order(prev: Option<Voxel>, v: Voxel, at: u64) -> Result<()> {
    match prev {
        Some(p) if p >= v => Err(Error::format(at, "coordinates not strictly increasing")),
        _ => Ok(()),
    }
}

pub fn decode_dataset(data: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(data);
    r.header(MAGIC, VERSION)?;
    let at = r.offset();
    let c = r.u8()? as usize;
    let head = Head::from_channels(c).ok_or_else(|| Error::format(at, format!("unknown head width {c}")))?;
    let count = r.u64()?;
    let n = r.check_count(count, 24)?;
    let mut windows = Vec::with_capacity(n);
    for _ in 0..n {
        let yaw = r.f32()?;
        let center = Voxel::new(r.u32()? as i32, r.u32()? as i32, r.u32()? as i32);
        let n_in = r.u32()? as u64;
        let n_in = r.check_count(n_in, 6)?;
        let mut input = BTreeSet::new();
        let mut prev = None;
        for _ in 0..n_in {
            let at = r.offset();
            let v = get_coord(&mut r)?;
            check_order(prev, v, at)?;
            prev = Some(v);
            input.insert(v);
        }
        let n_lab = r.u32()? as u64;
        let n_lab = r.check_count(n_lab, 6 + 5 * c)?;
        let mut labels = BTreeMap::new();
        let mut prev = None;
        for _ in 0..n_lab {
            let at = r.offset();
            let v = get_coord(&mut r)?;
            check_order(prev, v, at)?;
            prev = Some(v);
            let mut values = Vec::with_capacity(c);
            for _ in 0..c {
                let at = r.offset();
                let x = r.f32()?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::format(at, format!("label value {x} outside [0, 1]")));
                }
                values.push(x);
            }
            let mut present = Vec::with_capacity(c);
            for _ in 0..c {
                let at = r.offset();
                present.push(match r.u8()? {
                    0 => false,
                    1 => true,
                    m => return Err(Error::format(at, format!("channel mask byte {m} is not 0 or 1"))),
                });
            }
            labels.insert(v, Label { values, present });
        }
        windows.push(Window {
            head,
            yaw,
            center,
            input,
            labels,
        });
    }
    r.finish()?;
    Ok(Dataset { head, windows })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_file(path, &encode_dataset(ds))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?)
}
