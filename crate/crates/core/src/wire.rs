//! Little-endian binary encoding helpers shared by the tape and model
//! share files.

use crate::bits::{BitMat, BitVec};
use crate::error::Result;
use crate::ring::{Mat, Ring, RingVec};
use std::io::{Read, Write};

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn put_ringvec(w: &mut impl Write, v: &RingVec) -> Result<()> {
    put_u32(w, v.ring().width())?;
    put_u64(w, v.len() as u64)?;
    w.write_all(&v.to_bytes())?;
    Ok(())
}

pub(crate) fn get_ringvec(r: &mut impl Read) -> Result<RingVec> {
    let ring = Ring::new(get_u32(r)?);
    let n = get_u64(r)? as usize;
    let mut buf = vec![0u8; n * ring.wire_bytes()];
    r.read_exact(&mut buf)?;
    RingVec::from_bytes(ring, n, &buf)
}

pub(crate) fn put_mat(w: &mut impl Write, m: &Mat) -> Result<()> {
    put_u32(w, m.ring().width())?;
    put_u64(w, m.rows() as u64)?;
    put_u64(w, m.cols() as u64)?;
    w.write_all(&m.as_ringvec().to_bytes())?;
    Ok(())
}

pub(crate) fn get_mat(r: &mut impl Read) -> Result<Mat> {
    let ring = Ring::new(get_u32(r)?);
    let rows = get_u64(r)? as usize;
    let cols = get_u64(r)? as usize;
    let mut buf = vec![0u8; rows * cols * ring.wire_bytes()];
    r.read_exact(&mut buf)?;
    Ok(Mat::from_ringvec(
        RingVec::from_bytes(ring, rows * cols, &buf)?,
        rows,
        cols,
    ))
}

pub(crate) fn put_bits(w: &mut impl Write, v: &BitVec) -> Result<()> {
    put_u64(w, v.len() as u64)?;
    w.write_all(&v.to_bytes())?;
    Ok(())
}

pub(crate) fn get_bits(r: &mut impl Read) -> Result<BitVec> {
    let n = get_u64(r)? as usize;
    let mut buf = vec![0u8; (n + 7) / 8];
    r.read_exact(&mut buf)?;
    BitVec::from_bytes(n, &buf)
}

pub(crate) fn put_bitmat(w: &mut impl Write, m: &BitMat) -> Result<()> {
    put_u64(w, m.rows() as u64)?;
    put_u64(w, m.cols() as u64)?;
    w.write_all(&m.to_bytes())?;
    Ok(())
}

pub(crate) fn get_bitmat(r: &mut impl Read) -> Result<BitMat> {
    let rows = get_u64(r)? as usize;
    let cols = get_u64(r)? as usize;
    let mut buf = vec![0u8; (rows * cols + 7) / 8];
    r.read_exact(&mut buf)?;
    BitMat::from_bytes(rows, cols, &buf)
}

