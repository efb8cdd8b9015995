//! Binary field dumps.
//!
//! Layout: magic bytes `NSEF`, version `u32 = 1`, `u8` dimension `n`,
//! `u64 dims[n]`, `f64` box side `L`, then the components sequentially as
//! little-endian `f64` in row-major order. Scalars carry one component,
//! vectors `n`; the count is inferred from the payload size.

use super::{Grid, ScalarField, VectorField};
use crate::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"NSEF";
const VERSION: u32 = 1;

fn write_header<W: Write>(w: &mut W, grid: &Grid) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[grid.dim() as u8])?;
    for _ in 0..grid.dim() {
        w.write_all(&(grid.points() as u64).to_le_bytes())?;
    }
    w.write_all(&grid.len().to_le_bytes())?;
    Ok(())
}

fn write_component<W: Write>(w: &mut W, data: &ArrayD<f64>) -> Result<()> {
    let flat = data.as_slice().expect("row-major storage");
    let mut buf = Vec::with_capacity(flat.len() * 8);
    for v in flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_scalar<W: Write>(w: &mut W, field: &mut ScalarField) -> Result<()> {
    let grid = *field.grid();
    write_header(w, &grid)?;
    write_component(w, field.physical())
}

pub fn write_vector<W: Write>(w: &mut W, field: &mut VectorField) -> Result<()> {
    let grid = *field.grid();
    write_header(w, &grid)?;
    field.ensure_physical();
    for c in 0..grid.dim() {
        write_component(w, field.comp(c).phys_ref())?;
    }
    Ok(())
}

struct Header {
    n: usize,
    points: usize,
    len: f64,
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::FieldFile("bad magic bytes".into()));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4)?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(Error::FieldFile(format!("unsupported version {version}")));
    }
    let mut nb = [0u8; 1];
    r.read_exact(&mut nb)?;
    let n = nb[0] as usize;
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        let mut d8 = [0u8; 8];
        r.read_exact(&mut d8)?;
        dims.push(u64::from_le_bytes(d8) as usize);
    }
    if dims.is_empty() || dims.iter().any(|&d| d != dims[0]) {
        return Err(Error::FieldFile("only cube grids are supported".into()));
    }
    let mut l8 = [0u8; 8];
    r.read_exact(&mut l8)?;
    Ok(Header {
        n,
        points: dims[0],
        len: f64::from_le_bytes(l8),
    })
}

fn read_components<R: Read>(r: &mut R, h: &Header) -> Result<Vec<ArrayD<f64>>> {
    let per_comp = h.points.pow(h.n as u32);
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % (8 * per_comp) != 0 {
        return Err(Error::FieldFile(format!(
            "payload of {} bytes is not a whole number of {}-point components",
            rest.len(),
            per_comp
        )));
    }
    let n_comp = rest.len() / (8 * per_comp);
    let shape = vec![h.points; h.n];
    let mut out = Vec::with_capacity(n_comp);
    for c in 0..n_comp {
        let base = c * per_comp * 8;
        let values: Vec<f64> = (0..per_comp)
            .map(|i| {
                let o = base + 8 * i;
                f64::from_le_bytes(rest[o..o + 8].try_into().unwrap())
            })
            .collect();
        out.push(ArrayD::from_shape_vec(IxDyn(&shape), values).unwrap());
    }
    Ok(out)
}

pub fn read_scalar<R: Read>(r: &mut R, dealias: bool) -> Result<ScalarField> {
    let h = read_header(r)?;
    let grid = Grid::new(h.n, h.len, h.points, dealias)?;
    let comps = read_components(r, &h)?;
    if comps.len() != 1 {
        return Err(Error::FieldFile(format!(
            "expected 1 component for a scalar, found {}",
            comps.len()
        )));
    }
    Ok(ScalarField::from_physical(grid, comps.into_iter().next().unwrap()))
}

pub fn read_vector<R: Read>(r: &mut R, dealias: bool) -> Result<VectorField> {
    let h = read_header(r)?;
    let grid = Grid::new(h.n, h.len, h.points, dealias)?;
    let comps = read_components(r, &h)?;
    if comps.len() != h.n {
        return Err(Error::FieldFile(format!(
            "expected {} components for a vector, found {}",
            h.n,
            comps.len()
        )));
    }
    Ok(VectorField::from_components(
        comps
            .into_iter()
            .map(|c| ScalarField::from_physical(grid, c))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_roundtrip_is_bit_exact() {
        let grid = Grid::new(3, 4.0, 8, true).unwrap();
        let mut u = VectorField::sample(grid, |x, c| x[c] * 0.37 + (x[(c + 1) % 3]).sin());
        let mut buf = Vec::new();
        write_vector(&mut buf, &mut u).unwrap();
        let mut back = read_vector(&mut &buf[..], true).unwrap();
        for c in 0..3 {
            let a = u.comp_mut(c).physical().clone();
            let b = back.comp_mut(c).physical();
            assert_eq!(a, *b);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let grid = Grid::new(3, 4.0, 8, true).unwrap();
        let mut u = ScalarField::sample(grid, |x| x[0]);
        let mut buf = Vec::new();
        write_scalar(&mut buf, &mut u).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(read_scalar(&mut &buf[..], true).is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let buf = b"XXXX\x01\x00\x00\x00".to_vec();
        assert!(read_scalar(&mut &buf[..], true).is_err());
    }
}
