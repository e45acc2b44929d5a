//! Density serialization: CSV (indices, coordinates, value) and a compact
//! little-endian binary layout
//! `[n: u64][counts: u64 × n][h: f64][lower: f64 × n][upper: f64 × n][time: f64][values: f64 × N]`.

use std::io::{Read, Write};

use crate::density::GridDensity;
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::grid::Grid;

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("density i/o: {e}"))
}

/// Writes CSV; each `comments` line is emitted first, prefixed by `# `.
pub fn write_csv<const D: usize, W: Write>(m: &GridDensity<D>, comments: &[String], mut out: W) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}").map_err(io_err)?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..D).map(|d| format!("i{d}")).collect();
    header.extend((0..D).map(|d| format!("x{d}")));
    header.push("value".into());
    w.write_record(&header).map_err(io_err)?;
    for k in 0..m.grid.len() {
        let idx = m.grid.multi_index(k);
        let x = m.grid.node(k);
        let mut rec: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
        rec.extend(x.iter().map(|v| format!("{v:.17e}")));
        rec.push(format!("{:.17e}", m.values[k]));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads the node values of a CSV written by [`write_csv`] onto `grid`.
pub fn read_csv<const D: usize, R: Read>(grid: Grid<D>, time: f64, input: R) -> Result<GridDensity<D>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut values = vec![0.0; grid.len()];
    let mut seen = 0usize;
    for rec in r.records() {
        let rec = rec.map_err(io_err)?;
        if rec.len() != 2 * D + 1 {
            return Err(Error::GridMismatch(format!("expected {} columns, found {}", 2 * D + 1, rec.len())));
        }
        let mut idx = [0usize; D];
        for (d, slot) in idx.iter_mut().enumerate() {
            *slot = rec[d].parse().map_err(io_err)?;
            if *slot >= grid.counts[d] {
                return Err(Error::GridMismatch(format!("index {} out of range on axis {d}", *slot)));
            }
        }
        values[grid.index(&idx)] = rec[2 * D].parse().map_err(io_err)?;
        seen += 1;
    }
    if seen != grid.len() {
        return Err(Error::GridMismatch(format!("{seen} rows for {} nodes", grid.len())));
    }
    GridDensity::from_values(grid, values, time)
}

pub fn write_binary<const D: usize, W: Write>(m: &GridDensity<D>, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * (4 + 3 * D + m.values.len()));
    buf.extend_from_slice(&(D as u64).to_le_bytes());
    for c in m.grid.counts {
        buf.extend_from_slice(&(c as u64).to_le_bytes());
    }
    buf.extend_from_slice(&m.grid.h.to_le_bytes());
    for v in m.grid.domain.lower.iter().chain(&m.grid.domain.upper) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&m.time.to_le_bytes());
    for v in &m.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf).map_err(io_err)
}

pub fn read_binary<const D: usize, R: Read>(mut input: R) -> Result<GridDensity<D>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io_err)?;
    let mut words = bytes.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).expect("8-byte chunk"));
    let mut next = || words.next().ok_or_else(|| io_err("truncated header"));
    let n = u64::from_le_bytes(next()?) as usize;
    if n != D {
        return Err(Error::GridMismatch(format!("file has dimension {n}, expected {D}")));
    }
    let mut counts = [0usize; D];
    for c in counts.iter_mut() {
        *c = u64::from_le_bytes(next()?) as usize;
    }
    let h = f64::from_le_bytes(next()?);
    let mut lower = [0.0; D];
    let mut upper = [0.0; D];
    for v in lower.iter_mut().chain(upper.iter_mut()) {
        *v = f64::from_le_bytes(next()?);
    }
    let time = f64::from_le_bytes(next()?);
    let grid = Grid::new(Aabb::new(lower, upper), h)?;
    if grid.counts != counts {
        return Err(Error::GridMismatch("header counts disagree with box and spacing".into()));
    }
    let values = (0..grid.len()).map(|_| next().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
    GridDensity::from_values(grid, values, time)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GridDensity<2> {
        let g = Grid::new(Aabb::new([-1.0, 0.0], [1.0, 1.0]), 0.25).unwrap();
        let values = g.sample(|x| (x[0] * 3.0).sin().abs() + x[1] / 7.0);
        GridDensity::from_values(g, values, 0.125).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let m = sample();
        let mut buf = Vec::new();
        write_binary(&m, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (1 + 2 + 1 + 4 + 1 + m.values.len()));
        let back: GridDensity<2> = read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(read_binary::<1, _>(buf.as_slice()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = sample();
        let mut buf = Vec::new();
        write_csv(&m, &["tool test".into()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# tool test\ni0,i1,x0,x1,value\n"));
        let back = read_csv(m.grid, m.time, buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }
}
