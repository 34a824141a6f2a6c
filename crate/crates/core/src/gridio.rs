//! Grid files: a `#`-prefixed shape line followed by CSV rows, one per node in
//! row-major node order (last lattice index fastest).
//!
//! ```text
//! # rows=1 cols=1 points=16 periods=1
//! node,t1,e00_re,e00_im
//! 0,0,1,0
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fields::{PeriodicField, TorusFunction};
use crate::lattice::{Lattice, TorusGrid};

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidGrid(format!("bad dimension list '{s}'")))
        })
        .collect()
}

fn write_entries<W: Write>(
    grid: &TorusGrid,
    rows: usize,
    cols: usize,
    data: &[C64],
    out: W,
) -> Result<()> {
    let mut out = out;
    writeln!(
        out,
        "# rows={rows} cols={cols} points={} periods={}",
        join(grid.points()),
        join(grid.periods())
    )?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["node".to_string()];
    header.extend((1..=grid.dim()).map(|j| format!("t{j}")));
    for r in 0..rows {
        for c in 0..cols {
            header.push(format!("e{r}{c}_re"));
            header.push(format!("e{r}{c}_im"));
        }
    }
    w.write_record(&header).map_err(csv_err)?;
    let nodes = grid.len();
    for node in 0..nodes {
        let mut rec = vec![node.to_string()];
        rec.extend(grid.node_coords(node).iter().map(|t| format!("{t}")));
        for e in 0..rows * cols {
            let z = data[e * nodes + node];
            rec.push(format!("{:e}", z.re));
            rec.push(format!("{:e}", z.im));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidGrid(format!("grid file: {e}"))
}

/// Parsed grid file contents.
struct RawGrid {
    rows: usize,
    cols: usize,
    points: Vec<usize>,
    periods: Vec<usize>,
    data: Vec<C64>,
}

fn read_entries<R: Read>(input: R) -> Result<RawGrid> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let shape = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::InvalidGrid("grid file must start with a '#' shape line".into()))?;
    let (mut rows, mut cols, mut points, mut periods) = (None, None, None, None);
    for item in shape.split_whitespace() {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidGrid(format!("bad shape item '{item}'")))?;
        match key {
            "rows" => rows = value.parse().ok(),
            "cols" => cols = value.parse().ok(),
            "points" => points = Some(parse_dims(value)?),
            "periods" => periods = Some(parse_dims(value)?),
            _ => {}
        }
    }
    let (Some(rows), Some(cols), Some(points)) = (rows, cols, points) else {
        return Err(Error::InvalidGrid(
            "shape line needs rows, cols and points".into(),
        ));
    };
    let d = points.len();
    let periods = periods.unwrap_or_else(|| vec![1; d]);
    let nodes: usize = points.iter().product();
    let mut data = vec![C64::default(); rows * cols * nodes];
    let mut csv = csv::Reader::from_reader(reader);
    let mut seen = 0;
    for (node, rec) in csv.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if node >= nodes || rec.len() != 1 + d + 2 * rows * cols {
            return Err(Error::InvalidGrid(format!(
                "unexpected record {node} in grid file"
            )));
        }
        for e in 0..rows * cols {
            let num = |i: usize| -> Result<f64> {
                rec[i].trim().parse().map_err(|_| {
                    Error::InvalidGrid(format!("bad number '{}' at node {node}", &rec[i]))
                })
            };
            let base = 1 + d + 2 * e;
            data[e * nodes + node] = C64::new(num(base)?, num(base + 1)?);
        }
        seen += 1;
    }
    if seen != nodes {
        return Err(Error::InvalidGrid(format!(
            "expected {nodes} nodes, found {seen}"
        )));
    }
    Ok(RawGrid {
        rows,
        cols,
        points,
        periods,
        data,
    })
}

pub fn write_field(path: &Path, f: &PeriodicField) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_entries(f.grid(), f.rows(), f.cols(), f.data(), file)
}

pub fn write_function(path: &Path, u: &TorusFunction) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_entries(u.grid(), u.ncomp(), 1, u.data(), file)
}

fn checked_grid(raw: &RawGrid, lattice: &Arc<Lattice>) -> Result<TorusGrid> {
    TorusGrid::new(lattice.clone(), raw.points.clone(), raw.periods.clone())
}

/// Reads a field; `expected` fixes the grid it must live on.
pub fn read_field(path: &Path, expected: &TorusGrid) -> Result<PeriodicField> {
    let raw = read_entries(std::fs::File::open(path)?)?;
    let grid = checked_grid(&raw, expected.lattice_arc())?;
    if &grid != expected {
        return Err(Error::ShapeMismatch(format!(
            "{} holds a {:?} grid, expected {:?}",
            path.display(),
            raw.points,
            expected.points()
        )));
    }
    PeriodicField::new(grid, raw.rows, raw.cols, raw.data)
}

pub fn read_function(path: &Path, expected: &TorusGrid) -> Result<TorusFunction> {
    let raw = read_entries(std::fs::File::open(path)?)?;
    if raw.cols != 1 {
        return Err(Error::ShapeMismatch(
            "functions are stored with cols=1".into(),
        ));
    }
    let grid = checked_grid(&raw, expected.lattice_arc())?;
    if &grid != expected {
        return Err(Error::ShapeMismatch(format!(
            "{} holds a {:?} grid, expected {:?}",
            path.display(),
            raw.points,
            expected.points()
        )));
    }
    TorusFunction::new(grid, raw.rows, raw.data)
}
