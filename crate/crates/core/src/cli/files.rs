//! CSV and JSON artifacts.
//!
//! Fields are written as `node_time,state,u_1,...,u_k` with floats in
//! shortest round-trip decimal form, so reading a file back reproduces the
//! field bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::{SolutionField, TracePoint};
use crate::timegrid::TimeGrid;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_field_csv(out: impl Write, field: &SolutionField) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let k = field.dim();
    let mut header = vec!["node_time".to_string(), "state".to_string()];
    header.extend((1..=k).map(|i| format!("u_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for j in field.start_index()..=field.grid().steps() {
        let t = field.grid().node(j).to_string();
        for x in 0..field.states() {
            let mut rec = vec![t.clone(), x.to_string()];
            rec.extend(field.at(j, x).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a field written by [`write_field_csv`] on `grid`. Rows must be
/// ordered by node, then state, and cover every state of each node up to `T`.
pub fn read_field_csv(input: impl Read, grid: &TimeGrid) -> Result<SolutionField> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let k = header.len().saturating_sub(2);
    if k == 0 || &header[0] != "node_time" || &header[1] != "state" {
        return Err(Error::Config(
            "field CSV needs a node_time,state,u_1.. header".into(),
        ));
    }
    let bad = |msg: String| Error::Config(format!("field CSV: {msg}"));
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let t: f64 = rec[0]
            .parse()
            .map_err(|_| bad(format!("bad time {:?}", &rec[0])))?;
        let j = grid
            .index_of(t)
            .ok_or_else(|| bad(format!("time {t} is not a grid node")))?;
        let x: usize = rec[1]
            .parse()
            .map_err(|_| bad(format!("bad state {:?}", &rec[1])))?;
        let vals = (2..rec.len())
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad value {:?}", &rec[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((j, x, vals));
    }
    let start = rows.first().ok_or_else(|| bad("no rows".into()))?.0;
    let nodes = grid.steps() + 1 - start;
    if !rows.len().is_multiple_of(nodes) {
        return Err(bad("row count does not match the grid".into()));
    }
    let states = rows.len() / nodes;
    let mut values = Array3::zeros((nodes, states, k));
    for (i, (j, x, vals)) in rows.into_iter().enumerate() {
        if j != start + i / states || x != i % states {
            return Err(bad(format!("row {} out of order", i + 1)));
        }
        for (c, v) in vals.into_iter().enumerate() {
            values[[j - start, x, c]] = v;
        }
    }
    SolutionField::new(grid.clone(), start, values)
}

pub fn write_trace_csv(out: impl Write, trace: &[TracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_time", "condB_statistic"])
        .map_err(csv_err)?;
    for p in trace {
        w.write_record([p.node_time.to_string(), p.statistic.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn save_field(path: &Path, field: &SolutionField) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_field_csv(std::io::BufWriter::new(file), field)
}

pub fn load_field(path: &Path, grid: &TimeGrid) -> Result<SolutionField> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    read_field_csv(std::io::BufReader::new(file), grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let grid = TimeGrid::build_uniform(0.7, 9, None).unwrap();
        let values = Array3::from_shape_fn((7, 2, 3), |(j, x, i)| {
            ((j * 7 + x * 3 + i) as f64 * 0.123_456_789).sin() * 10f64.powi(i as i32 * 7 - 10)
        });
        let field = SolutionField::new(grid.clone(), 3, values).unwrap();
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &field).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("node_time,state,u_1,u_2,u_3\n"));
        let back = read_field_csv(buf.as_slice(), &grid).unwrap();
        assert_eq!(back, field);
    }

    #[test]
    fn malformed_files() {
        let grid = TimeGrid::build_uniform(1.0, 2, None).unwrap();
        for text in [
            "t,state,u_1\n1,0,0\n",
            "node_time,state,u_1\n0.3,0,1\n",
            "node_time,state,u_1\n0.5,0,1\n1,0,x\n",
            "node_time,state,u_1\n1,0,1\n0.5,0,1\n",
        ] {
            assert!(read_field_csv(text.as_bytes(), &grid).is_err(), "{text}");
        }
    }
}
