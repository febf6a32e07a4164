//! Columnar text form of a path: `time,component_0,..`, one row per node and a
//! trailing `terminal_jump` row.

use std::io::{Read, Write};

use super::{GridPath, Regularity, TimeGrid};
use crate::error::{Error, Result};

const JUMP: &str = "terminal_jump";
const JUMP_CADLAG: &str = "terminal_jump_cadlag";

pub fn write_path_csv<W: Write>(x: &GridPath, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend((0..x.dim()).map(|c| format!("component_{c}")));
    w.write_record(&header)?;
    for i in 0..=x.anchor() {
        let mut row = vec![format!("{}", x.grid().time(i))];
        row.extend(x.node(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    let label = if x.regularity == Regularity::Cadlag { JUMP_CADLAG } else { JUMP };
    let mut row = vec![label.to_string()];
    row.extend(x.terminal_jump().iter().map(|v| format!("{v:?}")));
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

pub fn read_path_csv<R: Read>(input: R, grid: TimeGrid) -> Result<GridPath> {
    let mut r = csv::Reader::from_reader(input);
    let dim = r.headers()?.len().saturating_sub(1);
    let parse = |s: &str| -> Result<f64> { s.trim().parse::<f64>().map_err(|e| Error::Io(format!("{s:?}: {e}"))) };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut jump: Option<(Vec<f64>, bool)> = None;
    for rec in r.records() {
        let rec = rec?;
        let label = rec.get(0).unwrap_or("");
        let vals = rec.iter().skip(1).map(parse).collect::<Result<Vec<f64>>>()?;
        if label == JUMP || label == JUMP_CADLAG {
            jump = Some((vals, label == JUMP_CADLAG));
            continue;
        }
        let t = parse(label)?;
        if (t - grid.time(rows.len())).abs() > 1e-9 * (1.0 + grid.horizon()) {
            return Err(Error::GridMismatch);
        }
        rows.push(vals);
    }
    if dim == 0 {
        return Err(Error::Io("path file has no components".into()));
    }
    let mut x = GridPath::from_rows(grid, &rows)?;
    if let Some((h, cadlag)) = jump {
        if cadlag {
            x = x.into_cadlag();
        }
        x = x.vertical_perturbation(&h)?;
    }
    Ok(x)
}
