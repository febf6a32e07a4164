use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::ValueTable;
use crate::error::Result;

#[derive(Serialize)]
struct Layer {
    step: usize,
    entries: usize,
    file: String,
}

#[derive(Serialize)]
struct Index {
    start: usize,
    steps: usize,
    branches: usize,
    controls: usize,
    layers: Vec<Layer>,
}

/// Writes `value_table.json` and one `layer_<i>.csv` per step with columns
/// `node, ctrl_seq, value, argmin, x_<j>_<c>`. Returns the written files.
pub fn export_table(tbl: &ValueTable, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut layers = Vec::new();
    for i in tbl.start()..=tbl.steps() {
        let name = format!("layer_{i}.csv");
        let path = dir.join(&name);
        let mut w = csv::Writer::from_path(&path)?;
        let layer = tbl.layer(i);
        let d = layer.first().map_or(0, |e| e.path.dim());
        let mut header = vec!["node".to_string(), "ctrl_seq".into(), "value".into(), "argmin".into()];
        for j in 0..=i {
            for c in 0..d {
                header.push(format!("x_{j}_{c}"));
            }
        }
        w.write_record(&header)?;
        for e in layer {
            let mut rec = vec![
                e.node.to_string(),
                e.ctrl_seq.to_string(),
                format!("{:.17e}", e.value),
                e.argmin.map_or(String::new(), |u| u.to_string()),
            ];
            for j in 0..=i {
                for c in 0..d {
                    rec.push(format!("{:.17e}", e.path.value(j, c)));
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        layers.push(Layer { step: i, entries: layer.len(), file: name });
        files.push(path);
    }
    let index = Index {
        start: tbl.start(),
        steps: tbl.steps(),
        branches: tbl.branches(),
        controls: tbl.control_count(),
        layers,
    };
    let path = dir.join("value_table.json");
    serde_json::to_writer_pretty(File::create(&path)?, &index)?;
    files.push(path);
    Ok(files)
}
