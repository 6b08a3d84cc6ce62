//! CSV formats for datasets and panels.
//!
//! Floats are written with 17 significant digits so that reading a file
//! back reproduces every value bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use latrec_core::datagen::{Dataset, GeneratorSpec};
use latrec_core::panel::{PanelDataset, PanelRow};
use latrec_core::Matrix;

use crate::error::{Error, Result};

/// Marker written for missing panel cells. Empty cells are also read as missing.
pub const MISSING: &str = "NA";

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_float(s: &str, context: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::format(context, line, format!("column `{column}`: cannot parse `{s}` as a number")))?;
    if !v.is_finite() {
        return Err(Error::format(context, line, format!("column `{column}`: non-finite value `{s}`")));
    }
    Ok(v)
}

fn is_latent_name(name: &str) -> bool {
    name.len() > 1 && name.starts_with('Z') && name[1..].chars().all(|c| c.is_ascii_digit())
}

pub fn write_dataset<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = ds.x_names.iter().map(String::as_str).collect();
    header.extend(ds.z_names.iter().map(String::as_str));
    if ds.u.is_some() {
        header.push("U");
    }
    w.write_record(&header)?;
    for r in 0..ds.rows() {
        let mut rec: Vec<String> = ds.x.row(r).iter().map(|&v| format_float(v)).collect();
        if let Some(z) = &ds.z {
            rec.extend(z.row(r).iter().map(|&v| format_float(v)));
        }
        if let Some(u) = &ds.u {
            rec.push(u[r].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<dataset>", e))?;
    Ok(())
}

/// Columns named `Z<k>` become ground truth, a column named `U` becomes the
/// regime label, everything else is an observation.
pub fn read_dataset<R: Read>(input: R, context: &str) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let mut x_cols = Vec::new();
    let mut z_cols = Vec::new();
    let mut u_col = None;
    for (j, name) in header.iter().enumerate() {
        if name == "U" {
            u_col = Some(j);
        } else if is_latent_name(name) {
            z_cols.push(j);
        } else {
            x_cols.push(j);
        }
    }
    if x_cols.is_empty() {
        return Err(Error::format(context, 1, "no observation columns in header"));
    }
    let mut x = Vec::new();
    let mut z = Vec::new();
    let mut u = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::format(context, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        for &j in &x_cols {
            x.push(parse_float(&rec[j], context, line, &header[j])?);
        }
        for &j in &z_cols {
            z.push(parse_float(&rec[j], context, line, &header[j])?);
        }
        if let Some(j) = u_col {
            let v = rec[j]
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::format(context, line, format!("column `U`: `{}` is not a label", &rec[j])))?;
            u.push(v);
        }
        rows += 1;
    }
    let xm = Matrix::from_vec(rows, x_cols.len(), x)?;
    let zm = if z_cols.is_empty() {
        None
    } else {
        Some(Matrix::from_vec(rows, z_cols.len(), z)?)
    };
    let mut ds = Dataset::new(xm, zm, u_col.map(|_| u))?;
    ds.x_names = x_cols.iter().map(|&j| header[j].to_string()).collect();
    ds.z_names = z_cols.iter().map(|&j| header[j].to_string()).collect();
    ds.spec = GeneratorSpec::External;
    Ok(ds)
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, f)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(f, &path.display().to_string())
}

/// Which CSV columns hold the entity, the period and the measurements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PanelSchema {
    pub entity: String,
    pub time: String,
    pub measurements: Vec<String>,
}

pub fn read_panel<R: Read>(input: R, schema: &PanelSchema, context: &str) -> Result<PanelDataset> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| {
            Error::format(
                context,
                1,
                format!(
                    "missing column `{name}`; header has: {}",
                    header.iter().collect::<Vec<_>>().join(", ")
                ),
            )
        })
    };
    let e_col = find(&schema.entity)?;
    let t_col = find(&schema.time)?;
    let m_cols = schema
        .measurements
        .iter()
        .map(|m| find(m))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut lines = std::collections::BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::format(context, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let entity = rec[e_col].to_string();
        let time: i64 = rec[t_col].trim().parse().map_err(|_| {
            Error::format(context, line, format!("column `{}`: `{}` is not an integer period", schema.time, &rec[t_col]))
        })?;
        if let Some(first) = lines.insert((entity.clone(), time), line) {
            return Err(Error::format(
                context,
                line,
                format!("duplicate key ({entity}, {time}); first seen on line {first}"),
            ));
        }
        let mut values = Vec::with_capacity(m_cols.len());
        for (&j, name) in m_cols.iter().zip(&schema.measurements) {
            let cell = rec[j].trim();
            values.push(if cell.is_empty() || cell == MISSING {
                None
            } else {
                Some(parse_float(cell, context, line, name)?)
            });
        }
        rows.push(PanelRow { entity, time, values });
    }
    Ok(PanelDataset::new(
        schema.entity.clone(),
        schema.time.clone(),
        schema.measurements.clone(),
        rows,
    )?)
}

pub fn read_panel_csv(path: &Path, schema: &PanelSchema) -> Result<PanelDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(f, schema, &path.display().to_string())
}

pub fn write_panel<W: Write>(panel: &PanelDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![panel.entity_column.clone(), panel.time_column.clone()];
    header.extend(panel.columns.iter().cloned());
    w.write_record(&header)?;
    for row in panel.rows() {
        let mut rec = vec![row.entity.clone(), row.time.to_string()];
        rec.extend(
            row.values
                .iter()
                .map(|v| v.map_or_else(|| MISSING.to_string(), format_float)),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<panel>", e))?;
    Ok(())
}

pub fn write_panel_csv(path: &Path, panel: &PanelDataset) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_panel(panel, f)
}

/// Schema matching a panel's own column layout.
pub fn schema_of(panel: &PanelDataset) -> PanelSchema {
    PanelSchema {
        entity: panel.entity_column.clone(),
        time: panel.time_column.clone(),
        measurements: panel.columns.clone(),
    }
}
