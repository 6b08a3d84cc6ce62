//! Plain-text formats for Jacobian supports and Gaussian regime families.
//!
//! Both are line oriented: blank lines and `#` comments are skipped, fields
//! are separated by commas or whitespace.
//!
//! - Support: one line per measurement, one `0`/`1` per latent.
//! - Family: one line per regime, the `n` means followed by the `n` standard
//!   deviations.

use std::fs;
use std::path::Path;

use latrec_core::datagen::{GaussianFamily, SupportMatrix};

use crate::csvio::format_float;
use crate::error::{Error, Result};

fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty())
}

/// `(line number, fields)` of every content line.
fn content_lines(text: &str) -> Vec<(usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter_map(|(i, l)| {
            let body = l.split('#').next().unwrap_or("").trim();
            (!body.is_empty()).then(|| (i + 1, fields(body).collect()))
        })
        .collect()
}

pub fn parse_support(text: &str, context: &str) -> Result<SupportMatrix> {
    let lines = content_lines(text);
    if lines.is_empty() {
        return Err(Error::format(context, 1, "support file has no rows"));
    }
    let width = lines[0].1.len();
    let mut rows = Vec::with_capacity(lines.len());
    for (line, cells) in &lines {
        if cells.len() != width {
            return Err(Error::format(context, *line, format!("expected {width} entries, found {}", cells.len())));
        }
        let row = cells
            .iter()
            .map(|c| match *c {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::format(context, *line, format!("entry `{other}` is not 0 or 1"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        rows.push(row);
    }
    SupportMatrix::new(rows).map_err(|e| Error::format(context, lines[0].0, e.to_string()))
}

pub fn format_support(f: &SupportMatrix) -> String {
    let mut s = String::new();
    for i in 0..f.measurements() {
        let row: Vec<&str> = f.row(i).iter().map(|&b| if b { "1" } else { "0" }).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_family(text: &str, context: &str) -> Result<GaussianFamily> {
    let lines = content_lines(text);
    if lines.is_empty() {
        return Err(Error::format(context, 1, "family file has no regimes"));
    }
    let width = lines[0].1.len();
    if width == 0 || width % 2 != 0 {
        return Err(Error::format(context, lines[0].0, "a regime needs n means followed by n standard deviations"));
    }
    let n = width / 2;
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for (line, cells) in &lines {
        if cells.len() != width {
            return Err(Error::format(context, *line, format!("expected {width} numbers, found {}", cells.len())));
        }
        let nums = cells
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(context, *line, format!("`{c}` is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(bad) = nums[n..].iter().find(|&&s| s <= 0.0) {
            return Err(Error::format(context, *line, format!("standard deviation {bad} must be positive")));
        }
        means.push(nums[..n].to_vec());
        stds.push(nums[n..].to_vec());
    }
    Ok(GaussianFamily::new(means, stds)?)
}

pub fn format_family(f: &GaussianFamily) -> String {
    let mut s = String::from("# one regime per line: means, then standard deviations\n");
    for (m, sd) in f.means.iter().zip(&f.stds) {
        let row: Vec<String> = m.iter().chain(sd).map(|&v| format_float(v)).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use latrec_core::datagen::{generate_distributional, generate_structural};

    #[test]
    fn support_round_trip() {
        let (_, f) = generate_structural(3, 1.0, 2, 0).unwrap();
        let text = format_support(&f);
        assert_eq!(parse_support(&text, "s").unwrap(), f);
        let g = parse_support("# two latents\n1, 1\n\n1 0 # trailing\n0 1\n", "s").unwrap();
        assert_eq!(g.measurements(), 3);
    }

    #[test]
    fn support_errors_name_lines() {
        let err = parse_support("1 0\n1 2\n", "f").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("`2`"), "{err}");
        let err = parse_support("1 0\n1\n", "f").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn family_round_trip_and_errors() {
        let (_, fam) = generate_distributional(2, 5, 4).unwrap();
        assert_eq!(parse_family(&format_family(&fam), "f").unwrap(), fam);
        let err = parse_family("0 1\n0 -1\n", "f").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_family("0 1 2\n", "f").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
