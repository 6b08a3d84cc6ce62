//! Versioned JSON records for trained models.
//!
//! Parameters are written with round-trip float formatting, so loading a
//! saved model gives back bit-identical parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "latrec-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelRecord<T> {
    pub format: String,
    pub version: u32,
    /// `geen` or `rae`.
    pub kind: String,
    pub model: T,
}

pub fn to_json<T: Serialize>(kind: &str, model: &T) -> Result<String> {
    let rec = ModelRecord {
        format: FORMAT.to_string(),
        version: VERSION,
        kind: kind.to_string(),
        model,
    };
    Ok(serde_json::to_string_pretty(&rec)?)
}

pub fn from_json<T: DeserializeOwned>(kind: &str, text: &str, context: &str) -> Result<T> {
    let rec: ModelRecord<T> = serde_json::from_str(text)?;
    check(&rec, kind, context)?;
    Ok(rec.model)
}

fn check<T>(rec: &ModelRecord<T>, kind: &str, context: &str) -> Result<()> {
    if rec.format != FORMAT {
        return Err(Error::format(context, 1, format!("not a model file (format `{}`)", rec.format)));
    }
    if rec.version != VERSION {
        return Err(Error::format(context, 1, format!("unsupported model version {}", rec.version)));
    }
    if rec.kind != kind {
        return Err(Error::format(context, 1, format!("expected a `{kind}` model, found `{}`", rec.kind)));
    }
    Ok(())
}

pub fn save<T: Serialize>(path: &Path, kind: &str, model: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(to_json(kind, model)?.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let rec: ModelRecord<T> = serde_json::from_reader(BufReader::new(f))?;
    check(&rec, kind, &path.display().to_string())?;
    Ok(rec.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use latrec_core::geen::{train_geen, GeenConfig, TrainedGeen};
    use latrec_core::rae::{train_rae, RaeConfig, TrainedRae};
    use latrec_core::rng::{standard_normal, Stream};
    use latrec_core::Matrix;

    fn data(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Stream::new(seed, 0);
        let v = (0..rows * cols).map(|_| standard_normal(&mut rng)).collect();
        Matrix::from_vec(rows, cols, v).unwrap()
    }

    #[test]
    fn geen_round_trip_is_bit_exact() {
        let mut c = GeenConfig::new(3);
        c.hidden = vec![4, 4];
        c.batch_size = 10;
        c.n_train = 5;
        c.restarts = 1;
        let model = train_geen(&data(40, 3, 1), &data(20, 3, 2), &c).unwrap();
        let text = to_json("geen", &model).unwrap();
        let back: TrainedGeen = from_json("geen", &text, "mem").unwrap();
        assert_eq!(back, model);
        let bits = |m: &TrainedGeen| m.params.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&model));
        assert!(from_json::<TrainedGeen>("rae", &text, "mem").is_err());
    }

    #[test]
    fn rae_round_trip_through_a_file() {
        let mut c = RaeConfig::new(1, 3);
        c.encoder_hidden = vec![4];
        c.decoder_hidden = vec![3];
        c.batch_size = 10;
        c.epochs = 1;
        let model = train_rae(&data(30, 3, 3), &data(20, 3, 4), &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rae.json");
        save(&path, "rae", &model).unwrap();
        let back: TrainedRae = load(&path, "rae").unwrap();
        assert_eq!(back, model);
    }
}
