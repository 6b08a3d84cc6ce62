//! Synthetic entity-by-period panels with a known latent series.
//!
//! Rows come from the univariate four-measurement design. A common shock per
//! period is added to both the latent and the first ("official")
//! measurement, so removing time effects from that column and adding them
//! back later is needed to recover the truth.

use latrec_core::datagen::{generate_univariate, Domain, Splits, Variant};
use latrec_core::panel::{PanelDataset, PanelRow};
use latrec_core::rng::{normal, Stream};

use crate::error::{Error, Result};

/// Stream for the per-period shocks.
const SHOCK_STREAM: u64 = 60_000;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PanelSpec {
    pub entities: usize,
    pub periods: usize,
    pub variant: Variant,
    /// Standard deviation of the per-period shock.
    pub shock_std: f64,
    pub seed: u64,
}

impl Default for PanelSpec {
    fn default() -> Self {
        Self {
            entities: 40,
            periods: 50,
            variant: Variant::Baseline,
            shock_std: 1.0,
            seed: 0,
        }
    }
}

pub const ENTITY_COLUMN: &str = "entity";
pub const TIME_COLUMN: &str = "period";
pub const TRUTH_COLUMN: &str = "Z";

/// Columns `X1..X4` plus the true latent in column `Z`.
pub fn synthetic_panel(spec: &PanelSpec) -> Result<PanelDataset> {
    let rows = spec.entities * spec.periods;
    if spec.entities == 0 || spec.periods == 0 || rows < 3 {
        return Err(Error::usage("a synthetic panel needs at least three rows"));
    }
    if !(spec.shock_std >= 0.0) {
        return Err(Error::usage("shock standard deviation must be >= 0"));
    }
    let splits = Splits {
        train: rows - 2,
        validation: 1,
        test: 1,
    };
    let ds = generate_univariate(spec.variant, Domain::Continuous, splits, spec.seed)?;
    let mut shocks = Stream::new(spec.seed, SHOCK_STREAM);
    let effects: Vec<f64> = (0..spec.periods).map(|_| normal(&mut shocks, 0.0, spec.shock_std)).collect();
    let z = ds.z.as_ref().expect("generator records the latent");
    let width = (spec.entities.max(2) - 1).to_string().len();
    let mut out = Vec::with_capacity(rows);
    for e in 0..spec.entities {
        for t in 0..spec.periods {
            let r = e * spec.periods + t;
            let x = ds.x.row(r);
            let shock = effects[t];
            out.push(PanelRow {
                entity: format!("E{e:0width$}"),
                time: t as i64 + 1,
                values: vec![
                    Some(x[0] + shock),
                    Some(x[1]),
                    Some(x[2]),
                    Some(x[3]),
                    Some(z[(r, 0)] + shock),
                ],
            });
        }
    }
    let columns = ["X1", "X2", "X3", "X4", TRUTH_COLUMN].map(String::from).to_vec();
    Ok(PanelDataset::new(ENTITY_COLUMN, TIME_COLUMN, columns, out)?)
}
