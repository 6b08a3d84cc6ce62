//! Entity-by-period panels: time-effect removal and restoration, and
//! entity-level train/validation splits.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PanelRow {
    pub entity: String,
    pub time: i64,
    /// `None` marks a missing cell.
    pub values: Vec<Option<f64>>,
}

/// Rows are kept sorted by `(entity, time)`; keys are unique.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PanelDataset {
    pub entity_column: String,
    pub time_column: String,
    pub columns: Vec<String>,
    rows: Vec<PanelRow>,
}

impl PanelDataset {
    pub fn new(
        entity_column: impl Into<String>,
        time_column: impl Into<String>,
        columns: Vec<String>,
        mut rows: Vec<PanelRow>,
    ) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| r.values.len() != columns.len()) {
            return Err(Error::Panel(format!(
                "row {i} has {} values for {} columns",
                rows[i].values.len(),
                columns.len()
            )));
        }
        if let Some(i) = rows
            .iter()
            .position(|r| r.values.iter().flatten().any(|v| !v.is_finite()))
        {
            return Err(Error::Panel(format!("row {i} has a non-finite value")));
        }
        rows.sort_by(|a, b| (&a.entity, a.time).cmp(&(&b.entity, b.time)));
        let dups: Vec<String> = rows
            .windows(2)
            .filter(|w| w[0].entity == w[1].entity && w[0].time == w[1].time)
            .map(|w| format!("({}, {})", w[0].entity, w[0].time))
            .collect();
        if !dups.is_empty() {
            return Err(Error::Panel(format!("duplicate (entity, time) keys: {}", dups.join(", "))));
        }
        Ok(Self {
            entity_column: entity_column.into(),
            time_column: time_column.into(),
            columns,
            rows,
        })
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Panel(format!("unknown column `{name}`; available: {}", self.columns.join(", "))))
    }

    pub fn entities(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.rows.iter().map(|r| &r.entity).collect();
        set.into_iter().cloned().collect()
    }

    pub fn times(&self) -> Vec<i64> {
        let set: BTreeSet<i64> = self.rows.iter().map(|r| r.time).collect();
        set.into_iter().collect()
    }

    /// Column values with `None` for missing cells, in row order.
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r.values[j]).collect())
    }

    /// Adds (or replaces) a column.
    pub fn with_column(mut self, name: &str, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != self.rows.len() {
            return Err(Error::Panel(format!(
                "new column has {} values for {} rows",
                values.len(),
                self.rows.len()
            )));
        }
        match self.columns.iter().position(|c| c == name) {
            Some(j) => {
                for (r, v) in self.rows.iter_mut().zip(values) {
                    r.values[j] = v;
                }
            }
            None => {
                self.columns.push(String::from(name));
                for (r, v) in self.rows.iter_mut().zip(values) {
                    r.values.push(v);
                }
            }
        }
        Ok(self)
    }

    fn filter_entities(&self, keep: &BTreeSet<String>) -> PanelDataset {
        PanelDataset {
            entity_column: self.entity_column.clone(),
            time_column: self.time_column.clone(),
            columns: self.columns.clone(),
            rows: self.rows.iter().filter(|r| keep.contains(&r.entity)).cloned().collect(),
        }
    }
}

/// Cross-entity mean of each detrended column, per period.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeEffects {
    pub columns: Vec<String>,
    /// `effects[time][c]` for column `columns[c]`.
    pub effects: BTreeMap<i64, Vec<f64>>,
}

impl TimeEffects {
    pub fn effect(&self, column: &str, time: i64) -> Result<f64> {
        let c = self
            .columns
            .iter()
            .position(|n| n == column)
            .ok_or_else(|| Error::Panel(format!("no time effects stored for column `{column}`")))?;
        self.effects
            .get(&time)
            .map(|v| v[c])
            .ok_or_else(|| Error::Panel(format!("no time effect stored for period {time}")))
    }
}

/// Subtracts the per-period cross-entity mean (missing cells excluded).
pub fn detrend_time_effects(panel: &PanelDataset, columns: &[&str]) -> Result<(PanelDataset, TimeEffects)> {
    let idx: Vec<usize> = columns.iter().map(|c| panel.column_index(c)).collect::<Result<_>>()?;
    let mut sums: BTreeMap<i64, Vec<(f64, usize)>> = BTreeMap::new();
    for r in panel.rows() {
        let acc = sums.entry(r.time).or_insert_with(|| alloc::vec![(0.0, 0); idx.len()]);
        for (slot, &j) in acc.iter_mut().zip(&idx) {
            if let Some(v) = r.values[j] {
                slot.0 += v;
                slot.1 += 1;
            }
        }
    }
    let mut effects = BTreeMap::new();
    for (&t, acc) in &sums {
        let mut means = Vec::with_capacity(acc.len());
        for (c, &(s, n)) in acc.iter().enumerate() {
            if n == 0 {
                return Err(Error::Panel(format!(
                    "period {t} has no observed values in column `{}`",
                    columns[c]
                )));
            }
            means.push(s / n as f64);
        }
        effects.insert(t, means);
    }
    let mut out = panel.clone();
    for r in &mut out.rows {
        let means = &effects[&r.time];
        for (c, &j) in idx.iter().enumerate() {
            if let Some(v) = r.values[j].as_mut() {
                *v -= means[c];
            }
        }
    }
    let effects = TimeEffects {
        columns: columns.iter().map(|c| String::from(*c)).collect(),
        effects,
    };
    Ok((out, effects))
}

/// Adds the stored effects of `effects_column` back onto a series indexed by period.
pub fn retrend(times: &[i64], series: &[f64], effects: &TimeEffects, effects_column: &str) -> Result<Vec<f64>> {
    if times.len() != series.len() {
        return Err(Error::shape("times and series differ in length"));
    }
    times
        .iter()
        .zip(series)
        .map(|(&t, &v)| Ok(v + effects.effect(effects_column, t)?))
        .collect()
}

/// Inverse of [`detrend_time_effects`] on every column the effects cover.
pub fn retrend_panel(panel: &PanelDataset, effects: &TimeEffects) -> Result<PanelDataset> {
    let mut out = panel.clone();
    for (c, name) in effects.columns.iter().enumerate() {
        let j = panel.column_index(name)?;
        for r in &mut out.rows {
            let e = effects
                .effects
                .get(&r.time)
                .ok_or_else(|| Error::Panel(format!("no time effect stored for period {}", r.time)))?;
            if let Some(v) = r.values[j].as_mut() {
                *v += e[c];
            }
        }
    }
    Ok(out)
}

/// Seeded entity-level split; `round(fraction * entities)` entities (at
/// least one on each side) go to the training part.
pub fn split_train_validation(panel: &PanelDataset, fraction: f64, seed: u64) -> Result<(PanelDataset, PanelDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut entities = panel.entities();
    let e = entities.len();
    if e < 2 {
        return Err(Error::Panel(format!("need at least 2 entities to split, got {e}")));
    }
    let mut stream = Stream::new(seed, 0);
    for i in (1..e).rev() {
        let j = rng::index_below(&mut stream, i + 1);
        entities.swap(i, j);
    }
    let n_train = libm::round(fraction * e as f64).clamp(1.0, (e - 1) as f64) as usize;
    let train: BTreeSet<String> = entities[..n_train].iter().cloned().collect();
    let valid: BTreeSet<String> = entities[n_train..].iter().cloned().collect();
    Ok((panel.filter_entities(&train), panel.filter_entities(&valid)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, uniform01};
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn row(e: &str, t: i64, v: &[f64]) -> PanelRow {
        PanelRow {
            entity: e.to_string(),
            time: t,
            values: v.iter().map(|&x| Some(x)).collect(),
        }
    }

    fn toy() -> PanelDataset {
        let rows = vec![
            row("b", 2, &[3.0]),
            row("a", 1, &[1.0]),
            row("a", 2, &[1.0]),
            row("b", 1, &[3.0]),
            row("a", 3, &[5.0]),
            row("b", 3, &[7.0]),
        ];
        PanelDataset::new("country", "quarter", vec!["gdp".to_string()], rows).unwrap()
    }

    #[test]
    fn rows_are_sorted_and_duplicates_rejected() {
        let p = toy();
        let keys: Vec<(String, i64)> = p.rows().iter().map(|r| (r.entity.clone(), r.time)).collect();
        assert_eq!(keys[0], ("a".to_string(), 1));
        assert_eq!(keys[5], ("b".to_string(), 3));
        let dup = vec![row("a", 1, &[1.0]), row("a", 1, &[2.0])];
        match PanelDataset::new("e", "t", vec!["x".to_string()], dup) {
            Err(Error::Panel(msg)) => assert!(msg.contains("(a, 1)")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detrend_arithmetic() {
        let (d, eff) = detrend_time_effects(&toy(), &["gdp"]).unwrap();
        assert_eq!(eff.effect("gdp", 1).unwrap(), 2.0);
        assert_eq!(eff.effect("gdp", 3).unwrap(), 6.0);
        let v: Vec<f64> = d.column("gdp").unwrap().into_iter().flatten().collect();
        assert_eq!(v, vec![-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn single_entity_detrends_to_zero() {
        let rows = vec![row("x", 1, &[0.3]), row("x", 2, &[-1.7]), row("x", 5, &[4.0])];
        let p = PanelDataset::new("e", "t", vec!["y".to_string()], rows).unwrap();
        let (d, eff) = detrend_time_effects(&p, &["y"]).unwrap();
        assert!(d.column("y").unwrap().iter().all(|v| *v == Some(0.0)));
        assert_eq!(eff.effect("y", 2).unwrap(), -1.7);
    }

    #[test]
    fn constant_within_period_becomes_zero_and_missing_is_kept() {
        let mut rows = vec![row("a", 1, &[2.0]), row("b", 1, &[2.0]), row("a", 2, &[9.0])];
        rows.push(PanelRow {
            entity: "b".to_string(),
            time: 2,
            values: vec![None],
        });
        let p = PanelDataset::new("e", "t", vec!["y".to_string()], rows).unwrap();
        let (d, _) = detrend_time_effects(&p, &["y"]).unwrap();
        assert_eq!(d.column("y").unwrap(), vec![Some(0.0), Some(0.0), Some(0.0), None]);

        let empty = vec![PanelRow {
            entity: "a".to_string(),
            time: 1,
            values: vec![None],
        }];
        let p = PanelDataset::new("e", "t", vec!["y".to_string()], empty).unwrap();
        assert!(detrend_time_effects(&p, &["y"]).is_err());
    }

    #[test]
    fn retrend_series() {
        let (_, eff) = detrend_time_effects(&toy(), &["gdp"]).unwrap();
        assert_eq!(retrend(&[1, 3], &[0.0, 0.5], &eff, "gdp").unwrap(), vec![2.0, 6.5]);
        assert!(retrend(&[4], &[0.0], &eff, "gdp").is_err());
        let zero = TimeEffects {
            columns: vec!["gdp".to_string()],
            effects: [(1, vec![0.0])].into_iter().collect(),
        };
        assert_eq!(retrend(&[1], &[1.25], &zero, "gdp").unwrap(), vec![1.25]);
    }

    #[test]
    fn split_is_seeded_disjoint_and_exhaustive() {
        let rows: Vec<PanelRow> = ["p", "q", "r", "s"]
            .iter()
            .flat_map(|e| (0..3).map(move |t| row(e, t, &[t as f64])))
            .collect();
        let p = PanelDataset::new("e", "t", vec!["y".to_string()], rows).unwrap();
        let (tr, va) = split_train_validation(&p, 0.5, 3).unwrap();
        assert_eq!((tr.entities().len(), va.entities().len()), (2, 2));
        let (tr2, va2) = split_train_validation(&p, 0.5, 3).unwrap();
        assert_eq!((tr.clone(), va.clone()), (tr2, va2));
        let mut all: Vec<String> = tr.entities();
        all.extend(va.entities());
        all.sort();
        assert_eq!(all, p.entities());
        assert_eq!(tr.len() + va.len(), p.len());
        let single = PanelDataset::new("e", "t", vec!["y".to_string()], vec![row("a", 0, &[1.0])]).unwrap();
        assert!(split_train_validation(&single, 0.5, 0).is_err());
    }

    proptest! {
        #[test]
        fn detrend_properties(seed in any::<u64>(), entities in 1usize..6, periods in 1usize..8) {
            let mut s = Stream::new(seed, 0);
            let mut rows = Vec::new();
            for e in 0..entities {
                for t in 0..periods {
                    let v = if uniform01(&mut s) < 0.1 && e > 0 { None } else { Some(normal(&mut s, 1.0, 3.0)) };
                    let w = (normal(&mut s, 0.0, 8.0) * 64.0).round() / 64.0;
                    rows.push(PanelRow { entity: format!("e{e}"), time: t as i64, values: vec![v, Some(w)] });
                }
            }
            let p = PanelDataset::new("e", "t", vec!["x".into(), "w".into()], rows).unwrap();
            let (d, eff) = detrend_time_effects(&p, &["x", "w"]).unwrap();
            for t in p.times() {
                for c in 0..2 {
                    let vals: Vec<f64> = d.rows().iter().filter(|r| r.time == t).filter_map(|r| r.values[c]).collect();
                    let m = vals.iter().sum::<f64>() / vals.len() as f64;
                    prop_assert!(m.abs() < 1e-12);
                }
            }
            let back = retrend_panel(&d, &eff).unwrap();
            for (a, b) in back.rows().iter().zip(p.rows()) {
                // Dyadic values over a power-of-two entity count: exact.
                if entities.is_power_of_two() {
                    prop_assert_eq!(a.values[1], b.values[1]);
                }
                match (a.values[0], b.values[0]) {
                    (Some(x), Some(y)) => {
                        let scale = y.abs().max(eff.effect("x", a.time).unwrap().abs());
                        prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON * scale)
                    },
                    (None, None) => {}
                    _ => prop_assert!(false, "missingness changed"),
                }
            }
        }
    }
}
