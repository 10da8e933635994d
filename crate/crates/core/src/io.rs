//! CSV and JSON formats.
//!
//! Curve files have a header `id,t_1,...,t_D` and one unit per row; every
//! column after the id is one grid point. The grid is taken as `D` equally
//! spaced points on `[0, 1]` with equal quadrature weights.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use crate::curves::{Curve, CurvePopulation, TimeGrid};
use crate::designs::{DesignSpec, SampleDraw, StrataSpec};
use crate::error::{Error, Result};
use crate::variance::VarianceFunction;

/// Twelve significant digits, shortest decimal form; exponent notation
/// outside `[1e-5, 1e16)`.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if (1e-5..1e16).contains(&a) {
        rounded.to_string()
    } else {
        format!("{rounded:e}")
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::Parse {
            line: pos.line() as usize,
            message: e.to_string(),
        },
        None => Error::Csv(e),
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r)
}

pub fn parse_population<R: Read>(r: R) -> Result<CurvePopulation> {
    let mut rdr = reader(r);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let d = header.len().saturating_sub(1);
    if d == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "expected a header `id,t_1,...,t_D` with at least one time column".into(),
        });
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut fields = rec.iter();
        let id = fields.next().unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty unit id".into(),
            });
        }
        let mut row = Vec::with_capacity(d);
        for (j, f) in fields.enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {}: `{f}` is not a number", j + 2),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {}: non-finite value", j + 2),
                });
            }
            row.push(v);
        }
        ids.push(id);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no curves in file".into(),
        });
    }
    let grid = Arc::new(TimeGrid::equally_spaced(d, 1.0)?);
    CurvePopulation::with_ids(grid, rows, ids)
}

pub fn read_population(path: impl AsRef<Path>) -> Result<CurvePopulation> {
    parse_population(std::fs::File::open(path)?)
}

pub fn population_csv(pop: &CurvePopulation) -> String {
    let mut out = String::from("id");
    for j in 1..=pop.grid().len() {
        let _ = write!(out, ",t_{j}");
    }
    out.push('\n');
    for (id, c) in pop.ids().iter().zip(pop.curves()) {
        out.push_str(id);
        for v in c.values() {
            out.push(',');
            out.push_str(&fmt_num(*v));
        }
        out.push('\n');
    }
    out
}

/// `t,value` rows.
pub fn curve_csv(c: &Curve) -> String {
    values_csv(c.grid().points(), c.values())
}

pub fn variance_csv(v: &VarianceFunction) -> String {
    values_csv(v.grid.points(), &v.values)
}

fn values_csv(t: &[f64], values: &[f64]) -> String {
    let mut out = String::from("t,value\n");
    for (t, v) in t.iter().zip(values) {
        let _ = writeln!(out, "{},{}", fmt_num(*t), fmt_num(*v));
    }
    out
}

fn id_index(pop: &CurvePopulation) -> HashMap<&str, usize> {
    pop.ids().iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect()
}

/// `unit_id,stratum` rows covering every unit. Stratum labels may be any
/// integers; they are renumbered in increasing order.
pub fn parse_strata<R: Read>(r: R, pop: &CurvePopulation) -> Result<StrataSpec> {
    let index = id_index(pop);
    let mut rdr = reader(r);
    let mut raw: Vec<Option<i64>> = vec![None; pop.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |message: String| Error::Parse { line, message };
        if rec.len() != 2 {
            return Err(parse_err("expected `unit_id,stratum`".into()));
        }
        let k = *index
            .get(&rec[0])
            .ok_or_else(|| parse_err(format!("unknown unit id `{}`", &rec[0])))?;
        let label: i64 = rec[1]
            .parse()
            .map_err(|_| parse_err(format!("`{}` is not an integer stratum", &rec[1])))?;
        if raw[k].replace(label).is_some() {
            return Err(parse_err(format!("unit `{}` listed twice", &rec[0])));
        }
    }
    if let Some(k) = raw.iter().position(Option::is_none) {
        return Err(Error::invalid(format!("unit `{}` has no stratum", pop.ids()[k])));
    }
    let mut codes: BTreeMap<i64, usize> = raw.iter().map(|l| (l.unwrap(), 0)).collect();
    for (i, v) in codes.values_mut().enumerate() {
        *v = i;
    }
    StrataSpec::new(raw.iter().map(|l| codes[&l.unwrap()]).collect())
}

pub fn read_strata(path: impl AsRef<Path>, pop: &CurvePopulation) -> Result<StrataSpec> {
    parse_strata(std::fs::File::open(path)?, pop)
}

/// Strata with 1-based labels.
pub fn strata_csv(strata: &StrataSpec, pop: &CurvePopulation) -> String {
    let mut out = String::from("unit_id,stratum\n");
    for (id, h) in pop.ids().iter().zip(strata.labels()) {
        let _ = writeln!(out, "{id},{}", h + 1);
    }
    out
}

/// `unit_id,weight` rows covering every unit.
pub fn parse_weights<R: Read>(r: R, pop: &CurvePopulation) -> Result<Vec<f64>> {
    let index = id_index(pop);
    let mut rdr = reader(r);
    let mut w: Vec<Option<f64>> = vec![None; pop.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |message: String| Error::Parse { line, message };
        if rec.len() != 2 {
            return Err(parse_err("expected `unit_id,weight`".into()));
        }
        let k = *index
            .get(&rec[0])
            .ok_or_else(|| parse_err(format!("unknown unit id `{}`", &rec[0])))?;
        let v: f64 = rec[1]
            .parse()
            .map_err(|_| parse_err(format!("`{}` is not a number", &rec[1])))?;
        w[k] = Some(v);
    }
    w.into_iter()
        .enumerate()
        .map(|(k, v)| v.ok_or_else(|| Error::invalid(format!("unit `{}` has no weight", pop.ids()[k]))))
        .collect()
}

/// `unit_id,pi,weight` per distinct sampled unit, plus `draws` for PPS.
pub fn sample_csv(draw: &SampleDraw, weights: &[f64], pop: &CurvePopulation) -> String {
    let mut out = String::from("unit_id,pi,weight");
    if draw.multiplicities.is_some() {
        out.push_str(",draws");
    }
    out.push('\n');
    for (i, (&k, &p)) in draw.units.iter().zip(&draw.pi).enumerate() {
        let _ = write!(out, "{},{},{}", pop.ids()[k], fmt_num(p), fmt_num(weights[i]));
        if let Some(m) = &draw.multiplicities {
            let _ = write!(out, ",{}", m[i]);
        }
        out.push('\n');
    }
    out
}

pub fn read_design_spec(path: impl AsRef<Path>) -> Result<DesignSpec> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.1), "0.1");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(-2.5e-20), "-2.5e-20");
        assert_eq!(fmt_num(123456789012345.0), "123456789012000");
        assert_eq!(fmt_num(-0.0), "0");
    }

    #[test]
    fn population_round_trip() {
        let text = "id,t_1,t_2,t_3\na,1,2,3\nb,0.5,-1,2e3\n";
        let pop = parse_population(text.as_bytes()).unwrap();
        assert_eq!(pop.len(), 2);
        assert_eq!(pop.ids(), &["a", "b"]);
        assert_eq!(pop.curve(1).values(), &[0.5, -1.0, 2000.0]);
        let again = parse_population(population_csv(&pop).as_bytes()).unwrap();
        assert_eq!(again.curves(), pop.curves());
    }

    #[test]
    fn parse_errors_carry_lines() {
        let text = "id,t_1,t_2\na,1,2\nb,1,x\n";
        match parse_population(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let ragged = "id,t_1,t_2\na,1,2\nb,1\n";
        match parse_population(ragged.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let dup = "id,t_1\na,1\na,2\n";
        assert!(parse_population(dup.as_bytes()).is_err());
    }

    #[test]
    fn strata_files() {
        let pop = parse_population("id,t_1\nu1,1\nu2,2\nu3,3\n".as_bytes()).unwrap();
        let s = parse_strata("unit_id,stratum\nu3,7\nu1,2\nu2,7\n".as_bytes(), &pop).unwrap();
        assert_eq!(s.labels(), &[0, 1, 1]);
        assert_eq!(strata_csv(&s, &pop), "unit_id,stratum\nu1,1\nu2,2\nu3,2\n");
        assert!(parse_strata("unit_id,stratum\nu1,1\n".as_bytes(), &pop).is_err());
        match parse_strata("unit_id,stratum\nu1,1\nzz,1\n".as_bytes(), &pop) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
