//! File formats.
//!
//! Datasets are CSV with header `z1..zK,x1..xP,y`, one row per individual and
//! an empty cell for a missing value. Numbers are written with 17 significant
//! digits so a save/load cycle is exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::classic::ClassicEstimate;
use crate::data::MrDataset;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::sampler::{PosteriorDraws, PosteriorSummary};

/// Formats `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

fn header_dims(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let perr = |m: String| Error::Parse { line: 1, message: m };
    let mut k = 0;
    let mut p = 0;
    let mut seen_y = false;
    for (c, name) in header.iter().enumerate() {
        let name = name.trim();
        let expect_z = format!("z{}", k + 1);
        let expect_x = format!("x{}", p + 1);
        if p == 0 && !seen_y && name == expect_z {
            k += 1;
        } else if k > 0 && !seen_y && name == expect_x {
            p += 1;
        } else if k > 0 && p > 0 && !seen_y && name == "y" {
            seen_y = true;
        } else {
            return Err(perr(format!("unexpected header column {} '{name}'", c + 1)));
        }
    }
    if !seen_y {
        return Err(perr("header must be z1..zK,x1..xP,y".into()));
    }
    Ok((k, p))
}

fn parse_cell(s: &str, line: usize, col: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("column {col}: cannot parse '{s}' as a number"),
    })
}

/// Reads a dataset, classifying each row by which cells are present.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<MrDataset> {
    let file = File::open(path)?;
    read_dataset(file)
}

pub fn read_dataset(reader: impl std::io::Read) -> Result<MrDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let (k, p) = header_dims(&header)?;
    let mut data = MrDataset::empty(k, p);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != k + p + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", k + p + 1, rec.len()),
            });
        }
        let mut z = Vec::with_capacity(k);
        for i in 0..k {
            let col = format!("z{}", i + 1);
            z.push(parse_cell(&rec[i], line, &col)?.ok_or_else(|| Error::Parse {
                line,
                message: format!("instrument {col} is empty"),
            })?);
        }
        let mut x = Vec::with_capacity(p);
        for j in 0..p {
            x.push(parse_cell(&rec[k + j], line, &format!("x{}", j + 1))?);
        }
        let y = parse_cell(&rec[k + p], line, "y")?;
        let present = x.iter().filter(|v| v.is_some()).count();
        let x = match present {
            0 => None,
            n if n == p => Some(x.into_iter().map(Option::unwrap).collect::<Vec<_>>()),
            _ => {
                return Err(Error::Pattern {
                    line,
                    message: "exposures must be all present or all empty".into(),
                })
            }
        };
        if x.is_none() && y.is_none() {
            return Err(Error::Pattern {
                line,
                message: "row has neither exposures nor outcome".into(),
            });
        }
        data.push_row(&z, x.as_deref(), y)?;
    }
    Ok(data)
}

/// Loads a dataset and checks its shape against `spec`.
pub fn load_dataset_for(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<MrDataset> {
    let d = load_dataset(path)?;
    if d.n_instruments() != spec.n_instruments || d.n_exposures() != spec.n_exposures {
        return Err(Error::Dimension(format!(
            "file has {} instruments and {} exposures, model expects {} and {}",
            d.n_instruments(),
            d.n_exposures(),
            spec.n_instruments,
            spec.n_exposures
        )));
    }
    Ok(d)
}

pub fn write_dataset(data: &MrDataset, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let (k, p) = (data.n_instruments(), data.n_exposures());
    let mut header: Vec<String> = (1..=k).map(|i| format!("z{i}")).collect();
    header.extend((1..=p).map(|j| format!("x{j}")));
    header.push("y".into());
    writeln!(w, "{}", header.join(","))?;
    for r in 0..data.n_rows() {
        let mut cells: Vec<String> = data.z_row(r).iter().map(|v| fmt_f64(*v)).collect();
        cells.extend((0..p).map(|j| data.x_cell(r, j).map(fmt_f64).unwrap_or_default()));
        cells.push(data.y(r).map(fmt_f64).unwrap_or_default());
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(data: &MrDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(data, File::create(path)?)
}

/// `iteration` followed by one column per named parameter.
pub fn write_draws(draws: &PosteriorDraws, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "iteration,{}", draws.names.join(","))?;
    for i in 0..draws.n_draws() {
        let row: Vec<String> = draws.row(i).iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{},{}", i + 1, row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws(reader: impl std::io::Read) -> Result<PosteriorDraws> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("iteration") {
        return Err(Error::Parse {
            line: 1,
            message: "draws file must start with an iteration column".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut draws = PosteriorDraws::new(names.clone());
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row = rec
            .iter()
            .skip(1)
            .zip(&names)
            .map(|(s, n)| parse_cell(s, line, n)?.ok_or_else(|| Error::Parse { line, message: format!("{n} is empty") }))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != names.len() {
            return Err(Error::Parse {
                line,
                message: "short row".into(),
            });
        }
        draws.push(&row);
    }
    Ok(draws)
}

/// `param,mean,sd,ci_low,ci_high`.
pub fn write_summary(summary: &PosteriorSummary, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "param,mean,sd,ci_low,ci_high")?;
    for p in &summary.params {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.name,
            fmt_f64(p.mean),
            fmt_f64(p.sd),
            fmt_f64(p.ci_low),
            fmt_f64(p.ci_high)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// `param,method,estimate,se,ci_low,ci_high`, one row per exposure.
pub fn write_classic(est: &ClassicEstimate, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "param,method,estimate,se,ci_low,ci_high")?;
    for (j, ((b, s), (lo, hi))) in est.beta_hat.iter().zip(&est.se).zip(&est.ci95).enumerate() {
        writeln!(
            w,
            "beta{},{},{},{},{},{}",
            j + 1,
            est.method.as_str(),
            fmt_f64(*b),
            fmt_f64(*s),
            fmt_f64(*lo),
            fmt_f64(*hi)
        )?;
    }
    w.flush()?;
    Ok(())
}
