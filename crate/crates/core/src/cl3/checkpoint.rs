//! Plain-text model checkpoint.
//!
//! Line oriented: a `key dims...` line followed by the values, one matrix row
//! per line, every float in scientific notation with 17 significant digits so
//! that loading reproduces each value bit for bit.
//!
//! ```text
//! soilx-model 1
//! seed 42
//! std_mean 8
//! ...
//! w1 512 8
//! <512 rows>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::encoder::{EncoderParams, Standardization, Weights, EMBED_DIM, INPUT_DIM, N_COMPONENTS};
use super::{Calibration, DirectionSet, ModelBundle};
use crate::dataset::NormSpec;
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA: u32 = 1;
const MAGIC: &str = "soilx-model";

fn write_row<'a>(out: &mut String, values: impl IntoIterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:.16e}").unwrap();
    }
    out.push('\n');
}

fn write_vector(out: &mut String, key: &str, values: &[f64]) {
    writeln!(out, "{key} {}", values.len()).unwrap();
    write_row(out, values);
}

fn write_matrix(out: &mut String, key: &str, m: &Array2<f64>) {
    writeln!(out, "{key} {} {}", m.nrows(), m.ncols()).unwrap();
    for row in m.rows() {
        write_row(out, row.iter());
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{MAGIC} {CHECKPOINT_SCHEMA}").unwrap();
    writeln!(out, "seed {}", bundle.seed).unwrap();
    let p = &bundle.params;
    write_vector(&mut out, "std_mean", &p.standardization.mean);
    write_vector(&mut out, "std_dev", &p.standardization.std);
    write_matrix(&mut out, "w1", &p.weights.w1);
    write_vector(&mut out, "b1", p.weights.b1.as_slice().unwrap());
    write_matrix(&mut out, "w2", &p.weights.w2);
    write_vector(&mut out, "b2", p.weights.b2.as_slice().unwrap());
    write_vector(&mut out, "z0", bundle.directions.z0.as_slice().unwrap());
    write_matrix(&mut out, "z_avg", &bundle.directions.z_avg);
    let counts: Vec<String> = bundle.directions.group_counts.iter().map(|c| c.to_string()).collect();
    writeln!(out, "group_counts {}", counts.join(" ")).unwrap();
    let norm: Vec<f64> = bundle.norm.ranges.iter().flat_map(|(lo, hi)| [*lo, *hi]).collect();
    write_vector(&mut out, "norm", &norm);
    write_vector(&mut out, "ref_norm_labels", &bundle.ref_norm_labels);
    write_vector(&mut out, "cal_slope", &bundle.calibration.slope);
    write_vector(&mut out, "cal_intercept", &bundle.calibration.intercept);
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: u64,
}

impl<'a> Reader<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        let (i, line) = self
            .lines
            .next()
            .ok_or_else(|| Error::Format("checkpoint ends early".into()))?;
        self.line_no = i as u64 + 1;
        Ok(line)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line_no,
            msg: msg.into(),
        }
    }

    /// Reads a `key d1 [d2]` line and returns the dimensions.
    fn header(&mut self, key: &str) -> Result<Vec<usize>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected section {key:?}, got {line:?}")));
        }
        parts
            .map(|p| p.parse().map_err(|_| self.err(format!("bad dimension {p:?}"))))
            .collect()
    }

    fn row(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| self.err(format!("bad number {t:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", values.len())));
        }
        Ok(values)
    }

    fn vector(&mut self, key: &str, len: usize) -> Result<Vec<f64>> {
        let dims = self.header(key)?;
        if dims != [len] {
            return Err(self.err(format!("{key} must have length {len}, header says {dims:?}")));
        }
        self.row(len)
    }

    fn fixed<const N: usize>(&mut self, key: &str) -> Result<[f64; N]> {
        Ok(self.vector(key, N)?.try_into().unwrap())
    }

    fn matrix(&mut self, key: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let dims = self.header(key)?;
        if dims != [rows, cols] {
            return Err(self.err(format!("{key} must be {rows}x{cols}, header says {dims:?}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row(cols)?);
        }
        Ok(Array2::from_shape_vec((rows, cols), data).unwrap())
    }
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let text = fs::read_to_string(path)?;
    let mut r = Reader {
        lines: text.lines().enumerate(),
        line_no: 0,
    };
    let first = r.next_line()?;
    match first.split_whitespace().collect::<Vec<_>>().as_slice() {
        [MAGIC, v] if *v == CHECKPOINT_SCHEMA.to_string() => {}
        _ => return Err(Error::Format(format!("not a schema-{CHECKPOINT_SCHEMA} checkpoint: {first:?}"))),
    }
    let seed_line = r.next_line()?;
    let seed = seed_line
        .strip_prefix("seed ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| r.err("expected `seed <u64>`"))?;
    let standardization = Standardization {
        mean: r.fixed::<INPUT_DIM>("std_mean")?,
        std: r.fixed::<INPUT_DIM>("std_dev")?,
    };
    let w1 = r.matrix("w1", EMBED_DIM, INPUT_DIM)?;
    let b1 = Array1::from(r.vector("b1", EMBED_DIM)?);
    let w2 = r.matrix("w2", EMBED_DIM, EMBED_DIM)?;
    let b2 = Array1::from(r.vector("b2", EMBED_DIM)?);
    let z0 = Array1::from(r.vector("z0", EMBED_DIM)?);
    let z_avg = r.matrix("z_avg", N_COMPONENTS, EMBED_DIM)?;
    let counts_line = r.next_line()?;
    let counts: Vec<usize> = counts_line
        .strip_prefix("group_counts ")
        .ok_or_else(|| r.err("expected group_counts"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| r.err(format!("bad count {t:?}"))))
        .collect::<Result<_>>()?;
    let group_counts: [usize; N_COMPONENTS] = counts
        .try_into()
        .map_err(|_| r.err("group_counts needs 6 entries"))?;
    let norm_flat = r.fixed::<12>("norm")?;
    let norm = NormSpec {
        ranges: std::array::from_fn(|g| (norm_flat[2 * g], norm_flat[2 * g + 1])),
    };
    let ref_norm_labels = r.fixed::<N_COMPONENTS>("ref_norm_labels")?;
    let calibration = Calibration {
        slope: r.fixed::<N_COMPONENTS>("cal_slope")?,
        intercept: r.fixed::<N_COMPONENTS>("cal_intercept")?,
    };
    let bundle = ModelBundle {
        params: EncoderParams {
            weights: Weights { w1, b1, w2, b2 },
            standardization,
        },
        directions: DirectionSet {
            z_avg,
            z0,
            group_counts,
        },
        norm,
        calibration,
        ref_norm_labels,
        seed,
    };
    bundle.params.validate()?;
    bundle.norm.validate()?;
    Ok(bundle)
}
