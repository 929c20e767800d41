//! Labeled sample sets: uniform sampling with rejection, normalization,
//! oracle labeling and CSV persistence.
//!
//! # CSV layout
//!
//! ```text
//! #errmine-labeled-set v1
//! #name=S0
//! #dim_names=barrier_over_spot,strike_over_spot,...
//! #units=ratio,ratio,...
//! #normalizer_lo=1.0100000000000000e0,...
//! #normalizer_hi=2.0000000000000000e0,...
//! dim_0,dim_1,dim_2,dim_3,dim_4,target,provenance
//! 5.3797442045367690e-1,...,3.2509846514785473e0,uniform
//! ```
//!
//! Inputs are stored in normalized `[0,1]` coordinates and every float is
//! written with 17 significant digits, so a save/load cycle is bit-exact.
//! Unlabeled sets leave the `target` field empty.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{MlpModel, WeightedSamples};
use crate::oracle::Oracle;
use crate::par::Exec;

const MAGIC_LINE: &str = "#errmine-labeled-set v1";

/// Per-dimension affine map from raw `[lo, hi]` onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Normalizer {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidSpec(format!(
                "normalizer bounds of length {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && h > l) {
                return Err(Error::InvalidSpec(format!("normalizer dim {i}: [{l}, {h}]")));
            }
        }
        Ok(Normalizer { lo, hi })
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            bounds.iter().map(|b| b.0).collect(),
            bounds.iter().map(|b| b.1).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn span(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(i, v)| (v - self.lo[i]) / self.span(i))
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| self.lo[i] + v * self.span(i))
            .collect()
    }

    /// Converts a raw-coordinate gradient into normalized coordinates.
    pub fn gradient_to_normalized(&self, raw_grad: &[f64]) -> Vec<f64> {
        raw_grad
            .iter()
            .enumerate()
            .map(|(i, g)| g * self.span(i))
            .collect()
    }
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Uniform,
    Mined { round: usize },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Uniform => f.write_str("uniform"),
            Provenance::Mined { round } => write!(f, "mined-round-{round}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "uniform" {
            return Ok(Provenance::Uniform);
        }
        s.strip_prefix("mined-round-")
            .and_then(|r| r.parse().ok())
            .map(|round| Provenance::Mined { round })
            .ok_or_else(|| format!("unknown provenance {s:?}"))
    }
}

/// A set of normalized inputs with (optionally) oracle targets in dollars.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub name: String,
    normalizer: Normalizer,
    dim_names: Vec<String>,
    units: Vec<String>,
    inputs: Array2<f64>,
    targets: Option<Vec<f64>>,
    provenance: Vec<Provenance>,
}

impl LabeledSet {
    /// An empty set carrying the oracle's normalizer and dimension metadata.
    pub fn empty(name: &str, oracle: &dyn Oracle) -> Result<Self> {
        Ok(LabeledSet {
            name: name.to_string(),
            normalizer: oracle.normalizer()?,
            dim_names: oracle.dim_names(),
            units: oracle.units(),
            inputs: Array2::zeros((0, oracle.dim())),
            targets: Some(Vec::new()),
            provenance: Vec::new(),
        })
    }

    pub fn from_parts(
        name: &str,
        normalizer: Normalizer,
        dim_names: Vec<String>,
        units: Vec<String>,
        inputs: Array2<f64>,
        targets: Option<Vec<f64>>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let n = inputs.nrows();
        let d = normalizer.dim();
        if inputs.ncols() != d || dim_names.len() != d || units.len() != d {
            return Err(Error::Shape {
                expected: d,
                got: inputs.ncols(),
            });
        }
        if provenance.len() != n || targets.as_ref().is_some_and(|t| t.len() != n) {
            return Err(Error::Shape {
                expected: n,
                got: provenance.len(),
            });
        }
        if let Some(bad) = inputs.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!(
                "input row {} lies outside [0,1]^{d}",
                bad / d
            )));
        }
        Ok(LabeledSet {
            name: name.to_string(),
            normalizer,
            dim_names,
            units,
            inputs,
            targets,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn dim_names(&self) -> &[String] {
        &self.dim_names
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> Vec<f64> {
        self.inputs.row(i).to_vec()
    }

    pub fn raw_input(&self, i: usize) -> Vec<f64> {
        self.normalizer.denormalize(self.inputs.row(i).as_slice().unwrap())
    }

    pub fn is_labeled(&self) -> bool {
        self.targets.is_some()
    }

    pub fn targets(&self) -> Result<&[f64]> {
        self.targets
            .as_deref()
            .ok_or_else(|| Error::EmptyInput(format!("set {} is unlabeled", self.name)))
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn provenance_count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&q| q == p).count()
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            name: self.name.clone(),
            normalizer: self.normalizer.clone(),
            dim_names: self.dim_names.clone(),
            units: self.units.clone(),
            inputs: self.inputs.select(Axis(0), indices),
            targets: self
                .targets
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
        }
    }

    /// Indices of samples whose denormalized input fails `is_valid`.
    pub fn invalid_rows(&self, oracle: &dyn Oracle) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !oracle.is_valid(&self.raw_input(i)))
            .collect()
    }

    /// Model residuals `Y(x) − z`, in sample order.
    pub fn residuals(&self, model: &MlpModel) -> Result<Vec<f64>> {
        self.residuals_with(model, Exec::default())
    }

    pub fn residuals_with(&self, model: &MlpModel, exec: Exec) -> Result<Vec<f64>> {
        const CHUNK: usize = 2048;
        let targets = self.targets()?;
        let chunks = self.len().div_ceil(CHUNK);
        let parts = exec.try_map(chunks, |c| {
            let rows = c * CHUNK..((c + 1) * CHUNK).min(self.len());
            let y = model.forward_batch(self.inputs.slice(ndarray::s![rows.clone(), ..]))?;
            Ok::<_, Error>(
                y.iter()
                    .zip(&targets[rows])
                    .map(|(y, z)| y - z)
                    .collect::<Vec<f64>>(),
            )
        })?;
        Ok(parts.concat())
    }

    /// Uniformly weighted training samples with total weight `total_weight`.
    pub fn to_weighted(&self, total_weight: f64) -> Result<WeightedSamples> {
        let targets = Array1::from(self.targets()?.to_vec());
        let w = if self.is_empty() {
            0.0
        } else {
            total_weight / self.len() as f64
        };
        WeightedSamples::new(self.inputs.clone(), targets, Array1::from_elem(self.len(), w))
    }
}

/// Draws `n` points uniformly from the oracle's valid region.
///
/// Candidates are drawn uniformly in `[0,1)^d` and kept when their
/// denormalized value passes `is_valid`; at most `100·n` draws are made.
pub fn sample_uniform(oracle: &dyn Oracle, n: usize, seed: u64) -> Result<LabeledSet> {
    if n == 0 {
        return Err(Error::InvalidSpec("sample size must be positive".into()));
    }
    let normalizer = oracle.normalizer()?;
    let d = oracle.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = 100 * n;
    let mut data = Vec::with_capacity(n * d);
    let mut accepted = 0;
    let mut draws = 0;
    let mut x = vec![0.0; d];
    while accepted < n {
        if draws == budget {
            return Err(Error::SamplingStarvation {
                requested: n,
                accepted,
                draws,
            });
        }
        draws += 1;
        for v in x.iter_mut() {
            *v = rng.random::<f64>();
        }
        if oracle.is_valid(&normalizer.denormalize(&x)) {
            data.extend_from_slice(&x);
            accepted += 1;
        }
    }
    LabeledSet::from_parts(
        "uniform",
        normalizer,
        oracle.dim_names(),
        oracle.units(),
        Array2::from_shape_vec((n, d), data).expect("row-major buffer"),
        None,
        vec![Provenance::Uniform; n],
    )
}

/// Sets `targets[i] = Z(denormalize(inputs[i]))`.
pub fn label(set: LabeledSet, oracle: &dyn Oracle) -> Result<LabeledSet> {
    label_with(set, oracle, Exec::default())
}

pub fn label_with(mut set: LabeledSet, oracle: &dyn Oracle, exec: Exec) -> Result<LabeledSet> {
    if oracle.dim() != set.dim() {
        return Err(Error::Shape {
            expected: set.dim(),
            got: oracle.dim(),
        });
    }
    let targets = exec.try_map(set.len(), |i| {
        oracle
            .evaluate(&set.raw_input(i))
            .map_err(|e| Error::Labeling {
                index: i,
                source: Box::new(e),
            })
    })?;
    set.targets = Some(targets);
    Ok(set)
}

/// Concatenation `a ∪ b` (duplicates kept, provenance preserved).
pub fn merge(a: &LabeledSet, b: &LabeledSet) -> Result<LabeledSet> {
    if a.normalizer != b.normalizer {
        return Err(Error::IncompatibleSets(format!(
            "{} and {} use different normalizers",
            a.name, b.name
        )));
    }
    if a.is_labeled() != b.is_labeled() {
        return Err(Error::IncompatibleSets(format!(
            "{} and {} differ in labeling",
            a.name, b.name
        )));
    }
    let inputs = ndarray::concatenate(Axis(0), &[a.inputs.view(), b.inputs.view()])
        .map_err(|e| Error::IncompatibleSets(e.to_string()))?;
    let targets = match (&a.targets, &b.targets) {
        (Some(x), Some(y)) => Some(x.iter().chain(y).copied().collect()),
        _ => None,
    };
    Ok(LabeledSet {
        name: format!("{}+{}", a.name, b.name),
        normalizer: a.normalizer.clone(),
        dim_names: a.dim_names.clone(),
        units: a.units.clone(),
        inputs,
        targets,
        provenance: a.provenance.iter().chain(&b.provenance).copied().collect(),
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn join_f64(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")
}

pub fn write_csv<W: Write>(set: &LabeledSet, mut w: W) -> Result<()> {
    writeln!(w, "{MAGIC_LINE}")?;
    writeln!(w, "#name={}", set.name)?;
    writeln!(w, "#dim_names={}", set.dim_names.join(","))?;
    writeln!(w, "#units={}", set.units.join(","))?;
    writeln!(w, "#normalizer_lo={}", join_f64(&set.normalizer.lo))?;
    writeln!(w, "#normalizer_hi={}", join_f64(&set.normalizer.hi))?;
    let mut csv = csv::WriterBuilder::new().from_writer(w);
    let mut header: Vec<String> = (0..set.dim()).map(|i| format!("dim_{i}")).collect();
    header.push("target".into());
    header.push("provenance".into());
    csv.write_record(&header).map_err(csv_io)?;
    for i in 0..set.len() {
        let mut row: Vec<String> = set.inputs.row(i).iter().map(|&v| fmt_f64(v)).collect();
        row.push(set.targets.as_ref().map(|t| fmt_f64(t[i])).unwrap_or_default());
        row.push(set.provenance[i].to_string());
        csv.write_record(&row).map_err(csv_io)?;
    }
    csv.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn save_csv(set: &LabeledSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(set, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<LabeledSet> {
    read_csv(std::fs::File::open(path)?)
}

fn parse_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_floats(line: u64, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("bad number {v:?}: {e}")))
        })
        .collect()
}

pub fn read_csv<R: Read>(mut r: R) -> Result<LabeledSet> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;

    let mut meta = std::collections::HashMap::new();
    let mut first = true;
    for (idx, line) in text.lines().enumerate() {
        let Some(comment) = line.strip_prefix('#') else {
            break;
        };
        let line_no = idx as u64 + 1;
        if first {
            if line != MAGIC_LINE {
                return Err(parse_err(line_no, format!("expected {MAGIC_LINE:?}")));
            }
            first = false;
            continue;
        }
        let (key, value) = comment
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, "comment header without '='"))?;
        meta.insert(key.to_string(), (line_no, value.to_string()));
    }
    if first {
        return Err(parse_err(1, format!("expected {MAGIC_LINE:?}")));
    }
    let get = |key: &str| {
        meta.get(key)
            .ok_or_else(|| parse_err(1, format!("missing #{key}= header")))
    };
    let name = get("name")?.1.clone();
    let split = |s: &str| -> Vec<String> { s.split(',').map(String::from).collect() };
    let dim_names = split(&get("dim_names")?.1);
    let units = split(&get("units")?.1);
    let (lo_line, lo) = get("normalizer_lo")?;
    let (hi_line, hi) = get("normalizer_hi")?;
    let normalizer = Normalizer::new(parse_floats(*lo_line, lo)?, parse_floats(*hi_line, hi)?)
        .map_err(|e| parse_err(*lo_line, e.to_string()))?;
    let d = normalizer.dim();

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?
        .clone();
    let header_line = header.position().map_or(0, |p| p.line());
    let mut expected: Vec<String> = (0..d).map(|i| format!("dim_{i}")).collect();
    expected.push("target".into());
    expected.push("provenance".into());
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            header_line,
            format!("header {:?}, expected {expected:?}", header.iter().collect::<Vec<_>>()),
        ));
    }

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut provenance = Vec::new();
    let mut labeled: Option<bool> = None;
    for record in reader.records() {
        let record =
            record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != d + 2 {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", d + 2, record.len()),
            ));
        }
        for field in record.iter().take(d) {
            let v: f64 = field
                .parse()
                .map_err(|e| parse_err(line, format!("bad number {field:?}: {e}")))?;
            inputs.push(v);
        }
        let target = &record[d];
        let has_target = !target.is_empty();
        if *labeled.get_or_insert(has_target) != has_target {
            return Err(parse_err(line, "mix of labeled and unlabeled rows"));
        }
        if has_target {
            targets.push(
                target
                    .parse::<f64>()
                    .map_err(|e| parse_err(line, format!("bad target {target:?}: {e}")))?,
            );
        }
        provenance.push(record[d + 1].parse::<Provenance>().map_err(|e| parse_err(line, e))?);
    }
    let n = provenance.len();
    let inputs = Array2::from_shape_vec((n, d), inputs).expect("row-major buffer");
    let targets = labeled.unwrap_or(true).then_some(targets);
    LabeledSet::from_parts(&name, normalizer, dim_names, units, inputs, targets, provenance)
        .map_err(|e| parse_err(header_line, e.to_string()))
}
