//! File formats: dataset CSV, artifact CSVs and model checkpoints.
//!
//! Every writer emits `,`-delimited, LF-terminated text with `.` decimals.
//! Floats use Rust's shortest round-trip representation, so reading a file
//! back reproduces the written values bit for bit.
//!
//! # Dataset CSV
//!
//! Header `h2,ch4,c2h2,c2h4,c2h6,label`, one sample per row. Concentrations
//! are ppm; `label` is one of `PD`, `D1`, `D2`, `T1T2`, `T3` or empty for an
//! unlabeled sample.
//!
//! # Checkpoint
//!
//! ```text
//! dga-adapt-checkpoint v1
//! conv_filters=16,32
//! fc_widths=128,64,32,16,5
//! dropout=0.5
//! strategy=mcw
//! seed=7
//! seed.init=<u64>
//! seed.augment=<u64>
//! seed.split=<u64>
//! scaler_min=<9 comma-separated floats>
//! scaler_max=<9 comma-separated floats>
//! params=<count>
//! <one parameter per line, count lines, canonical flat order>
//! ```
//!
//! The flat order is the segment order of [`ModelParams::segments`].

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::augment::{LabeledImage, LabeledImageSet, Provenance};
use crate::error::{Error, Result};
use crate::model::{CnnConfig, ModelParams};
use crate::pipeline::Strategy;
use crate::preprocess::{
    FaultLabel, FeatureScaler, FeatureVector, GafImage, GasSample, FEATURE_NAMES, IMAGE_PIXELS, NUM_FEATURES,
};
use crate::seed::derive_seed;
use crate::stats::{KsVector, WeightMatrix};

pub const DATASET_HEADER: [&str; 6] = ["h2", "ch4", "c2h2", "c2h4", "c2h6", "label"];
pub const CHECKPOINT_MAGIC: &str = "dga-adapt-checkpoint v1";

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn parse_f64(field: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("`{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("`{field}` is not finite"),
        });
    }
    Ok(v)
}

fn record_line(record: &csv::StringRecord, fallback: usize) -> usize {
    record.position().map_or(fallback, |p| p.line() as usize)
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Checks a header against the expected column list, naming the first
/// duplicate or missing column.
fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let cols: Vec<&str> = found.iter().collect();
    for (i, c) in cols.iter().enumerate() {
        if cols[..i].contains(c) {
            return Err(Error::Parse {
                row: 1,
                column: c.to_string(),
                message: "duplicate header column".into(),
            });
        }
    }
    for e in expected {
        if !cols.contains(e) {
            return Err(Error::Parse {
                row: 1,
                column: e.to_string(),
                message: "missing header column".into(),
            });
        }
    }
    if cols != expected {
        return Err(Error::Parse {
            row: 1,
            column: "*".into(),
            message: format!("header must be exactly `{}`", expected.join(",")),
        });
    }
    Ok(())
}

/// Parses dataset CSV text. Error rows are 1-based file lines (header = 1).
pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<GasSample>> {
    let mut rdr = csv_reader(reader);
    check_header(rdr.headers()?, &DATASET_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = record_line(&rec, i + 2);
        let mut gases = [0.0; 5];
        for (k, g) in gases.iter_mut().enumerate() {
            *g = parse_f64(&rec[k], row, DATASET_HEADER[k])?;
            if *g < 0.0 {
                return Err(Error::Parse {
                    row,
                    column: DATASET_HEADER[k].into(),
                    message: format!("negative concentration {}", *g),
                });
            }
        }
        let label = match &rec[5] {
            "" => None,
            code => Some(code.parse::<FaultLabel>().map_err(|_| Error::Parse {
                row,
                column: "label".into(),
                message: format!("unknown label `{code}` (expected PD|D1|D2|T1T2|T3)"),
            })?),
        };
        out.push(GasSample::new(gases[0], gases[1], gases[2], gases[3], gases[4], label)?);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<GasSample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_dataset(file).map_err(|e| match e {
        Error::Parse { row, column, message } => Error::Parse {
            row,
            column,
            message: format!("{message} ({})", path.display()),
        },
        other => other,
    })
}

pub fn dataset_to_csv(samples: &[GasSample]) -> String {
    let mut out = DATASET_HEADER.join(",");
    out.push('\n');
    for s in samples {
        out.push_str(&join_floats(&s.gases()));
        out.push(',');
        if let Some(l) = s.label {
            out.push_str(l.code());
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: impl AsRef<Path>, samples: &[GasSample]) -> Result<()> {
    write_text(path, &dataset_to_csv(samples))
}

fn label_field(label: Option<FaultLabel>) -> &'static str {
    label.map_or("", FaultLabel::code)
}

fn parse_label(field: &str, row: usize) -> Result<Option<FaultLabel>> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| Error::Parse {
        row,
        column: "label".into(),
        message: format!("unknown label `{field}`"),
    })
}

/// Hybrid-ratio features, one row per sample, feature names as header.
pub fn features_to_csv(features: &[FeatureVector], labels: &[Option<FaultLabel>]) -> String {
    let mut out = FEATURE_NAMES.join(",");
    out.push_str(",label\n");
    for (i, f) in features.iter().enumerate() {
        out.push_str(&join_floats(&f.0));
        out.push(',');
        out.push_str(label_field(labels.get(i).copied().flatten()));
        out.push('\n');
    }
    out
}

pub fn features_from_csv(text: &str) -> Result<(Vec<FeatureVector>, Vec<Option<FaultLabel>>)> {
    let mut rdr = csv_reader(text.as_bytes());
    let mut expected: Vec<&str> = FEATURE_NAMES.to_vec();
    expected.push("label");
    check_header(rdr.headers()?, &expected)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = record_line(&rec, i + 2);
        let mut v = [0.0; NUM_FEATURES];
        for (k, x) in v.iter_mut().enumerate() {
            *x = parse_f64(&rec[k], row, FEATURE_NAMES[k])?;
        }
        features.push(FeatureVector(v));
        labels.push(parse_label(&rec[NUM_FEATURES], row)?);
    }
    Ok((features, labels))
}

fn pixel_columns() -> Vec<String> {
    (0..IMAGE_PIXELS)
        .map(|p| format!("p{}{}", p / NUM_FEATURES, p % NUM_FEATURES))
        .collect()
}

/// Images with label and provenance: `label,provenance,p00,...,p88`.
pub fn images_to_csv(images: &[LabeledImage]) -> String {
    let mut out = String::from("label,provenance,");
    out.push_str(&pixel_columns().join(","));
    out.push('\n');
    for it in images {
        let prov = match it.provenance {
            Provenance::Original => "original",
            Provenance::Augmented => "augmented",
        };
        out.push_str(it.label.code());
        out.push(',');
        out.push_str(prov);
        out.push(',');
        out.push_str(&join_floats(it.image.pixels()));
        out.push('\n');
    }
    out
}

/// Parses [`images_to_csv`] output. Pixel values are range- and
/// symmetry-checked but not required to be exact GASF matrices.
pub fn images_from_csv(text: &str) -> Result<LabeledImageSet> {
    let mut rdr = csv_reader(text.as_bytes());
    let cols = pixel_columns();
    let mut expected = vec!["label", "provenance"];
    expected.extend(cols.iter().map(String::as_str));
    check_header(rdr.headers()?, &expected)?;
    let mut items = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = record_line(&rec, i + 2);
        let label = parse_label(&rec[0], row)?.ok_or_else(|| Error::Parse {
            row,
            column: "label".into(),
            message: "image rows require a label".into(),
        })?;
        let provenance = match &rec[1] {
            "original" => Provenance::Original,
            "augmented" => Provenance::Augmented,
            other => {
                return Err(Error::Parse {
                    row,
                    column: "provenance".into(),
                    message: format!("expected original|augmented, got `{other}`"),
                })
            }
        };
        let mut px = [0.0; IMAGE_PIXELS];
        for (k, x) in px.iter_mut().enumerate() {
            *x = parse_f64(&rec[k + 2], row, &cols[k])?;
        }
        let image = GafImage::from_pixels(px).map_err(|e| Error::Parse {
            row,
            column: "*".into(),
            message: e.to_string(),
        })?;
        items.push(LabeledImage {
            image,
            label,
            provenance,
        });
    }
    LabeledImageSet::new(items)
}

/// GAF images of a preprocessed dataset: `label,p00,...,p88`; the label
/// field is empty for unlabeled samples.
pub fn gaf_to_csv(images: &[GafImage], labels: &[Option<FaultLabel>]) -> String {
    let mut out = String::from("label,");
    out.push_str(&pixel_columns().join(","));
    out.push('\n');
    for (i, im) in images.iter().enumerate() {
        out.push_str(label_field(labels.get(i).copied().flatten()));
        out.push(',');
        out.push_str(&join_floats(im.pixels()));
        out.push('\n');
    }
    out
}

pub fn gaf_from_csv(text: &str) -> Result<(Vec<GafImage>, Vec<Option<FaultLabel>>)> {
    let mut rdr = csv_reader(text.as_bytes());
    let cols = pixel_columns();
    let mut expected = vec!["label"];
    expected.extend(cols.iter().map(String::as_str));
    check_header(rdr.headers()?, &expected)?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = record_line(&rec, i + 2);
        labels.push(parse_label(&rec[0], row)?);
        let mut px = [0.0; IMAGE_PIXELS];
        for (k, x) in px.iter_mut().enumerate() {
            *x = parse_f64(&rec[k + 1], row, &cols[k])?;
        }
        images.push(GafImage::from_pixels(px).map_err(|e| Error::Parse {
            row,
            column: "*".into(),
            message: e.to_string(),
        })?);
    }
    Ok((images, labels))
}

/// `feature,min,max`, one row per feature.
pub fn scaler_to_csv(scaler: &FeatureScaler) -> String {
    let mut out = String::from("feature,min,max\n");
    for (k, name) in FEATURE_NAMES.iter().enumerate() {
        out.push_str(&format!("{name},{},{}\n", scaler.min[k], scaler.max[k]));
    }
    out
}

pub fn scaler_from_csv(text: &str) -> Result<FeatureScaler> {
    let mut rdr = csv_reader(text.as_bytes());
    check_header(rdr.headers()?, &["feature", "min", "max"])?;
    let mut min = Vec::new();
    let mut max = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = record_line(&rec, i + 2);
        min.push(parse_f64(&rec[1], row, "min")?);
        max.push(parse_f64(&rec[2], row, "max")?);
    }
    if min.len() != NUM_FEATURES {
        return Err(Error::DimensionMismatch {
            expected: NUM_FEATURES,
            found: min.len(),
        });
    }
    FeatureScaler::from_ranges(std::array::from_fn(|k| min[k]), std::array::from_fn(|k| max[k]))
}

/// `feature,ks`, one row per feature.
pub fn ks_to_csv(ks: &KsVector) -> String {
    let mut out = String::from("feature,ks\n");
    for (name, v) in FEATURE_NAMES.iter().zip(ks.0) {
        out.push_str(&format!("{name},{v}\n"));
    }
    out
}

pub fn ks_from_csv(text: &str) -> Result<KsVector> {
    let mut rdr = csv_reader(text.as_bytes());
    check_header(rdr.headers()?, &["feature", "ks"])?;
    let mut v = [0.0; NUM_FEATURES];
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = record_line(&rec, i + 2);
        if n >= NUM_FEATURES || rec[0] != *FEATURE_NAMES[n] {
            return Err(Error::Parse {
                row,
                column: "feature".into(),
                message: format!("unexpected feature `{}`", &rec[0]),
            });
        }
        v[n] = parse_f64(&rec[1], row, "ks")?;
        n += 1;
    }
    if n != NUM_FEATURES {
        return Err(Error::DimensionMismatch {
            expected: NUM_FEATURES,
            found: n,
        });
    }
    KsVector::new(v)
}

/// Nine rows of nine values, no header.
pub fn weights_to_csv(w: &WeightMatrix) -> String {
    w.flat()
        .chunks(NUM_FEATURES)
        .map(|row| join_floats(row) + "\n")
        .collect()
}

/// Reads a 9×9 weight CSV; `epsilon` is recorded on the returned matrix.
pub fn weights_from_csv(text: &str, epsilon: f64) -> Result<WeightMatrix> {
    let mut values = [0.0; IMAGE_PIXELS];
    let mut rows = 0;
    for (r, line) in text.lines().enumerate() {
        if r >= NUM_FEATURES {
            return Err(Error::invalid("weight CSV has more than 9 rows"));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != NUM_FEATURES {
            return Err(Error::Parse {
                row: r + 1,
                column: "*".into(),
                message: format!("expected 9 values, found {}", cells.len()),
            });
        }
        for (c, cell) in cells.iter().enumerate() {
            values[r * NUM_FEATURES + c] = parse_f64(cell.trim(), r + 1, &format!("c{c}"))?;
        }
        rows += 1;
    }
    if rows != NUM_FEATURES {
        return Err(Error::DimensionMismatch {
            expected: NUM_FEATURES,
            found: rows,
        });
    }
    WeightMatrix::from_values(values, epsilon)
}

/// `feature,kl`, one row per feature followed by an `AKLD` row.
pub fn akld_to_csv(per_feature: &[f64; NUM_FEATURES], akld: f64) -> String {
    let mut out = String::from("feature,kl\n");
    for (name, v) in FEATURE_NAMES.iter().zip(per_feature) {
        out.push_str(&format!("{name},{v}\n"));
    }
    out.push_str(&format!("AKLD,{akld}\n"));
    out
}

/// Returns the per-feature values and the trailing average.
pub fn akld_from_csv(text: &str) -> Result<([f64; NUM_FEATURES], f64)> {
    let mut rdr = csv_reader(text.as_bytes());
    check_header(rdr.headers()?, &["feature", "kl"])?;
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        values.push(parse_f64(&rec[1], record_line(&rec, i + 2), "kl")?);
    }
    if values.len() != NUM_FEATURES + 1 {
        return Err(Error::DimensionMismatch {
            expected: NUM_FEATURES + 1,
            found: values.len(),
        });
    }
    let per: [f64; NUM_FEATURES] = std::array::from_fn(|k| values[k]);
    Ok((per, values[NUM_FEATURES]))
}

/// A trained model with everything needed to score new raw samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub scaler: FeatureScaler,
    pub strategy: Strategy,
    pub seed: u64,
}

const CHECKPOINT_STAGES: [&str; 3] = ["init", "augment", "split"];

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let cfg = self.params.config();
        let mut out = format!("{CHECKPOINT_MAGIC}\n");
        out.push_str(&format!("conv_filters={}\n", list(&cfg.conv_filters)));
        out.push_str(&format!("fc_widths={}\n", list(&cfg.fc_widths)));
        out.push_str(&format!("dropout={}\n", cfg.dropout));
        out.push_str(&format!("strategy={}\n", self.strategy));
        out.push_str(&format!("seed={}\n", self.seed));
        for stage in CHECKPOINT_STAGES {
            out.push_str(&format!("seed.{stage}={}\n", derive_seed(self.seed, stage)));
        }
        out.push_str(&format!("scaler_min={}\n", join_floats(&self.scaler.min)));
        out.push_str(&format!("scaler_max={}\n", join_floats(&self.scaler.max)));
        out.push_str(&format!("params={}\n", self.params.len()));
        for v in self.params.values() {
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::invalid(format!("checkpoint truncated before {what}"))),
            }
        };
        let (_, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::invalid(format!(
                "not a checkpoint (expected `{CHECKPOINT_MAGIC}`)"
            )));
        }
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (row, line) = next(key)?;
            let value = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| Error::Parse {
                    row,
                    column: key.into(),
                    message: format!("expected `{key}=...`, found `{line}`"),
                })?;
            Ok((row, value.to_string()))
        };
        let usizes = |row: usize, key: &str, v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .map(|x| {
                    x.parse().map_err(|_| Error::Parse {
                        row,
                        column: key.into(),
                        message: format!("bad integer `{x}`"),
                    })
                })
                .collect()
        };
        let floats = |row: usize, key: &str, v: &str| -> Result<Vec<f64>> {
            v.split(',').map(|x| parse_f64(x, row, key)).collect()
        };
        let (r, v) = field("conv_filters")?;
        let conv_filters = usizes(r, "conv_filters", &v)?;
        let (r, v) = field("fc_widths")?;
        let fc_widths = usizes(r, "fc_widths", &v)?;
        let (r, v) = field("dropout")?;
        let dropout = parse_f64(&v, r, "dropout")?;
        let (_, v) = field("strategy")?;
        let strategy: Strategy = v.parse()?;
        let (r, v) = field("seed")?;
        let seed: u64 = v.parse().map_err(|_| Error::Parse {
            row: r,
            column: "seed".into(),
            message: format!("bad seed `{v}`"),
        })?;
        for stage in CHECKPOINT_STAGES {
            let key = format!("seed.{stage}");
            let (r, v) = field(&key)?;
            if v != derive_seed(seed, stage).to_string() {
                return Err(Error::Parse {
                    row: r,
                    column: key,
                    message: "derived seed does not match master seed".into(),
                });
            }
        }
        let (r, v) = field("scaler_min")?;
        let min = floats(r, "scaler_min", &v)?;
        let (r, v) = field("scaler_max")?;
        let max = floats(r, "scaler_max", &v)?;
        if min.len() != NUM_FEATURES || max.len() != NUM_FEATURES {
            return Err(Error::DimensionMismatch {
                expected: NUM_FEATURES,
                found: min.len().min(max.len()),
            });
        }
        let scaler = FeatureScaler::from_ranges(std::array::from_fn(|k| min[k]), std::array::from_fn(|k| max[k]))?;
        let (r, v) = field("params")?;
        let count: usize = v.parse().map_err(|_| Error::Parse {
            row: r,
            column: "params".into(),
            message: format!("bad count `{v}`"),
        })?;
        let config = CnnConfig {
            conv_filters,
            fc_widths,
            dropout,
        };
        config.validate()?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let (row, line) = next("parameter values")?;
            values.push(parse_f64(line.trim(), row, "params")?);
        }
        if next("end").is_ok_and(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::invalid("trailing data after checkpoint parameters"));
        }
        Ok(Checkpoint {
            params: ModelParams::from_flat(&config, values)?,
            scaler,
            strategy,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read(file)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }
}
