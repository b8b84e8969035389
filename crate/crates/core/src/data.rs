//! Dataset container, synthetic generator, splitting, and file formats.
//!
//! A dataset holds paired image-side and text-side feature rows with shared
//! multi-hot label rows. Features are kept at 32-bit precision everywhere
//! (generation rounds through f32, the file format stores f32, the CSV
//! importer rounds through f32), so a save/load round trip reproduces the
//! in-memory dataset exactly.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::wire::{self, CountingReader};

pub const DATASET_MAGIC: &[u8; 4] = b"DSMD";
pub const DATASET_VERSION: u32 = 1;

/// Paired multimodal data: `n` items in rows, one feature block per
/// modality, and 0/1 label rows with at least one active class per item.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalDataset {
    x: Matrix,
    y: Matrix,
    labels: Matrix,
}

impl MultimodalDataset {
    pub fn new(x: Matrix, y: Matrix, labels: Matrix) -> Result<MultimodalDataset> {
        if x.rows() != y.rows() || x.rows() != labels.rows() {
            return Err(Error::Shape(format!(
                "row counts disagree: {} image rows, {} text rows, {} label rows",
                x.rows(),
                y.rows(),
                labels.rows()
            )));
        }
        for i in 0..labels.rows() {
            let mut any = false;
            for &v in labels.row(i) {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Config(format!(
                        "item {i} has label value {v}, labels must be 0 or 1"
                    )));
                }
                any |= v == 1.0;
            }
            if !any {
                return Err(Error::Config(format!("item {i} has no active labels")));
            }
        }
        Ok(MultimodalDataset { x, y, labels })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_x(&self) -> usize {
        self.x.cols()
    }

    pub fn d_y(&self) -> usize {
        self.y.cols()
    }

    pub fn classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn labels(&self) -> &Matrix {
        &self.labels
    }

    pub fn label_row(&self, i: usize) -> &[f64] {
        self.labels.row(i)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<MultimodalDataset> {
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!(
                    "subset index {i} out of range for {} items",
                    self.len()
                )));
            }
        }
        let gather = |m: &Matrix| {
            Matrix::from_fn(indices.len(), m.cols(), |r, c| m.get(indices[r], c))
        };
        Ok(MultimodalDataset {
            x: gather(&self.x),
            y: gather(&self.y),
            labels: gather(&self.labels),
        })
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        wire::push_u32(&mut out, DATASET_VERSION);
        wire::push_u64(&mut out, self.len() as u64);
        wire::push_u32(&mut out, self.d_x() as u32);
        wire::push_u32(&mut out, self.d_y() as u32);
        wire::push_u32(&mut out, self.classes() as u32);
        for &v in self.x.data() {
            wire::push_f32(&mut out, v as f32);
        }
        for &v in self.y.data() {
            wire::push_f32(&mut out, v as f32);
        }
        for &v in self.labels.data() {
            out.push(v as u8);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        wire::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<MultimodalDataset> {
        let file = File::open(path)?;
        let mut r = CountingReader::new(BufReader::new(file));
        r.read_magic(DATASET_MAGIC)?;
        let version = r.read_u32()?;
        if version != DATASET_VERSION {
            return Err(r.bad(format!(
                "unsupported dataset version {version}, expected {DATASET_VERSION}"
            )));
        }
        let n = r.read_u64()? as usize;
        let d_x = r.read_u32()? as usize;
        let d_y = r.read_u32()? as usize;
        let classes = r.read_u32()? as usize;
        let mut read_block = |rows: usize, cols: usize| -> Result<Matrix> {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let v = r.read_f32()?;
                if !v.is_finite() {
                    return Err(r.bad("non-finite feature"));
                }
                data.push(v as f64);
            }
            Matrix::from_vec(rows, cols, data).map_err(|e| r.bad(e.to_string()))
        };
        let x = read_block(n, d_x)?;
        let y = read_block(n, d_y)?;
        let mut labels = Vec::with_capacity(n * classes);
        for _ in 0..n * classes {
            match r.read_byte()? {
                0 => labels.push(0.0),
                1 => labels.push(1.0),
                b => return Err(r.bad(format!("label byte {b}, labels must be 0 or 1"))),
            }
        }
        r.expect_eof()?;
        let labels = Matrix::from_vec(n, classes, labels).map_err(|e| r.bad(e.to_string()))?;
        if n > 0 {
            MultimodalDataset::new(x, y, labels).map_err(|e| Error::Format {
                offset: 0,
                message: e.to_string(),
            })
        } else {
            Ok(MultimodalDataset { x, y, labels })
        }
    }
}

/// Plain-text import for hand-written fixtures. The header row declares the
/// three dimensions as `d_x,d_y,C`; every following row carries the image
/// features, then the text features, then the 0/1 labels of one item.
/// Features are rounded through f32 to match the binary format's precision.
pub fn load_csv(path: &Path) -> Result<MultimodalDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty file".to_string() })?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|f| f.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line: 1,
            message: format!("header must declare d_x,d_y,C as integers, got {header:?}"),
        })?;
    let [d_x, d_y, classes] = dims[..] else {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must have exactly three fields, got {}", dims.len()),
        });
    };
    if d_x == 0 || d_y == 0 || classes == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "d_x, d_y and C must all be positive".to_string(),
        });
    }
    let want = d_x + d_y + classes;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != want {
            return Err(Error::Parse {
                line,
                message: format!("expected {want} fields, got {}", fields.len()),
            });
        }
        let parse = |o: usize| -> Result<f64> {
            fields[o].trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("field {} is not a number: {:?}", o + 1, fields[o]),
            })
        };
        for o in 0..d_x {
            xs.push(parse(o)? as f32 as f64);
        }
        for o in d_x..d_x + d_y {
            ys.push(parse(o)? as f32 as f64);
        }
        for o in d_x + d_y..want {
            let v = parse(o)?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::Parse {
                    line,
                    message: format!("label field {} must be 0 or 1, got {v}", o + 1),
                });
            }
            labels.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse { line: 1, message: "no data rows".to_string() });
    }
    MultimodalDataset::new(
        Matrix::from_vec(rows, d_x, xs)?,
        Matrix::from_vec(rows, d_y, ys)?,
        Matrix::from_vec(rows, classes, labels)?,
    )
}

/// How items pick up labels during synthesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LabelMode {
    /// Exactly one class per item, assigned round-robin so classes stay
    /// balanced.
    Single,
    /// Round-robin primary class plus each other class independently with
    /// the given probability.
    Multi { co_occurrence: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct SynthSpec {
    pub n: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub classes: usize,
    pub noise: f64,
    pub label_mode: LabelMode,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("cannot synthesize an empty dataset".to_string()));
        }
        if self.d_x == 0 || self.d_y == 0 {
            return Err(Error::Config("feature dimensions must be positive".to_string()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!(
                "noise must be a nonnegative number, got {}",
                self.noise
            )));
        }
        if let LabelMode::Multi { co_occurrence } = self.label_mode
            && !(0.0..=1.0).contains(&co_occurrence)
        {
            return Err(Error::Config(format!(
                "co-occurrence probability must be in [0, 1], got {co_occurrence}"
            )));
        }
        Ok(())
    }
}

/// Each class gets one random unit prototype per modality; each item's
/// features are the sum of its classes' prototypes plus per-coordinate
/// Gaussian noise, rounded through f32. Deterministic for a given rng state.
pub fn generate_synthetic(spec: &SynthSpec, rng: &mut impl Rng) -> Result<MultimodalDataset> {
    spec.validate()?;
    let protos_x = unit_prototypes(spec.classes, spec.d_x, rng);
    let protos_y = unit_prototypes(spec.classes, spec.d_y, rng);

    let mut labels = Matrix::zeros(spec.n, spec.classes);
    for i in 0..spec.n {
        labels.set(i, i % spec.classes, 1.0);
        if let LabelMode::Multi { co_occurrence } = spec.label_mode {
            for c in 0..spec.classes {
                if c != i % spec.classes && rng.random::<f64>() < co_occurrence {
                    labels.set(i, c, 1.0);
                }
            }
        }
    }

    let mut fill = |protos: &Matrix, dim: usize| {
        let mut m = Matrix::zeros(spec.n, dim);
        for i in 0..spec.n {
            for d in 0..dim {
                let mut v = 0.0;
                for c in 0..spec.classes {
                    if labels.get(i, c) == 1.0 {
                        v += protos.get(c, d);
                    }
                }
                v += spec.noise * rng.sample::<f64, _>(StandardNormal);
                m.set(i, d, v as f32 as f64);
            }
        }
        m
    };
    let x = fill(&protos_x, spec.d_x);
    let y = fill(&protos_y, spec.d_y);
    MultimodalDataset::new(x, y, labels)
}

fn unit_prototypes(classes: usize, dim: usize, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(classes, dim);
    for c in 0..classes {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for (d, a) in v.iter().enumerate() {
                    m.set(c, d, a / norm);
                }
                break;
            }
        }
    }
    m
}

/// How many items become queries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QuerySelect {
    /// This fraction of all items, rounded to the nearest count.
    Fraction(f64),
    /// This many items from every class.
    PerClass(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub query: QuerySelect,
    /// Training items drawn from the database; `None` trains on all of it.
    pub train_size: Option<usize>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if let QuerySelect::Fraction(f) = self.query
            && !(0.0..1.0).contains(&f)
        {
            return Err(Error::Config(format!(
                "query fraction must be in [0, 1), got {f}"
            )));
        }
        Ok(())
    }
}

/// A query/database partition plus the training subset of the database.
/// All index lists are sorted ascending; `query_indices` and
/// `database_indices` point into the original dataset, `train_indices`
/// points into `database`.
#[derive(Clone, Debug)]
pub struct Split {
    pub query: MultimodalDataset,
    pub database: MultimodalDataset,
    pub query_indices: Vec<usize>,
    pub database_indices: Vec<usize>,
    pub train_indices: Vec<usize>,
}

pub fn split(ds: &MultimodalDataset, spec: &SplitSpec, rng: &mut impl Rng) -> Result<Split> {
    spec.validate()?;
    let n = ds.len();
    let mut query_indices = match spec.query {
        QuerySelect::Fraction(f) => {
            let q = (f * n as f64).round() as usize;
            if q >= n {
                return Err(Error::Config(format!(
                    "query fraction {f} would leave an empty database"
                )));
            }
            rand::seq::index::sample(rng, n, q).into_vec()
        }
        QuerySelect::PerClass(k) => {
            let mut chosen = vec![false; n];
            let mut picks = Vec::new();
            for c in 0..ds.classes() {
                if k == 0 {
                    break;
                }
                let members: Vec<usize> = (0..n)
                    .filter(|&i| !chosen[i] && ds.labels().get(i, c) == 1.0)
                    .collect();
                if members.len() < k {
                    return Err(Error::Config(format!(
                        "class {c} has only {} available members, cannot select {k} queries",
                        members.len()
                    )));
                }
                for pos in rand::seq::index::sample(rng, members.len(), k) {
                    chosen[members[pos]] = true;
                    picks.push(members[pos]);
                }
            }
            if picks.len() >= n {
                return Err(Error::Config(
                    "per-class query counts would leave an empty database".to_string(),
                ));
            }
            picks
        }
    };
    query_indices.sort_unstable();
    let mut is_query = vec![false; n];
    for &i in &query_indices {
        is_query[i] = true;
    }
    let database_indices: Vec<usize> = (0..n).filter(|&i| !is_query[i]).collect();

    let mut train_indices = match spec.train_size {
        None => (0..database_indices.len()).collect(),
        Some(t) => {
            if t == 0 || t > database_indices.len() {
                return Err(Error::Config(format!(
                    "training size {t} is not in 1..={} (the database size)",
                    database_indices.len()
                )));
            }
            rand::seq::index::sample(rng, database_indices.len(), t).into_vec()
        }
    };
    train_indices.sort_unstable();

    Ok(Split {
        query: ds.subset(&query_indices)?,
        database: ds.subset(&database_indices)?,
        query_indices,
        database_indices,
        train_indices,
    })
}
