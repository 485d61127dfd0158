//! Binary classification datasets: libsvm text, synthetic Gaussian data and
//! a binary cache.
//!
//! Feature indices are 1-based in files and 0-based in memory. Labels are
//! always stored as `-1.0` or `+1.0`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use log::warn;
use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::Matrix;

/// Fraction of nonzeros at or above which rows are stored densely.
pub const DENSE_THRESHOLD: f64 = 0.25;

const MAGIC: &[u8; 4] = b"SCRD";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    /// Row-major `n x d` values.
    Dense(Vec<f64>),
    /// Compressed sparse rows with 0-based, strictly increasing column indices.
    Sparse {
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    features: Features,
    labels: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from sparse rows of `(0-based index, value)` pairs.
    ///
    /// Storage is dense when the nonzero fraction reaches [`DENSE_THRESHOLD`].
    pub fn from_sparse_rows(rows: Vec<Vec<(usize, f64)>>, labels: Vec<f64>, d: usize) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::NoSamples);
        }
        if d == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidArgument(format!("label {bad} not in {{-1, +1}}")));
        }
        let mut nnz = 0usize;
        for row in &rows {
            for w in row.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(Error::InvalidArgument("row indices must be strictly increasing".into()));
                }
            }
            if let Some(&(j, _)) = row.last() {
                if j >= d {
                    return Err(Error::IndexOutOfRange { index: j, n: d });
                }
            }
            if row.iter().any(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite("feature value"));
            }
            nnz += row.iter().filter(|(_, v)| *v != 0.0).count();
        }
        let features = if nnz as f64 >= DENSE_THRESHOLD * (n as f64) * (d as f64) {
            let mut values = vec![0.0; n * d];
            for (i, row) in rows.iter().enumerate() {
                for &(j, v) in row {
                    values[i * d + j] = v;
                }
            }
            Features::Dense(values)
        } else {
            let mut indptr = Vec::with_capacity(n + 1);
            let mut indices = Vec::with_capacity(nnz);
            let mut values = Vec::with_capacity(nnz);
            indptr.push(0);
            for row in &rows {
                for &(j, v) in row.iter().filter(|(_, v)| *v != 0.0) {
                    indices.push(j as u32);
                    values.push(v);
                }
                indptr.push(indices.len());
            }
            Features::Sparse { indptr, indices, values }
        };
        Ok(Dataset { n, d, features, labels })
    }

    /// Builds a dense dataset from a row-major `n x d` buffer.
    pub fn from_dense(values: Vec<f64>, labels: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        let n = labels.len();
        if n == 0 {
            return Err(Error::NoSamples);
        }
        if values.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature value"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidArgument(format!("label {bad} not in {{-1, +1}}")));
        }
        Ok(Dataset { n, d, features: Features::Dense(values), labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.features, Features::Sparse { .. })
    }

    /// `x_i . w`
    #[inline]
    pub fn row_dot(&self, i: usize, w: &[f64]) -> f64 {
        match &self.features {
            Features::Dense(v) => {
                let row = &v[i * self.d..(i + 1) * self.d];
                row.iter().zip(w).map(|(a, b)| a * b).sum()
            }
            Features::Sparse { indptr, indices, values } => {
                let r = indptr[i]..indptr[i + 1];
                indices[r.clone()]
                    .iter()
                    .zip(&values[r])
                    .map(|(&j, v)| v * w[j as usize])
                    .sum()
            }
        }
    }

    /// `out += a * x_i`
    #[inline]
    pub fn row_axpy(&self, i: usize, a: f64, out: &mut [f64]) {
        match &self.features {
            Features::Dense(v) => {
                let row = &v[i * self.d..(i + 1) * self.d];
                for (o, x) in out.iter_mut().zip(row) {
                    *o += a * x;
                }
            }
            Features::Sparse { indptr, indices, values } => {
                let r = indptr[i]..indptr[i + 1];
                for (&j, v) in indices[r.clone()].iter().zip(&values[r]) {
                    out[j as usize] += a * v;
                }
            }
        }
    }

    pub fn row_sq_norm(&self, i: usize) -> f64 {
        self.row_entries(i).iter().map(|(_, v)| v * v).sum()
    }

    /// Nonzero entries of row `i` as `(0-based index, value)`.
    pub fn row_entries(&self, i: usize) -> Vec<(usize, f64)> {
        match &self.features {
            Features::Dense(v) => v[i * self.d..(i + 1) * self.d]
                .iter()
                .enumerate()
                .filter(|(_, x)| **x != 0.0)
                .map(|(j, x)| (j, *x))
                .collect(),
            Features::Sparse { indptr, indices, values } => (indptr[i]..indptr[i + 1])
                .map(|k| (indices[k] as usize, values[k]))
                .collect(),
        }
    }

    /// Dense `n x d` copy of the features.
    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.d);
        for i in 0..self.n {
            for (j, v) in self.row_entries(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

fn parse_label(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid label {tok:?}"),
    })?;
    if v == 1.0 {
        Ok(1.0)
    } else if v == -1.0 || v == 0.0 {
        Ok(-1.0)
    } else {
        Err(Error::Parse { line, message: format!("unknown label value {tok:?}") })
    }
}

/// Parses libsvm text: `label idx:val idx:val ...` with 1-based, strictly
/// increasing indices. Labels `0` are mapped to `-1`.
///
/// `dim` overrides the feature dimension; it must cover every index seen.
pub fn parse_libsvm<R: BufRead>(reader: R, dim: Option<usize>) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let label = parse_label(toks.next().unwrap_or_default(), lineno)?;
        let mut row = Vec::new();
        let mut prev = 0usize;
        for tok in toks {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("expected index:value, got {tok:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("invalid index {idx:?}"),
            })?;
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("invalid value {val:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse { line: lineno, message: "indices are 1-based".into() });
            }
            if idx <= prev {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("index {idx} does not increase (previous {prev})"),
                });
            }
            if !val.is_finite() {
                return Err(Error::Parse { line: lineno, message: format!("non-finite value {val}") });
            }
            prev = idx;
            row.push((idx - 1, val));
        }
        max_index = max_index.max(prev);
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::NoSamples);
    }
    let d = match dim {
        Some(d) if d < max_index => {
            return Err(Error::InvalidArgument(format!(
                "dimension override {d} smaller than max index {max_index}"
            )))
        }
        Some(d) => d,
        None => max_index.max(1),
    };
    Dataset::from_sparse_rows(rows, labels, d)
}

/// Writes libsvm text. Zero entries are omitted; values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_libsvm<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    for i in 0..data.n() {
        write!(w, "{}", if data.label(i) > 0.0 { "+1" } else { "-1" })?;
        for (j, v) in data.row_entries(i) {
            write!(w, " {}:{:?}", j + 1, v)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parameters of a synthetic Gaussian classification problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GaussianSpec {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

impl GaussianSpec {
    pub fn new(n: usize, d: usize, seed: u64) -> Self {
        GaussianSpec { n, d, seed }
    }

    /// Target covariance: symmetric uniform(-1, 1) off-diagonals, shifted by
    /// `shift * I`, then rescaled to unit diagonal.
    pub fn covariance(&self) -> Matrix {
        self.covariance_with_shift(self.d as f64)
    }

    fn covariance_with_shift(&self, shift: f64) -> Matrix {
        let d = self.d;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0);
        let a = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let mut s = (&a + a.transpose()) * 0.5;
        for j in 0..d {
            s[(j, j)] = shift;
        }
        let diag: Vec<f64> = (0..d).map(|j| s[(j, j)].sqrt()).collect();
        Matrix::from_fn(d, d, |i, j| s[(i, j)] / (diag[i] * diag[j]))
    }
}

/// Draws `X ~ N(0, Sigma)` and labels `sign(x . w* + logistic noise)` with
/// `w* ~ N(0, I)`. Pure function of the spec.
pub fn generate_gaussian(spec: &GaussianSpec) -> Result<Dataset> {
    let GaussianSpec { n, d, seed } = *spec;
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("gaussian spec needs n, d >= 1".into()));
    }
    let mut shift = d as f64;
    let chol = loop {
        let cov = spec.covariance_with_shift(shift);
        match Cholesky::new(cov) {
            Some(c) => break c,
            None => {
                warn!("covariance with diagonal shift {shift} is not positive definite, retrying");
                shift *= 2.0;
            }
        }
    };
    let l = chol.l();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let w_star: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();

    let mut values = vec![0.0; n * d];
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0; d];
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        let row = &mut values[i * d..(i + 1) * d];
        for (r, out) in row.iter_mut().enumerate() {
            *out = (0..=r).map(|k| l[(r, k)] * z[k]).sum();
        }
        let margin: f64 = row.iter().zip(&w_star).map(|(a, b)| a * b).sum();
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let noise = (u / (1.0 - u)).ln();
        labels.push(if margin + noise >= 0.0 { 1.0 } else { -1.0 });
    }
    Dataset::from_dense(values, labels, d)
}

fn is_text_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("svm" | "libsvm" | "txt")
    )
}

/// Saves as libsvm text for `.svm`/`.libsvm`/`.txt`, the binary cache otherwise.
pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if is_text_path(path) {
        write_libsvm(data, &mut w)?;
    } else {
        write_binary(data, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset, choosing the format by extension like [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let r = BufReader::new(File::open(path)?);
    if is_text_path(path) {
        parse_libsvm(r, None)
    } else {
        read_binary(r)
    }
}

/// Binary layout (little endian): magic `SCRD`, `u32` version, `u8` storage
/// (0 dense, 1 sparse), `u64` n, `u64` d, n labels as `i8`, then either n*d
/// `f64` values or CSR arrays (`u64` nnz, n+1 `u64` offsets, nnz `u32`
/// indices, nnz `f64` values).
pub fn write_binary<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(u8::from(data.is_sparse()))?;
    w.write_u64::<LittleEndian>(data.n as u64)?;
    w.write_u64::<LittleEndian>(data.d as u64)?;
    for &y in &data.labels {
        w.write_i8(if y > 0.0 { 1 } else { -1 })?;
    }
    match &data.features {
        Features::Dense(v) => {
            for &x in v {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        Features::Sparse { indptr, indices, values } => {
            w.write_u64::<LittleEndian>(values.len() as u64)?;
            for &p in indptr {
                w.write_u64::<LittleEndian>(p as u64)?;
            }
            for &j in indices {
                w.write_u32::<LittleEndian>(j)?;
            }
            for &x in values {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
    }
    Ok(())
}

fn corrupt(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Corrupt("unexpected end of file".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(corrupt)?;
    if &magic != MAGIC {
        return Err(Error::Corrupt("bad magic bytes".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let sparse = match r.read_u8().map_err(corrupt)? {
        0 => false,
        1 => true,
        other => return Err(Error::Corrupt(format!("unknown storage tag {other}"))),
    };
    let n = r.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
    let d = r.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
    if n == 0 || d == 0 {
        return Err(Error::Corrupt(format!("invalid shape {n} x {d}")));
    }
    let mut labels = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        labels.push(match r.read_i8().map_err(corrupt)? {
            1 => 1.0,
            -1 => -1.0,
            other => return Err(Error::Corrupt(format!("invalid label byte {other}"))),
        });
    }
    let features = if sparse {
        let nnz = r.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
        let mut indptr = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            indptr.push(r.read_u64::<LittleEndian>().map_err(corrupt)? as usize);
        }
        let mut indices = Vec::with_capacity(nnz.min(1 << 26));
        for _ in 0..nnz {
            indices.push(r.read_u32::<LittleEndian>().map_err(corrupt)?);
        }
        let mut values = Vec::with_capacity(nnz.min(1 << 26));
        for _ in 0..nnz {
            values.push(r.read_f64::<LittleEndian>().map_err(corrupt)?);
        }
        if indptr[0] != 0 || indptr[n] != nnz || indptr.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Corrupt("inconsistent row offsets".into()));
        }
        if indices.iter().any(|&j| j as usize >= d) {
            return Err(Error::Corrupt("column index out of range".into()));
        }
        Features::Sparse { indptr, indices, values }
    } else {
        let mut values = Vec::with_capacity((n * d).min(1 << 26));
        for _ in 0..n * d {
            values.push(r.read_f64::<LittleEndian>().map_err(corrupt)?);
        }
        Features::Dense(values)
    };
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Corrupt("trailing bytes".into()));
    }
    Ok(Dataset { n, d, features, labels })
}
