//! Problem files on disk.
//!
//! Matrices are dense Matrix Market `array real general` files (column-major,
//! 17 significant digits). A JSON descriptor names the matrix files by path
//! relative to the descriptor's directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::CandidatePool;
use crate::error::{OedError, Result};
use crate::gaussian::{GaussianMeasure, SpdMatrix};
use crate::inverse::{BayesLinearProblem, ForwardModel};

const MM_HEADER: &str = "%%MatrixMarket matrix array real general";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OedError + '_ {
    move |source| OedError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> OedError {
    OedError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a dense Matrix Market array file.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let fields: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(parse_err(path, 1, "missing %%MatrixMarket matrix header"));
    }
    if fields[2] != "array" {
        return Err(parse_err(path, 1, format!("unsupported format '{}', expected 'array'", fields[2])));
    }
    if fields[3] != "real" && fields[3] != "double" && fields[3] != "integer" {
        return Err(parse_err(path, 1, format!("unsupported field '{}'", fields[3])));
    }
    if fields[4] != "general" {
        return Err(parse_err(path, 1, format!("unsupported symmetry '{}'", fields[4])));
    }

    let mut data = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (size_line, size) = data
        .next()
        .ok_or_else(|| parse_err(path, 2, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(path, size_line, format!("bad size line: {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(parse_err(path, size_line, "size line must hold 'rows cols'"));
    };

    let mut values = Vec::with_capacity(rows * cols);
    let mut last_line = size_line;
    for (line, l) in data {
        last_line = line;
        for tok in l.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, line, format!("'{tok}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value '{tok}'")));
            }
            values.push(v);
        }
    }
    if values.len() != rows * cols {
        return Err(parse_err(
            path,
            last_line,
            format!("expected {} values for {rows}x{cols}, found {}", rows * cols, values.len()),
        ));
    }
    Ok(DMatrix::from_vec(rows, cols, values))
}

/// Writes `m` as a dense Matrix Market array, column-major, 17 significant digits.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::with_capacity(32 * m.len() + 64);
    out.push_str(MM_HEADER);
    out.push('\n');
    out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for v in m.iter() {
        out.push_str(&format!("{v:.16e}\n"));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// JSON descriptor of a problem or candidate pool. Exactly one of `noise_cov`
/// (full q×q covariance) or `noise_variances` (q×1, independent noise) is set;
/// only the latter can be used as a candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDescriptor {
    pub name: String,
    pub n: usize,
    pub q: usize,
    pub forward: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_cov: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variances: Option<PathBuf>,
    pub prior_cov: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_mean: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

/// A validated problem read from disk.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub descriptor: ProblemDescriptor,
    pub problem: BayesLinearProblem,
    /// Present when the descriptor lists independent noise variances.
    pub pool: Option<CandidatePool>,
}

pub fn read_descriptor(path: &Path) -> Result<ProblemDescriptor> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

fn validation(path: &Path, message: impl Into<String>) -> OedError {
    OedError::Validation {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn expect_shape(path: &Path, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(validation(
            path,
            format!("expected a {rows}x{cols} matrix, found {}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn spd_from_file(path: &Path, dim: usize) -> Result<SpdMatrix> {
    let m = read_matrix(path)?;
    expect_shape(path, &m, dim, dim)?;
    SpdMatrix::new(m).map_err(|e| e.at_path(path))
}

/// Loads and validates the problem referenced by the descriptor at `path`.
pub fn load_problem(path: &Path) -> Result<LoadedProblem> {
    let desc = read_descriptor(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let (n, q) = (desc.n, desc.q);
    if n == 0 || q == 0 {
        return Err(validation(path, "dimensions n and q must be at least 1"));
    }

    let f_path = base.join(&desc.forward);
    let f = read_matrix(&f_path)?;
    expect_shape(&f_path, &f, q, n)?;
    let forward = ForwardModel::new(f).map_err(|e| e.at_path(&f_path))?;

    let prior_path = base.join(&desc.prior_cov);
    let prior_cov = spd_from_file(&prior_path, n)?;
    let prior_mean = match &desc.prior_mean {
        Some(rel) => {
            let p = base.join(rel);
            let m = read_matrix(&p)?;
            expect_shape(&p, &m, n, 1)?;
            m.column(0).into_owned()
        }
        None => DVector::zeros(n),
    };
    let prior = GaussianMeasure::new(prior_mean, prior_cov).map_err(|e| e.at_path(&prior_path))?;

    if let Some(labels) = &desc.labels {
        if labels.len() != q {
            return Err(validation(
                path,
                format!("{} labels for {q} observations", labels.len()),
            ));
        }
    }

    let (noise_cov, variances) = match (&desc.noise_cov, &desc.noise_variances) {
        (Some(rel), None) => (spd_from_file(&base.join(rel), q)?, None),
        (None, Some(rel)) => {
            let p = base.join(rel);
            let m = read_matrix(&p)?;
            expect_shape(&p, &m, q, 1)?;
            let v: Vec<f64> = m.iter().copied().collect();
            if let Some(i) = v.iter().position(|&x| !(x > 0.0)) {
                return Err(validation(
                    &p,
                    format!("noise variance in row {} must be positive, got {}", i + 1, v[i]),
                ));
            }
            (SpdMatrix::from_diagonal(&v).map_err(|e| e.at_path(&p))?, Some(v))
        }
        _ => {
            return Err(validation(
                path,
                "exactly one of 'noise_cov' or 'noise_variances' must be given",
            ))
        }
    };

    let pool = variances
        .map(|v| {
            CandidatePool::new(
                forward.matrix().clone(),
                v,
                prior.clone(),
                desc.labels.clone(),
            )
        })
        .transpose()
        .map_err(|e| e.at_path(path))?;
    let problem = BayesLinearProblem::new(forward, noise_cov, prior).map_err(|e| e.at_path(path))?;
    Ok(LoadedProblem {
        descriptor: desc,
        problem,
        pool,
    })
}

/// Loads a descriptor that must describe a candidate pool.
pub fn load_pool(path: &Path) -> Result<(ProblemDescriptor, CandidatePool)> {
    let loaded = load_problem(path)?;
    match loaded.pool {
        Some(pool) => Ok((loaded.descriptor, pool)),
        None => Err(validation(
            path,
            "a candidate pool needs 'noise_variances' (independent noise per candidate)",
        )),
    }
}

fn write_descriptor(dir: &Path, desc: &ProblemDescriptor) -> Result<PathBuf> {
    let path = dir.join(format!("{}.json", desc.name));
    let text = serde_json::to_string_pretty(desc).expect("descriptor serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes a candidate pool (matrices plus descriptor) into `dir`; returns the
/// descriptor path.
pub fn save_pool(dir: &Path, name: &str, pool: &CandidatePool) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let file = |suffix: &str| PathBuf::from(format!("{name}_{suffix}.mtx"));
    let desc = ProblemDescriptor {
        name: name.to_string(),
        n: pool.n(),
        q: pool.len(),
        forward: file("forward"),
        noise_cov: None,
        noise_variances: Some(file("noise_variances")),
        prior_cov: file("prior_cov"),
        prior_mean: Some(file("prior_mean")),
        labels: pool.labels().map(<[String]>::to_vec),
    };
    write_matrix(&dir.join(&desc.forward), pool.rows())?;
    write_matrix(
        &dir.join(desc.noise_variances.as_ref().unwrap()),
        &DMatrix::from_column_slice(pool.len(), 1, pool.noise_variances()),
    )?;
    write_matrix(&dir.join(&desc.prior_cov), pool.prior().cov().matrix())?;
    write_matrix(
        &dir.join(desc.prior_mean.as_ref().unwrap()),
        &DMatrix::from_column_slice(pool.n(), 1, pool.prior().mean().as_slice()),
    )?;
    write_descriptor(dir, &desc)
}

/// Writes a problem with a full noise covariance into `dir`.
pub fn save_problem(dir: &Path, name: &str, p: &BayesLinearProblem) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let file = |suffix: &str| PathBuf::from(format!("{name}_{suffix}.mtx"));
    let desc = ProblemDescriptor {
        name: name.to_string(),
        n: p.n(),
        q: p.q(),
        forward: file("forward"),
        noise_cov: Some(file("noise_cov")),
        noise_variances: None,
        prior_cov: file("prior_cov"),
        prior_mean: Some(file("prior_mean")),
        labels: None,
    };
    write_matrix(&dir.join(&desc.forward), p.forward().matrix())?;
    write_matrix(&dir.join(desc.noise_cov.as_ref().unwrap()), p.noise_cov().matrix())?;
    write_matrix(&dir.join(&desc.prior_cov), p.prior().cov().matrix())?;
    write_matrix(
        &dir.join(desc.prior_mean.as_ref().unwrap()),
        &DMatrix::from_column_slice(p.n(), 1, p.prior().mean().as_slice()),
    )?;
    write_descriptor(dir, &desc)
}
