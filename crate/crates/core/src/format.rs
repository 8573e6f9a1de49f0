//! Plain-text tensor files.
//!
//! ```text
//! dense <d>            cp <d> <r>                 tucker <d>
//! n_1 … n_d            n_1 … n_d                  n_1 … n_d
//! values…              weights                    t_1 … t_d
//!                      B_1 row-major … B_d        core values…
//!                                                 B_1 row-major … B_d
//! ```
//!
//! Tokens are whitespace separated; values are written in shortest
//! round-trip form so a write/read cycle is exact. Rank-one points
//! (initial guesses, solver output) use `cp <d> 1` with the product of the
//! factor norms as weight.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::tensor::{cp_to_dense, tucker_to_dense, CpTensor, DenseTensor, RankOneRep, TuckerTensor};

#[derive(Debug, Clone, PartialEq)]
pub enum TensorFile {
    Dense(DenseTensor),
    Cp(CpTensor),
    Tucker(TuckerTensor),
}

impl TensorFile {
    pub fn to_dense(&self) -> DenseTensor {
        match self {
            TensorFile::Dense(t) => t.clone(),
            TensorFile::Cp(t) => cp_to_dense(t),
            TensorFile::Tucker(t) => tucker_to_dense(t),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TensorFile::Dense(_) => "dense",
            TensorFile::Cp(_) => "cp",
            TensorFile::Tucker(_) => "tucker",
        }
    }
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        let last_line = text.lines().count().max(1);
        Tokens {
            items,
            pos: 0,
            last_line,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let tok = self.items.get(self.pos).copied().ok_or_else(|| Error::Parse {
            line: self.last_line,
            msg: format!("unexpected end of input, expected {what}"),
        })?;
        self.pos += 1;
        Ok(tok)
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let (line, t) = self.next(what)?;
        t.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what} (non-negative integer), found `{t}`"),
        })
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let (line, t) = self.next(what)?;
        let v: f64 = t.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what} (number), found `{t}`"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("{what} must be finite, found `{t}`"),
            });
        }
        Ok(v)
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos.saturating_sub(1))
            .map_or(1, |t| t.0)
    }

    fn finish(&self) -> Result<()> {
        if let Some(&(line, t)) = self.items.get(self.pos) {
            return Err(Error::Parse {
                line,
                msg: format!("trailing token `{t}`"),
            });
        }
        Ok(())
    }
}

fn at_line(line: usize, e: Error) -> Error {
    match e {
        Error::Parse { .. } => e,
        other => Error::Parse {
            line,
            msg: other.to_string(),
        },
    }
}

fn read_dims(tok: &mut Tokens, d: usize, what: &str) -> Result<Vec<usize>> {
    (0..d).map(|_| tok.usize(what)).collect()
}

fn read_matrices(tok: &mut Tokens, rows: &[usize], cols: &[usize]) -> Result<Vec<Matrix>> {
    rows.iter()
        .zip(cols)
        .enumerate()
        .map(|(m, (&n, &c))| {
            let data = tok.floats(n * c, &format!("entry of factor matrix {}", m + 1))?;
            Matrix::from_row_major(n, c, data)
        })
        .collect()
}

pub fn parse_tensor(text: &str) -> Result<TensorFile> {
    let mut tok = Tokens::new(text);
    let (line, kind) = tok.next("format keyword")?;
    let d = tok.usize("order d")?;
    if d < 2 {
        return Err(Error::Parse {
            line,
            msg: format!("order must be at least 2, got {d}"),
        });
    }
    let parsed = match kind {
        "dense" => {
            let dims = read_dims(&mut tok, d, "mode size")?;
            let len = dims.iter().product();
            let values = tok.floats(len, "tensor entry")?;
            TensorFile::Dense(DenseTensor::new(dims, values).map_err(|e| at_line(tok.line(), e))?)
        }
        "cp" => {
            let r = tok.usize("rank r")?;
            if r == 0 {
                return Err(Error::Parse {
                    line,
                    msg: "rank must be at least 1".into(),
                });
            }
            let dims = read_dims(&mut tok, d, "mode size")?;
            let weights = tok.floats(r, "weight")?;
            let factors = read_matrices(&mut tok, &dims, &vec![r; d])?;
            let end = tok.line();
            let orthonormal = factors.iter().all(|f| {
                f.transpose().matmul(f).max_abs_diff(&Matrix::identity(r)) <= 1e-12
            });
            TensorFile::Cp(CpTensor::new(weights, factors, orthonormal).map_err(|e| at_line(end, e))?)
        }
        "tucker" => {
            let dims = read_dims(&mut tok, d, "mode size")?;
            let ranks = read_dims(&mut tok, d, "core size")?;
            let len = ranks.iter().product();
            let core_vals = tok.floats(len, "core entry")?;
            let core_line = tok.line();
            let core = DenseTensor::new(ranks.clone(), core_vals).map_err(|e| at_line(core_line, e))?;
            let factors = read_matrices(&mut tok, &dims, &ranks)?;
            let end = tok.line();
            TensorFile::Tucker(TuckerTensor::new(core, factors).map_err(|e| at_line(end, e))?)
        }
        other => {
            return Err(Error::Parse {
                line,
                msg: format!("unknown format `{other}`, expected dense, cp or tucker"),
            })
        }
    };
    tok.finish()?;
    Ok(parsed)
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn push_row(out: &mut String, vals: impl IntoIterator<Item = f64>) {
    let row: Vec<String> = vals.into_iter().map(fmt_f64).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

fn push_dims(out: &mut String, dims: &[usize]) {
    let row: Vec<String> = dims.iter().map(usize::to_string).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

fn push_values(out: &mut String, dims: &[usize], values: &[f64]) {
    let width = *dims.last().expect("order ≥ 2");
    for chunk in values.chunks(width) {
        push_row(out, chunk.iter().copied());
    }
}

fn push_matrix(out: &mut String, m: &Matrix) {
    for i in 0..m.rows() {
        push_row(out, (0..m.cols()).map(|j| m[(i, j)]));
    }
}

pub fn write_dense(t: &DenseTensor) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "dense {}", t.order());
    push_dims(&mut out, t.dims());
    push_values(&mut out, t.dims(), t.values());
    out
}

pub fn write_cp(t: &CpTensor) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "cp {} {}", t.order(), t.rank());
    push_dims(&mut out, &t.dims());
    push_row(&mut out, t.weights().iter().copied());
    for f in t.factors() {
        push_matrix(&mut out, f);
    }
    out
}

pub fn write_tucker(t: &TuckerTensor) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tucker {}", t.order());
    push_dims(&mut out, &t.dims());
    push_dims(&mut out, t.core().dims());
    push_values(&mut out, t.core().dims(), t.core().values());
    for f in t.factors() {
        push_matrix(&mut out, f);
    }
    out
}

pub fn write_tensor(t: &TensorFile) -> String {
    match t {
        TensorFile::Dense(t) => write_dense(t),
        TensorFile::Cp(t) => write_cp(t),
        TensorFile::Tucker(t) => write_tucker(t),
    }
}

/// A rank-one point as a one-term CP file.
pub fn write_point(p: &RankOneRep) -> String {
    let units: Vec<Vec<f64>> = p
        .factors()
        .iter()
        .map(|f| linalg::normalized(f).expect("factors are nonzero"))
        .collect();
    let factors = units.iter().map(|u| Matrix::from_columns(std::slice::from_ref(u)).expect("one column")).collect();
    let cp = CpTensor::new(vec![p.tensor_norm()], factors, true).expect("unit columns");
    write_cp(&cp)
}

/// Reads a rank-one point stored as a one-term CP file; the weight is
/// folded into the first factor.
pub fn parse_point(text: &str) -> Result<RankOneRep> {
    match parse_tensor(text)? {
        TensorFile::Cp(cp) if cp.rank() == 1 => Ok(cp.term(0)),
        TensorFile::Cp(cp) => Err(Error::Parse {
            line: 1,
            msg: format!("a point must have rank 1, file has rank {}", cp.rank()),
        }),
        other => Err(Error::Parse {
            line: 1,
            msg: format!("a point must be stored as `cp <d> 1`, found `{}`", other.kind()),
        }),
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))
}

pub fn read_tensor_file(path: &Path) -> Result<TensorFile> {
    parse_tensor(&read_file(path)?).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn read_point_file(path: &Path) -> Result<RankOneRep> {
    parse_point(&read_file(path)?).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}
