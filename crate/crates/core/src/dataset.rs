//! Observation data model, CSV ingestion and residualization of exogenous covariates.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::orthonormal_basis;

/// Role of a CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Outcome,
    /// Endogenous covariate of interest (X).
    Endogenous,
    /// Endogenous nuisance covariate (W).
    EndogenousNuisance,
    Instrument,
    /// Exogenous nuisance covariate (C), partialled out.
    Exogenous,
    /// Exogenous covariate of interest (D).
    ExogenousOfInterest,
}

/// Linear IV data: `y = X beta + W gamma + C alpha + D delta + eps` with instruments `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct IvDataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Center all blocks (a constant is partialled out together with `c`).
    pub intercept: bool,
    /// Degrees of freedom already absorbed by residualization.
    pub absorbed: usize,
    pub x_names: Vec<String>,
    pub w_names: Vec<String>,
    pub d_names: Vec<String>,
}

fn check_rows(n: usize, m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != n {
        return Err(Error::Dimension(format!(
            "{what} has {} rows, expected {n}",
            m.nrows()
        )));
    }
    Ok(())
}

fn default_names(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|i| format!("{prefix}{}", i + 1)).collect()
}

impl IvDataset {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        w: DMatrix<f64>,
        z: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        check_rows(n, &x, "X")?;
        check_rows(n, &w, "W")?;
        check_rows(n, &z, "Z")?;
        Ok(Self {
            x_names: default_names("x", x.ncols()),
            w_names: default_names("w", w.ncols()),
            d_names: Vec::new(),
            y,
            x,
            w,
            z,
            c: DMatrix::zeros(n, 0),
            d: DMatrix::zeros(n, 0),
            intercept: false,
            absorbed: 0,
        })
    }

    pub fn with_exogenous(mut self, c: DMatrix<f64>) -> Result<Self> {
        check_rows(self.n(), &c, "C")?;
        self.c = c;
        Ok(self)
    }

    pub fn with_exogenous_of_interest(mut self, d: DMatrix<f64>) -> Result<Self> {
        check_rows(self.n(), &d, "D")?;
        self.d_names = default_names("d", d.ncols());
        self.d = d;
        Ok(self)
    }

    pub fn with_intercept(mut self, intercept: bool) -> Self {
        self.intercept = intercept;
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn k(&self) -> usize {
        self.z.ncols()
    }
    pub fn mx(&self) -> usize {
        self.x.ncols()
    }
    pub fn mw(&self) -> usize {
        self.w.ncols()
    }
    pub fn mc(&self) -> usize {
        self.c.ncols()
    }
    pub fn md(&self) -> usize {
        self.d.ncols()
    }
    pub fn m(&self) -> usize {
        self.mx() + self.mw()
    }

    /// `S = [X W]`.
    pub fn s(&self) -> DMatrix<f64> {
        hcat(&[&self.x, &self.w])
    }

    pub fn is_residualized(&self) -> bool {
        self.c.ncols() == 0 && !self.intercept
    }

    /// Replaces every block by its residual after projecting out `C`
    /// (and a constant when `intercept` is set).
    pub fn residualize(&self) -> IvDataset {
        let n = self.n();
        let mut cols = Vec::new();
        if self.intercept {
            cols.push(DMatrix::from_element(n, 1, 1.0));
        }
        if self.mc() > 0 {
            cols.push(self.c.clone());
        }
        if cols.is_empty() {
            return self.clone();
        }
        let refs: Vec<&DMatrix<f64>> = cols.iter().collect();
        let cfull = hcat(&refs);
        let proj = Projection::new(&cfull);
        if proj.rank() < cfull.ncols() {
            warn!(
                "exogenous block has rank {} < {} columns; using pseudo-inverse projection",
                proj.rank(),
                cfull.ncols()
            );
        }
        let yres = proj.annih(&DMatrix::from_column_slice(n, 1, self.y.as_slice()));
        IvDataset {
            y: yres.column(0).into_owned(),
            x: proj.annih(&self.x),
            w: proj.annih(&self.w),
            z: proj.annih(&self.z),
            c: DMatrix::zeros(n, 0),
            d: proj.annih(&self.d),
            intercept: false,
            absorbed: self.absorbed + proj.rank(),
            x_names: self.x_names.clone(),
            w_names: self.w_names.clone(),
            d_names: self.d_names.clone(),
        }
    }

    /// Residualized copy with `D` treated as a nuisance exogenous block.
    pub fn partial_out_all(&self) -> IvDataset {
        if self.md() == 0 {
            return self.residualize();
        }
        let mut c = self.clone();
        c.c = hcat(&[&self.c, &self.d]);
        c.d = DMatrix::zeros(self.n(), 0);
        c.d_names.clear();
        c.residualize()
    }

    /// Residualized copy with `D` appended to both `X` and `Z`.
    pub fn augment_exogenous_of_interest(&self) -> IvDataset {
        let r = self.residualize();
        let mut x_names = r.x_names.clone();
        x_names.extend(r.d_names.iter().cloned());
        IvDataset {
            x: hcat(&[&r.x, &r.d]),
            z: hcat(&[&r.z, &r.d]),
            d: DMatrix::zeros(r.n(), 0),
            x_names,
            d_names: Vec::new(),
            ..r
        }
    }

    /// Copy whose instruments are replaced by `Z G`.
    pub fn reparameterize_instruments(&self, g: &DMatrix<f64>) -> IvDataset {
        IvDataset {
            z: &self.z * g,
            ..self.clone()
        }
    }
}

/// Horizontal concatenation of blocks sharing a row count.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let k: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, k);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Orthogonal projector onto the column span of a basis matrix.
#[derive(Debug, Clone)]
pub struct Projection {
    q: DMatrix<f64>,
    rank: usize,
}

impl Projection {
    pub fn new(basis: &DMatrix<f64>) -> Self {
        let (q, rank) = orthonormal_basis(basis);
        Self { q, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Orthonormal basis of the spanned space.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Coordinates `Q' v` in the orthonormal basis.
    pub fn coords(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.q.transpose() * v
    }

    pub fn proj(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank == 0 {
            return DMatrix::zeros(v.nrows(), v.ncols());
        }
        &self.q * self.coords(v)
    }

    pub fn annih(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        v - self.proj(v)
    }
}

/// Projection of the columns of `v` onto the span of `basis`.
pub fn proj(basis: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_rows(basis.nrows(), v, "v")?;
    Ok(Projection::new(basis).proj(v))
}

/// `v - proj(basis, v)`.
pub fn annih(basis: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_rows(basis.nrows(), v, "v")?;
    Ok(Projection::new(basis).annih(v))
}

/// Result of CSV ingestion.
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub data: IvDataset,
    /// Rows dropped because a role column was empty.
    pub dropped_rows: usize,
}

/// Reads a comma-separated file with a header row and assigns columns to roles.
pub fn load_csv(path: &Path, roles: &[(String, Role)], intercept: bool) -> Result<CsvLoad> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, roles, intercept)
}

pub fn load_csv_reader<R: Read>(
    reader: R,
    roles: &[(String, Role)],
    intercept: bool,
) -> Result<CsvLoad> {
    let mut seen = HashSet::new();
    for (name, _) in roles {
        if !seen.insert(name.as_str()) {
            return Err(Error::Config(format!(
                "column `{name}` assigned more than one role"
            )));
        }
    }
    let count = |r: Role| roles.iter().filter(|(_, x)| *x == r).count();
    if count(Role::Outcome) != 1 {
        return Err(Error::Config("exactly one outcome column is required".into()));
    }
    if count(Role::Endogenous) + count(Role::EndogenousNuisance) == 0 {
        return Err(Error::Config("at least one endogenous column is required".into()));
    }
    if count(Role::Instrument) == 0 {
        return Err(Error::Config("at least one instrument column is required".into()));
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .delimiter(b',')
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = Vec::with_capacity(roles.len());
    for (name, role) in roles {
        let pos = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))?;
        index.push((pos, *role, name.clone()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut vals = Vec::with_capacity(index.len());
        let mut missing = false;
        for (pos, _, name) in &index {
            let cell = rec.get(*pos).unwrap_or("").trim();
            if cell.is_empty() {
                missing = true;
                break;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: name.clone(),
                value: cell.to_string(),
            })?;
            vals.push(v);
        }
        if missing {
            dropped += 1;
            continue;
        }
        rows.push(vals);
    }
    if dropped > 0 {
        warn!("dropped {dropped} rows with empty cells in role columns");
    }

    let n = rows.len();
    let block = |role: Role| -> (DMatrix<f64>, Vec<String>) {
        let cols: Vec<(usize, String)> = index
            .iter()
            .enumerate()
            .filter(|(_, (_, r, _))| *r == role)
            .map(|(j, (_, _, name))| (j, name.clone()))
            .collect();
        let m = DMatrix::from_fn(n, cols.len(), |i, c| rows[i][cols[c].0]);
        (m, cols.into_iter().map(|c| c.1).collect())
    };
    let (ym, _) = block(Role::Outcome);
    let (x, x_names) = block(Role::Endogenous);
    let (w, w_names) = block(Role::EndogenousNuisance);
    let (z, _) = block(Role::Instrument);
    let (c, _) = block(Role::Exogenous);
    let (d, d_names) = block(Role::ExogenousOfInterest);
    let data = IvDataset {
        y: ym.column(0).into_owned(),
        x,
        w,
        z,
        c,
        d,
        intercept,
        absorbed: 0,
        x_names,
        w_names,
        d_names,
    };
    Ok(CsvLoad {
        data,
        dropped_rows: dropped,
    })
}
