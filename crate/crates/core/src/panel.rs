//! Balanced-panel data model, long-format CSV ingestion and the two-way
//! demeaning primitives used throughout the estimators.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::ops::Range;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DesignError, OlsDesign};

/// Outcome and treatment matrices (`n` units by `T` periods) with labels.
///
/// Time labels are stored in time order; the loader sorts them.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedPanel {
    y: DMatrix<f64>,
    w: DMatrix<f64>,
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
}

impl BalancedPanel {
    pub fn new(
        y: DMatrix<f64>,
        w: DMatrix<f64>,
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
    ) -> Result<Self> {
        if y.shape() != w.shape() {
            return Err(Error::InvalidInput(format!(
                "outcome is {:?} but treatment is {:?}",
                y.shape(),
                w.shape()
            )));
        }
        let (n, t) = y.shape();
        if n < 2 || t < 2 {
            return Err(Error::InvalidInput(format!(
                "panel needs at least 2 units and 2 periods, got {n}x{t}"
            )));
        }
        if unit_ids.len() != n || time_ids.len() != t {
            return Err(Error::InvalidInput("label count does not match matrix shape".into()));
        }
        ensure_unique(&unit_ids, "unit")?;
        ensure_unique(&time_ids, "time")?;
        ensure_finite(&y, "outcome matrix")?;
        ensure_finite(&w, "treatment matrix")?;
        Ok(Self { y, w, unit_ids, time_ids })
    }

    /// Panel with labels `1..=n` and `1..=T`.
    pub fn from_matrices(y: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let unit_ids = (1..=y.nrows()).map(|i| i.to_string()).collect();
        let time_ids = (1..=y.ncols()).map(|t| t.to_string()).collect();
        Self::new(y, w, unit_ids, time_ids)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn t(&self) -> usize {
        self.y.ncols()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    /// Apply `f` to both matrices, keeping labels.
    pub fn map_matrices(
        &self,
        f: impl Fn(&DMatrix<f64>, Which) -> DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(
            f(&self.y, Which::Outcome),
            f(&self.w, Which::Treatment),
            self.unit_ids.clone(),
            self.time_ids.clone(),
        )
    }

    /// Reorder units by `perm` (new row `k` is old row `perm[k]`).
    pub fn permute_units(&self, perm: &[usize]) -> Result<Self> {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, t| m[(perm[i], t)]);
        Self::new(
            pick(&self.y),
            pick(&self.w),
            perm.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            self.time_ids.clone(),
        )
    }
}

/// Selector used by [`BalancedPanel::map_matrices`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Outcome,
    Treatment,
}

/// Instrument series and deterministic regressors; the first column of
/// `psi` is the constant.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateData {
    z: DVector<f64>,
    psi: DMatrix<f64>,
}

impl AggregateData {
    pub fn new(z: DVector<f64>, psi: DMatrix<f64>) -> Result<Self> {
        if psi.nrows() != z.len() {
            return Err(Error::InvalidInput(format!(
                "instrument has {} periods but psi has {} rows",
                z.len(),
                psi.nrows()
            )));
        }
        if psi.ncols() == 0 || psi.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::RankDeficientPsi(
                "first column of psi must be identically one".into(),
            ));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { context: "instrument series".into() });
        }
        ensure_finite(&psi, "psi matrix")?;
        match OlsDesign::new(psi.clone()) {
            Ok(_) => {}
            Err(DesignError::Underdetermined { rows, cols }) => {
                return Err(Error::RankDeficientPsi(format!(
                    "{cols} regressors for {rows} periods"
                )))
            }
            Err(DesignError::RankDeficient { condition }) => {
                return Err(Error::RankDeficientPsi(format!("condition number {condition:e}")))
            }
        }
        Ok(Self { z, psi })
    }

    /// Constant-only deterministic regressors.
    pub fn constant_mean(z: DVector<f64>) -> Result<Self> {
        let t = z.len();
        Self::new(z, DMatrix::from_element(t, 1, 1.0))
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn t(&self) -> usize {
        self.z.len()
    }

    /// Number of deterministic regressors including the constant.
    pub fn p(&self) -> usize {
        self.psi.ncols()
    }

    pub fn with_psi(&self, psi: DMatrix<f64>) -> Result<Self> {
        Self::new(self.z.clone(), psi)
    }
}

/// Unit exposures `D_i`.
///
/// Constant exposures are representable; the estimators that need
/// variation in `D` reject them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureVector(pub DVector<f64>);

impl ExposureVector {
    pub fn new(d: DVector<f64>) -> Result<Self> {
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { context: "exposure vector".into() });
        }
        Ok(Self(d))
    }

    pub fn from_slice(d: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(d))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }

    /// Population (1/n) variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.0.iter().map(|d| (d - m).powi(2)).sum::<f64>() / self.0.len() as f64
    }

    /// True when the variance is zero up to rounding.
    pub fn is_degenerate(&self) -> bool {
        let scale = self.0.iter().map(|d| d * d).sum::<f64>() / self.0.len().max(1) as f64;
        !(self.variance() > 1e-24 * scale.max(f64::MIN_POSITIVE))
    }

    /// `(D_i - mean(D)) / var(D)`: the weights implicit in two-way FE TSLS.
    pub fn tsls_weights(&self) -> DVector<f64> {
        let m = self.mean();
        let v = self.variance();
        self.0.map(|d| (d - m) / v)
    }
}

/// Pre/post split of the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSplit {
    t0: usize,
    t1: usize,
}

impl SampleSplit {
    /// Both halves need at least `p + 2` periods.
    pub fn new(t0: usize, t: usize, p: usize) -> Result<Self> {
        if t0 >= t {
            return Err(Error::InvalidInput(format!("T0 = {t0} leaves no post-periods (T = {t})")));
        }
        let t1 = t - t0;
        if t0 < p + 2 || t1 < p + 2 {
            return Err(Error::InvalidInput(format!(
                "split T0 = {t0}, T1 = {t1} needs at least p + 2 = {} periods on each side",
                p + 2
            )));
        }
        Ok(Self { t0, t1 })
    }

    /// Default split `floor(T / 3)`.
    pub fn default_for(t: usize, p: usize) -> Result<Self> {
        Self::new(default_t0(t), t, p)
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn t1(&self) -> usize {
        self.t1
    }

    pub fn t(&self) -> usize {
        self.t0 + self.t1
    }

    pub fn pre(&self) -> Range<usize> {
        0..self.t0
    }

    pub fn post(&self) -> Range<usize> {
        self.t0..self.t()
    }
}

/// Recommended number of pre-periods: a third of the sample, rounded down.
pub fn default_t0(t: usize) -> usize {
    t / 3
}

/// A contiguous range of periods cut from a panel and its aggregates.
#[derive(Debug, Clone)]
pub struct PeriodBlock {
    pub y: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub z: DVector<f64>,
    pub psi: DMatrix<f64>,
    /// Index of the first period of the block in the full panel.
    pub offset: usize,
}

impl PeriodBlock {
    pub fn cut(panel: &BalancedPanel, agg: &AggregateData, range: Range<usize>) -> Self {
        let len = range.len();
        let start = range.start;
        Self {
            y: panel.y().columns(start, len).into_owned(),
            w: panel.w().columns(start, len).into_owned(),
            z: agg.z().rows(start, len).into_owned(),
            psi: agg.psi().rows(start, len).into_owned(),
            offset: start,
        }
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `M_it - mean_t(M_i.) - mean_i(M_.t) + mean(M)`.
pub fn demean_two_way(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = m.shape();
    let row_means: Vec<f64> = (0..n).map(|i| m.row(i).mean()).collect();
    let col_means: Vec<f64> = (0..t).map(|j| m.column(j).mean()).collect();
    let grand = m.mean();
    DMatrix::from_fn(n, t, |i, j| m[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Mean square of the two-way demeaned matrix.
pub fn scaling_factor(m: &DMatrix<f64>) -> f64 {
    let d = demean_two_way(m);
    d.iter().map(|v| v * v).sum::<f64>() / (m.nrows() * m.ncols()) as f64
}

fn is_numerically_zero_scale(sigma2: f64, m: &DMatrix<f64>) -> bool {
    let raw = m.iter().map(|v| v * v).sum::<f64>() / (m.nrows() * m.ncols()) as f64;
    let tol = (64.0 * f64::EPSILON).powi(2) * raw;
    !(sigma2 > tol)
}

/// Scaling factors of outcome and treatment over the pre-period block.
pub fn scaling_factors_block(y_pre: &DMatrix<f64>, w_pre: &DMatrix<f64>) -> Result<(f64, f64)> {
    let sy = scaling_factor(y_pre);
    let sw = scaling_factor(w_pre);
    if is_numerically_zero_scale(sy, y_pre) {
        return Err(Error::DegenerateScale(
            "pre-period outcome is exactly two-way additive".into(),
        ));
    }
    if is_numerically_zero_scale(sw, w_pre) {
        return Err(Error::DegenerateScale(
            "pre-period treatment is exactly two-way additive".into(),
        ));
    }
    Ok((sy, sw))
}

/// `(sigma2_Y, sigma2_W)` computed on periods `t <= T0`.
pub fn scaling_factors(panel: &BalancedPanel, split: &SampleSplit) -> Result<(f64, f64)> {
    let y = panel.y().columns(0, split.t0()).into_owned();
    let w = panel.w().columns(0, split.t0()).into_owned();
    scaling_factors_block(&y, &w)
}

// ---------------------------------------------------------------------------
// Long-format ingestion

/// One row of the long table.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRecord {
    pub unit: String,
    pub time: String,
    pub y: f64,
    pub w: f64,
    pub z: f64,
    pub d: Option<f64>,
    pub psi: Vec<f64>,
}

/// Result of [`load_panel`].
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: BalancedPanel,
    pub aggregate: AggregateData,
    pub exposure: Option<ExposureVector>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum TimeKey {
    Int(i64),
    Date(NaiveDate),
}

fn time_keys(labels: &[String]) -> Result<Vec<TimeKey>> {
    if let Ok(v) = labels.iter().map(|s| s.trim().parse::<i64>()).collect::<std::result::Result<Vec<_>, _>>() {
        return Ok(v.into_iter().map(TimeKey::Int).collect());
    }
    labels
        .iter()
        .map(|s| {
            NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                .map(TimeKey::Date)
                .map_err(|_| Error::InvalidInput(format!("time label `{s}` is neither an integer nor an ISO date")))
        })
        .collect()
}

fn sort_units(labels: &mut [String]) {
    let numeric: Option<Vec<i64>> = labels.iter().map(|s| s.trim().parse::<i64>().ok()).collect();
    if numeric.is_some() {
        labels.sort_by_key(|s| s.trim().parse::<i64>().unwrap_or_default());
    } else {
        labels.sort();
    }
}

/// Assemble matrices from a record stream.
///
/// Units and periods are sorted (numerically when every label is an
/// integer, chronologically for ISO dates); the constant regressor is
/// prepended unless one of the supplied `psi` columns is identically one.
pub fn load_panel<I>(records: I) -> Result<LoadedPanel>
where
    I: IntoIterator<Item = PanelRecord>,
{
    let records: Vec<PanelRecord> = records.into_iter().collect();
    if records.is_empty() {
        return Err(Error::InvalidInput("empty record stream".into()));
    }
    let n_psi = records[0].psi.len();
    let has_d = records[0].d.is_some();

    let mut units: Vec<String> = Vec::new();
    let mut times: Vec<String> = Vec::new();
    {
        let mut seen_u = HashMap::new();
        let mut seen_t = HashMap::new();
        for r in &records {
            if r.psi.len() != n_psi || r.d.is_some() != has_d {
                return Err(Error::InvalidInput("records disagree on column layout".into()));
            }
            for (v, what) in [(r.y, "y"), (r.w, "w"), (r.z, "z")] {
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue {
                        context: format!("column {what} at (unit {}, time {})", r.unit, r.time),
                    });
                }
            }
            if r.d.is_some_and(|v| !v.is_finite()) || r.psi.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    context: format!("aggregate columns at (unit {}, time {})", r.unit, r.time),
                });
            }
            if seen_u.insert(r.unit.clone(), ()).is_none() {
                units.push(r.unit.clone());
            }
            if seen_t.insert(r.time.clone(), ()).is_none() {
                times.push(r.time.clone());
            }
        }
    }
    sort_units(&mut units);
    let keys = time_keys(&times)?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    for pair in order.windows(2) {
        if keys[pair[0]] == keys[pair[1]] {
            return Err(Error::InvalidInput(format!(
                "time labels `{}` and `{}` denote the same period",
                times[pair[0]], times[pair[1]]
            )));
        }
    }
    let times: Vec<String> = order.iter().map(|&k| times[k].clone()).collect();

    let unit_index: HashMap<&str, usize> = units.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let time_index: HashMap<&str, usize> = times.iter().enumerate().map(|(t, s)| (s.as_str(), t)).collect();
    let (n, t) = (units.len(), times.len());

    let mut y = DMatrix::from_element(n, t, f64::NAN);
    let mut w = DMatrix::from_element(n, t, f64::NAN);
    let mut filled = vec![false; n * t];
    let mut z: Vec<Option<f64>> = vec![None; t];
    let mut psi: Vec<Option<Vec<f64>>> = vec![None; t];
    let mut d: Vec<Option<f64>> = vec![None; n];

    for r in &records {
        let i = unit_index[r.unit.as_str()];
        let s = time_index[r.time.as_str()];
        if std::mem::replace(&mut filled[i * t + s], true) {
            return Err(Error::DuplicateCell { unit: r.unit.clone(), time: r.time.clone() });
        }
        y[(i, s)] = r.y;
        w[(i, s)] = r.w;
        match z[s] {
            None => z[s] = Some(r.z),
            Some(prev) if prev != r.z => {
                return Err(Error::InconsistentAggregate { column: "z".into(), key: format!("time {}", r.time) })
            }
            _ => {}
        }
        match &psi[s] {
            None => psi[s] = Some(r.psi.clone()),
            Some(prev) if *prev != r.psi => {
                return Err(Error::InconsistentAggregate { column: "psi".into(), key: format!("time {}", r.time) })
            }
            _ => {}
        }
        if let Some(dv) = r.d {
            match d[i] {
                None => d[i] = Some(dv),
                Some(prev) if prev != dv => {
                    return Err(Error::InconsistentAggregate { column: "d".into(), key: format!("unit {}", r.unit) })
                }
                _ => {}
            }
        }
    }
    for i in 0..n {
        for s in 0..t {
            if !filled[i * t + s] {
                return Err(Error::UnbalancedPanel { unit: units[i].clone(), time: times[s].clone() });
            }
        }
    }

    let z = DVector::from_iterator(t, z.into_iter().map(|v| v.expect("every period has a row")));
    let extra = DMatrix::from_fn(t, n_psi, |s, k| psi[s].as_ref().expect("every period has a row")[k]);
    let psi = with_constant_first(extra);

    let panel = BalancedPanel::new(y, w, units, times)?;
    let aggregate = AggregateData::new(z, psi)?;
    let exposure = if has_d {
        Some(ExposureVector::new(DVector::from_iterator(n, d.into_iter().map(|v| v.expect("d present"))))?)
    } else {
        None
    };
    Ok(LoadedPanel { panel, aggregate, exposure })
}

fn with_constant_first(extra: DMatrix<f64>) -> DMatrix<f64> {
    let t = extra.nrows();
    let constant = (0..extra.ncols()).find(|&k| extra.column(k).iter().all(|&v| v == 1.0));
    let mut cols: Vec<DVector<f64>> = vec![DVector::from_element(t, 1.0)];
    for k in 0..extra.ncols() {
        if Some(k) != constant {
            cols.push(extra.column(k).into_owned());
        }
    }
    DMatrix::from_columns(&cols)
}

/// Parse the long CSV layout `unit,time,y,w,z[,d][,psi_2..psi_p]`.
///
/// Columns are matched by header name; any header starting with `psi_`
/// is a deterministic regressor, kept in header order.
pub fn read_panel_csv<R: Read>(reader: R) -> Result<LoadedPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let req = |name: &str| {
        find(name).ok_or_else(|| Error::InvalidInput(format!("missing required column `{name}`")))
    };
    let (cu, ct, cy, cw, cz) = (req("unit")?, req("time")?, req("y")?, req("w")?, req("z")?);
    let cd = find("d");
    let cpsi: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("psi_"))
        .map(|(k, _)| k)
        .collect();

    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let unit = row.get(cu).unwrap_or("").to_string();
        let time = row.get(ct).unwrap_or("").to_string();
        let num = |col: usize| -> Result<f64> {
            let raw = row.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::NonFiniteValue {
                context: format!("row {} column `{}` (value `{raw}`)", line + 2, &headers[col]),
            })
        };
        records.push(PanelRecord {
            y: num(cy)?,
            w: num(cw)?,
            z: num(cz)?,
            d: cd.map(num).transpose()?,
            psi: cpsi.iter().map(|&c| num(c)).collect::<Result<_>>()?,
            unit,
            time,
        });
    }
    load_panel(records)
}

/// Write the long CSV layout; floats use the shortest round-trip representation.
pub fn write_panel_csv<W: Write>(
    writer: W,
    panel: &BalancedPanel,
    agg: &AggregateData,
    exposure: Option<&ExposureVector>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["unit", "time", "y", "w", "z"].iter().map(|s| s.to_string()).collect();
    if exposure.is_some() {
        header.push("d".into());
    }
    for k in 1..agg.p() {
        header.push(format!("psi_{}", k + 1));
    }
    wtr.write_record(&header)?;
    for i in 0..panel.n() {
        for s in 0..panel.t() {
            let mut rec = vec![
                panel.unit_ids()[i].clone(),
                panel.time_ids()[s].clone(),
                panel.y()[(i, s)].to_string(),
                panel.w()[(i, s)].to_string(),
                agg.z()[s].to_string(),
            ];
            if let Some(d) = exposure {
                rec.push(d.values()[i].to_string());
            }
            for k in 1..agg.p() {
                rec.push(agg.psi()[(s, k)].to_string());
            }
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// JSON metadata describing a loaded panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMetadata {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub p: usize,
    pub unit_ids: Vec<String>,
    pub time_ids: Vec<String>,
}

impl PanelMetadata {
    pub fn describe(panel: &BalancedPanel, agg: &AggregateData) -> Self {
        Self {
            n: panel.n(),
            t: panel.t(),
            p: agg.p(),
            unit_ids: panel.unit_ids().to_vec(),
            time_ids: panel.time_ids().to_vec(),
        }
    }
}

fn ensure_unique(labels: &[String], what: &str) -> Result<()> {
    let mut seen = BTreeMap::new();
    for l in labels {
        if seen.insert(l.as_str(), ()).is_some() {
            return Err(Error::InvalidInput(format!("duplicate {what} label `{l}`")));
        }
    }
    Ok(())
}

fn ensure_finite(m: &DMatrix<f64>, context: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue { context: context.into() })
    }
}
