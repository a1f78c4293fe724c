//! Incremental least-squares regression: CSV ingestion, train/test split,
//! z-scoring + one-hot preprocessing fitted on the training split only, the
//! single-sample training loop, and the synthetic benchmark generators the
//! experiments run on.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::model::{FlatWeights, Model, ModelError};
use crate::numkit::{DenseVector, SeededRng};
use crate::optim::{step, OptimConfig, OptimError, OptimState};

#[derive(Debug, Error)]
pub enum SupervisedError {
    #[error("cannot parse cell at data row {row}, column '{col}'")]
    ParseError { row: usize, col: String },
    #[error("column '{0}' is missing from the file header")]
    MissingColumn(String),
    #[error("input is empty")]
    EmptyInput,
    #[error("split fraction must lie strictly between 0 and 1 and leave both sides non-empty")]
    BadSplit,
    #[error("dataset rows are inconsistent: {0}")]
    BadData(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn categorical(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
        }
    }
}

/// One raw feature cell, before preprocessing.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(String),
}

/// In-memory dataset: raw feature cells (column order fixed by `columns`)
/// plus numeric targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub columns: Vec<ColumnSpec>,
    pub rows: Vec<Vec<Cell>>,
    pub targets: Vec<f64>,
    pub target_name: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct categories of a categorical column across the whole dataset.
    pub fn cardinality(&self, column: usize) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for row in &self.rows {
            if let Cell::Cat(s) = &row[column] {
                seen.insert(s.as_str());
            }
        }
        seen.len()
    }
}

/// Shortest decimal representation that parses back to the same f64; the
/// formatting used for every CSV the workspace writes, so reruns are
/// byte-identical.
pub fn format_f64(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v}").unwrap();
    s
}

fn needs_quoting(s: &str) -> bool {
    s.contains(',') || s.contains('"') || s.contains('\n')
}

fn quote(s: &str) -> String {
    if needs_quoting(s) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Load a comma-separated file with a header row. Columns are matched by
/// name; extra file columns are ignored. Numeric cells must parse to finite
/// floats.
pub fn load_csv(
    path: &Path,
    schema: &[ColumnSpec],
    target: &str,
) -> Result<Dataset, SupervisedError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| -> Result<usize, SupervisedError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| SupervisedError::MissingColumn(name.to_string()))
    };
    let feature_positions: Vec<usize> = schema
        .iter()
        .map(|c| position(&c.name))
        .collect::<Result<_, _>>()?;
    let target_position = position(target)?;

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (row_index, record) in reader.records().enumerate() {
        let record = record?;
        let row_number = row_index + 1; // 1-based data row for error reporting
        let mut cells = Vec::with_capacity(schema.len());
        for (spec, &pos) in schema.iter().zip(feature_positions.iter()) {
            let raw = record.get(pos).unwrap_or("").trim();
            match spec.kind {
                ColumnKind::Numeric => {
                    let parsed: f64 = raw.parse().map_err(|_| SupervisedError::ParseError {
                        row: row_number,
                        col: spec.name.clone(),
                    })?;
                    if !parsed.is_finite() {
                        return Err(SupervisedError::ParseError {
                            row: row_number,
                            col: spec.name.clone(),
                        });
                    }
                    cells.push(Cell::Num(parsed));
                }
                ColumnKind::Categorical => cells.push(Cell::Cat(raw.to_string())),
            }
        }
        let raw_target = record.get(target_position).unwrap_or("").trim();
        let parsed: f64 = raw_target
            .parse()
            .map_err(|_| SupervisedError::ParseError {
                row: row_number,
                col: target.to_string(),
            })?;
        if !parsed.is_finite() {
            return Err(SupervisedError::ParseError {
                row: row_number,
                col: target.to_string(),
            });
        }
        rows.push(cells);
        targets.push(parsed);
    }
    if rows.is_empty() {
        return Err(SupervisedError::EmptyInput);
    }
    Ok(Dataset {
        columns: schema.to_vec(),
        rows,
        targets,
        target_name: target.to_string(),
    })
}

/// Write a dataset back out; [`load_csv`] with the same schema reproduces it
/// exactly (floats are written in shortest round-trip form).
pub fn save_csv(path: &Path, ds: &Dataset) -> Result<(), SupervisedError> {
    let mut out = String::new();
    let mut header: Vec<String> = ds.columns.iter().map(|c| quote(&c.name)).collect();
    header.push(quote(&ds.target_name));
    out.push_str(&header.join(","));
    out.push('\n');
    for (row, &target) in ds.rows.iter().zip(ds.targets.iter()) {
        let mut fields: Vec<String> = row
            .iter()
            .map(|cell| match cell {
                Cell::Num(v) => format_f64(*v),
                Cell::Cat(s) => quote(s),
            })
            .collect();
        fields.push(format_f64(target));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Shuffled train/test split.
#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub shuffle_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            shuffle_seed: 0,
        }
    }
}

impl SplitSpec {
    /// Disjoint, exhaustive index split; deterministic in the seed.
    pub fn split(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>), SupervisedError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(SupervisedError::BadSplit);
        }
        let n_train = (n as f64 * self.train_fraction).floor() as usize;
        if n_train == 0 || n_train == n {
            return Err(SupervisedError::BadSplit);
        }
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = SeededRng::new(self.shuffle_seed);
        rng.shuffle(&mut indices);
        let test = indices.split_off(n_train);
        Ok((indices, test))
    }
}

/// Feature transform fitted on the training split only: numeric columns are
/// z-scored with the training mean/sd (constant columns just get centered);
/// categorical columns expand to one-hot blocks over the training categories,
/// and unseen categories at transform time map to an all-zero block (counted,
/// not fatal).
#[derive(Clone, Debug)]
pub struct Preprocessor {
    numeric: Vec<(usize, f64, f64)>, // column, mean, sd (sd = 0 markers kept)
    categorical: Vec<(usize, BTreeMap<String, usize>)>, // column, category -> slot
    output_dim: usize,
}

impl Preprocessor {
    pub fn fit(ds: &Dataset, train_indices: &[usize]) -> Result<Self, SupervisedError> {
        if train_indices.is_empty() {
            return Err(SupervisedError::EmptyInput);
        }
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        for (c, spec) in ds.columns.iter().enumerate() {
            match spec.kind {
                ColumnKind::Numeric => {
                    let mut sum = 0.0;
                    for &i in train_indices {
                        match &ds.rows[i][c] {
                            Cell::Num(v) => sum += v,
                            Cell::Cat(_) => {
                                return Err(SupervisedError::BadData(format!(
                                    "column '{}' declared numeric but holds a category",
                                    spec.name
                                )))
                            }
                        }
                    }
                    let mean = sum / train_indices.len() as f64;
                    let mut var = 0.0;
                    for &i in train_indices {
                        if let Cell::Num(v) = &ds.rows[i][c] {
                            var += (v - mean) * (v - mean);
                        }
                    }
                    let sd = (var / train_indices.len() as f64).sqrt();
                    numeric.push((c, mean, sd));
                }
                ColumnKind::Categorical => {
                    let mut map = BTreeMap::new();
                    for &i in train_indices {
                        match &ds.rows[i][c] {
                            Cell::Cat(s) => {
                                let next = map.len();
                                map.entry(s.clone()).or_insert(next);
                            }
                            Cell::Num(_) => {
                                return Err(SupervisedError::BadData(format!(
                                    "column '{}' declared categorical but holds a number",
                                    spec.name
                                )))
                            }
                        }
                    }
                    categorical.push((c, map));
                }
            }
        }
        // Slots were assigned in first-seen order; remap to sorted-name order
        // so the transform is independent of row order.
        for (_, map) in &mut categorical {
            let keys: Vec<String> = map.keys().cloned().collect();
            for (slot, key) in keys.iter().enumerate() {
                map.insert(key.clone(), slot);
            }
        }
        let output_dim = numeric.len()
            + categorical
                .iter()
                .map(|(_, map)| map.len())
                .sum::<usize>();
        Ok(Self {
            numeric,
            categorical,
            output_dim,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Transform one raw row; the count of unseen categories encountered is
    /// returned alongside the design vector.
    pub fn transform(&self, row: &[Cell]) -> (DenseVector, usize) {
        let mut out = Vec::with_capacity(self.output_dim);
        let mut unseen = 0usize;
        for &(c, mean, sd) in &self.numeric {
            let v = match &row[c] {
                Cell::Num(v) => *v,
                Cell::Cat(_) => f64::NAN, // callers fit on the same schema; unreachable
            };
            out.push(if sd > 0.0 { (v - mean) / sd } else { v - mean });
        }
        for (c, map) in &self.categorical {
            let base = out.len();
            out.extend(std::iter::repeat(0.0).take(map.len()));
            if let Cell::Cat(s) = &row[*c] {
                match map.get(s) {
                    Some(&slot) => out[base + slot] = 1.0,
                    None => unseen += 1,
                }
            }
        }
        (DenseVector::from_raw(out), unseen)
    }
}

/// Design matrix + targets for one split, ready for the training loop.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Vec<(DenseVector, f64)>,
    pub test: Vec<(DenseVector, f64)>,
    pub input_dim: usize,
    /// Unseen-category events hit while transforming the test split.
    pub unseen_categories: usize,
}

/// Split, fit the preprocessor on the training side, and transform both.
pub fn prepare(ds: &Dataset, split: &SplitSpec) -> Result<PreparedData, SupervisedError> {
    let (train_idx, test_idx) = split.split(ds.len())?;
    let pre = Preprocessor::fit(ds, &train_idx)?;
    let mut unseen_categories = 0usize;
    let transform_rows = |indices: &[usize], unseen_acc: &mut usize| {
        indices
            .iter()
            .map(|&i| {
                let (x, unseen) = pre.transform(&ds.rows[i]);
                *unseen_acc += unseen;
                (x, ds.targets[i])
            })
            .collect::<Vec<_>>()
    };
    let mut train_unseen = 0usize;
    let train = transform_rows(&train_idx, &mut train_unseen);
    debug_assert_eq!(train_unseen, 0, "fit split cannot contain unseen categories");
    let test = transform_rows(&test_idx, &mut unseen_categories);
    Ok(PreparedData {
        train,
        test,
        input_dim: pre.output_dim(),
        unseen_categories,
    })
}

/// Half mean squared error, the quantity the incremental rules descend.
pub fn mse(targets: &[f64], predictions: &[f64]) -> Result<f64, SupervisedError> {
    if targets.is_empty() || targets.len() != predictions.len() {
        return Err(SupervisedError::EmptyInput);
    }
    let sum: f64 = targets
        .iter()
        .zip(predictions.iter())
        .map(|(y, f)| (y - f) * (y - f))
        .sum();
    Ok(0.5 * sum / targets.len() as f64)
}

/// Mean absolute percentage error with a 1e-15 floor on |y|, so zero targets
/// yield a large finite value rather than a division failure.
pub fn mape(targets: &[f64], predictions: &[f64]) -> Result<f64, SupervisedError> {
    if targets.is_empty() || targets.len() != predictions.len() {
        return Err(SupervisedError::EmptyInput);
    }
    let sum: f64 = targets
        .iter()
        .zip(predictions.iter())
        .map(|(y, f)| (y - f).abs() / y.abs().max(1e-15))
        .sum();
    Ok(sum / targets.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub steps: u64,
    /// Evaluation cadence in steps; 0 means "final evaluation only".
    pub eval_every: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalPoint {
    pub step: u64,
    pub train_mse: f64,
    pub test_mse: f64,
    pub test_mape: f64,
    /// Mean ξ over the steps since the previous evaluation.
    pub xi_mean: f64,
    /// Largest ‖∇f‖² seen so far (bounded-gradient monitor).
    pub grad_sq_max: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub curve: Vec<EvalPoint>,
    pub weights: FlatWeights,
    pub diverged: bool,
}

fn evaluate(
    model: &Model,
    w: &FlatWeights,
    data: &PreparedData,
    step_index: u64,
    xi_mean: f64,
    grad_sq_max: f64,
) -> Result<EvalPoint, SupervisedError> {
    let predict = |rows: &[(DenseVector, f64)]| -> Result<(Vec<f64>, Vec<f64>), SupervisedError> {
        let mut ys = Vec::with_capacity(rows.len());
        let mut fs = Vec::with_capacity(rows.len());
        for (x, y) in rows {
            ys.push(*y);
            fs.push(model.value(w, x.as_slice())?);
        }
        Ok((ys, fs))
    };
    let (train_y, train_f) = predict(&data.train)?;
    let (test_y, test_f) = predict(&data.test)?;
    Ok(EvalPoint {
        step: step_index,
        train_mse: mse(&train_y, &train_f)?,
        test_mse: mse(&test_y, &test_f)?,
        test_mape: mape(&test_y, &test_f)?,
        xi_mean,
        grad_sq_max,
    })
}

/// Single-sample incremental training: uniform with-replacement draws from
/// the training split, one optimizer step per draw, metrics on the recorded
/// cadence. Deterministic given the rng. Non-finite values stop the run and
/// mark it diverged.
pub fn train_incremental(
    cfg: &TrainConfig,
    model: &Model,
    w0: FlatWeights,
    data: &PreparedData,
    rng: &mut SeededRng,
) -> Result<TrainOutcome, SupervisedError> {
    if data.train.is_empty() || data.test.is_empty() {
        return Err(SupervisedError::EmptyInput);
    }
    let mut w = w0;
    let mut st = OptimState::new();
    let mut curve = Vec::new();
    if cfg.steps == 0 {
        curve.push(evaluate(model, &w, data, 0, 0.0, 0.0)?);
        return Ok(TrainOutcome {
            curve,
            weights: w,
            diverged: false,
        });
    }
    let mut xi_sum = 0.0;
    let mut xi_count = 0u64;
    let mut diverged = false;
    for t in 0..cfg.steps {
        let (x, y) = &data.train[rng.index(data.train.len())];
        let ev = model.eval_with_gradient(&w, x.as_slice(), *y)?;
        if !ev.value.is_finite() {
            diverged = true;
            break;
        }
        let diag = step(&cfg.optim, &mut st, &mut w, &ev)?;
        xi_sum += diag.xi;
        xi_count += 1;
        if !w.values().all_finite() {
            diverged = true;
            break;
        }
        let is_eval_step = (cfg.eval_every > 0 && (t + 1) % cfg.eval_every == 0)
            || t + 1 == cfg.steps;
        if is_eval_step {
            let xi_mean = xi_sum / xi_count.max(1) as f64;
            curve.push(evaluate(
                model,
                &w,
                data,
                t + 1,
                xi_mean,
                st.max_grad_sq_seen,
            )?);
            xi_sum = 0.0;
            xi_count = 0;
        }
    }
    Ok(TrainOutcome {
        curve,
        weights: w,
        diverged,
    })
}

/// Synthetic regression benchmark: numeric columns on wildly different raw
/// scales (exercising the z-scoring), one categorical column when
/// `categories > 0`, and a smooth nonlinear target with Gaussian noise.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub numeric_columns: usize,
    pub categories: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            rows: 1500,
            numeric_columns: 6,
            categories: 4,
            noise_sd: 0.05,
            seed: 1,
        }
    }
}

pub fn synthetic_regression(spec: &SyntheticSpec) -> Dataset {
    let root = SeededRng::new(spec.seed);
    let mut value_rng = root.split(1);
    let mut noise_rng = root.split(2);
    let mut columns: Vec<ColumnSpec> = (0..spec.numeric_columns)
        .map(|j| ColumnSpec::numeric(&format!("x{j}")))
        .collect();
    if spec.categories > 0 {
        columns.push(ColumnSpec::categorical("segment"));
    }
    // Raw column scales span five orders of magnitude.
    let scales: Vec<f64> = (0..spec.numeric_columns)
        .map(|j| 10f64.powi((j % 5) as i32 - 2))
        .collect();
    let category_offsets: Vec<f64> = (0..spec.categories)
        .map(|k| -2.0 + 4.0 * k as f64 / (spec.categories.max(2) - 1) as f64)
        .collect();
    let mut rows = Vec::with_capacity(spec.rows);
    let mut targets = Vec::with_capacity(spec.rows);
    for _ in 0..spec.rows {
        let latent: Vec<f64> = (0..spec.numeric_columns)
            .map(|_| value_rng.uniform(-3.0, 3.0))
            .collect();
        let mut cells: Vec<Cell> = latent
            .iter()
            .zip(scales.iter())
            .map(|(u, s)| Cell::Num(u * s))
            .collect();
        let mut y = 0.0;
        if !latent.is_empty() {
            y += 2.0 * latent[0];
        }
        if latent.len() > 1 {
            y -= 1.5 * latent[1];
        }
        if latent.len() > 2 {
            y += (2.0 * latent[2]).sin();
        }
        if latent.len() > 4 {
            y += 0.4 * latent[3] * latent[4];
        }
        if spec.categories > 0 {
            let k = value_rng.index(spec.categories);
            cells.push(Cell::Cat(format!("seg_{k}")));
            y += category_offsets[k];
        }
        y += spec.noise_sd * noise_rng.normal();
        rows.push(cells);
        targets.push(y);
    }
    Dataset {
        columns,
        rows,
        targets,
        target_name: "target".into(),
    }
}

/// One-hot design benchmark: every row is a (possibly scaled) indicator of
/// one of `dim` features, targets are per-feature levels plus noise. This is
/// the design on which per-feature rescaling leaves the Gauss-Newton scaled
/// run's losses exactly unchanged.
pub fn one_hot_regression(dim: usize, rows: usize, seed: u64) -> (Vec<usize>, Vec<f64>) {
    let root = SeededRng::new(seed);
    let mut index_rng = root.split(1);
    let mut noise_rng = root.split(2);
    let levels: Vec<f64> = (0..dim).map(|_| index_rng.uniform(-2.0, 2.0)).collect();
    let indices: Vec<usize> = (0..rows).map(|_| index_rng.index(dim)).collect();
    let targets: Vec<f64> = indices
        .iter()
        .map(|&j| levels[j] + 0.01 * noise_rng.normal())
        .collect();
    (indices, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{LrSchedule, Rule};

    fn default_optim(rule: Rule, alpha: f64) -> OptimConfig {
        OptimConfig::new(rule, LrSchedule::Constant { alpha0: alpha })
    }

    #[test]
    fn mse_and_mape_worked_examples() {
        assert_eq!(mse(&[2.0], &[0.0]).unwrap(), 2.0);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(mse(&[], &[]), Err(SupervisedError::EmptyInput)));

        let m = mape(&[1.0, 2.0], &[1.1, 1.8]).unwrap();
        assert!((m - 0.1).abs() < 1e-12);
        // Zero target hits the 1e-15 floor → large but finite.
        let m = mape(&[0.0], &[1.0]).unwrap();
        assert!((m - 1e15).abs() / 1e15 < 1e-12);
        assert!(m.is_finite());
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_deterministic() {
        let spec = SplitSpec {
            train_fraction: 0.8,
            shuffle_seed: 3,
        };
        let (train, test) = spec.split(10).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let (train2, test2) = spec.split(10).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);

        assert!(SplitSpec {
            train_fraction: 0.0,
            shuffle_seed: 0
        }
        .split(10)
        .is_err());
        assert!(SplitSpec {
            train_fraction: 1.0,
            shuffle_seed: 0
        }
        .split(10)
        .is_err());
        // Fraction that would empty a side.
        assert!(SplitSpec {
            train_fraction: 0.05,
            shuffle_seed: 0
        }
        .split(10)
        .is_err());
    }

    fn toy_dataset() -> Dataset {
        Dataset {
            columns: vec![ColumnSpec::numeric("a"), ColumnSpec::categorical("c")],
            rows: vec![
                vec![Cell::Num(1.0), Cell::Cat("red".into())],
                vec![Cell::Num(2.0), Cell::Cat("blue".into())],
                vec![Cell::Num(3.0), Cell::Cat("red".into())],
                vec![Cell::Num(4.0), Cell::Cat("green".into())],
            ],
            targets: vec![1.0, 2.0, 3.0, 4.0],
            target_name: "target".into(),
        }
    }

    #[test]
    fn preprocessor_standardizes_on_train_only() {
        let ds = toy_dataset();
        let pre = Preprocessor::fit(&ds, &[0, 1, 2]).unwrap();
        // 3 numeric-free categories seen on train: blue, red → sorted order.
        assert_eq!(pre.output_dim(), 1 + 2);
        let transformed: Vec<DenseVector> = (0..3)
            .map(|i| pre.transform(&ds.rows[i]).0)
            .collect();
        let mean: f64 = transformed.iter().map(|x| x[0]).sum::<f64>() / 3.0;
        let sd: f64 =
            (transformed.iter().map(|x| x[0] * x[0]).sum::<f64>() / 3.0 - mean * mean).sqrt();
        assert!(mean.abs() <= 1e-9);
        assert!((sd - 1.0).abs() <= 1e-9);
        // Unseen category on the held-out row maps to an all-zero block.
        let (x, unseen) = pre.transform(&ds.rows[3]);
        assert_eq!(unseen, 1);
        assert_eq!(&x.as_slice()[1..], &[0.0, 0.0]);
        // Categories are slotted in sorted-name order: blue then red.
        let (x_blue, _) = pre.transform(&ds.rows[1]);
        assert_eq!(&x_blue.as_slice()[1..], &[1.0, 0.0]);
        let (x_red, _) = pre.transform(&ds.rows[0]);
        assert_eq!(&x_red.as_slice()[1..], &[0.0, 1.0]);
    }

    #[test]
    fn preprocessor_is_insensitive_to_test_rows() {
        // Perturbing rows outside the fit indices does not change transform
        // parameters.
        let ds = toy_dataset();
        let mut perturbed = ds.clone();
        perturbed.rows[3][0] = Cell::Num(1e9);
        let pre_a = Preprocessor::fit(&ds, &[0, 1, 2]).unwrap();
        let pre_b = Preprocessor::fit(&perturbed, &[0, 1, 2]).unwrap();
        let (xa, _) = pre_a.transform(&ds.rows[0]);
        let (xb, _) = pre_b.transform(&ds.rows[0]);
        assert_eq!(xa.as_slice(), xb.as_slice());
    }

    #[test]
    fn constant_numeric_column_centers_to_zero() {
        let ds = Dataset {
            columns: vec![ColumnSpec::numeric("a")],
            rows: vec![vec![Cell::Num(5.0)], vec![Cell::Num(5.0)]],
            targets: vec![0.0, 0.0],
            target_name: "t".into(),
        };
        let pre = Preprocessor::fit(&ds, &[0, 1]).unwrap();
        let (x, _) = pre.transform(&ds.rows[0]);
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn csv_round_trips_thousand_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = synthetic_regression(&SyntheticSpec {
            rows: 1000,
            ..SyntheticSpec::default()
        });
        save_csv(&path, &ds).unwrap();
        let back = load_csv(&path, &ds.columns, &ds.target_name).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn csv_reports_row_and_column_of_parse_failures() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b,target\n1.0,x,3\n2.0,oops,4\n").unwrap();
        let schema = vec![ColumnSpec::numeric("a"), ColumnSpec::categorical("b")];
        // Categorical 'b' accepts anything; numeric target is fine. Break 'a'.
        std::fs::write(&path, "a,b,target\n1.0,x,3\nnope,y,4\n").unwrap();
        match load_csv(&path, &schema, "target") {
            Err(SupervisedError::ParseError { row, col }) => {
                assert_eq!(row, 2);
                assert_eq!(col, "a");
            }
            other => panic!("expected ParseError, got {other:?}"),
        }
        match load_csv(&path, &schema, "absent") {
            Err(SupervisedError::MissingColumn(name)) => assert_eq!(name, "absent"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn uniform_sampling_frequencies_within_three_sigma() {
        // 1e6 draws over 10 indices: each count within 3σ = 3·√(n·p(1-p)) of
        // the mean 1e5.
        let mut rng = SeededRng::new(7);
        let mut counts = [0u64; 10];
        for _ in 0..1_000_000 {
            counts[rng.index(10)] += 1;
        }
        let sigma = (1_000_000f64 * 0.1 * 0.9).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let deviation = (c as f64 - 100_000.0).abs();
            assert!(
                deviation <= 3.0 * sigma,
                "index {i} drawn {c} times ({deviation:.0} from mean)"
            );
        }
    }

    #[test]
    fn training_is_deterministic_and_steps_zero_is_initial_eval() {
        let ds = synthetic_regression(&SyntheticSpec {
            rows: 200,
            ..SyntheticSpec::default()
        });
        let data = prepare(&ds, &SplitSpec::default()).unwrap();
        let model = Model::linear(data.input_dim);
        let cfg = TrainConfig {
            optim: default_optim(Rule::Ignd, 0.5),
            steps: 300,
            eval_every: 100,
        };
        let run = |seed: u64| {
            let mut rng = SeededRng::new(seed);
            train_incremental(
                &cfg,
                &model,
                FlatWeights::zeros(model.layout()),
                &data,
                &mut rng,
            )
            .unwrap()
        };
        let a = run(5);
        let b = run(5);
        assert_eq!(a.curve.len(), 3);
        for (pa, pb) in a.curve.iter().zip(b.curve.iter()) {
            assert_eq!(pa.test_mse.to_bits(), pb.test_mse.to_bits());
            assert_eq!(pa.train_mse.to_bits(), pb.train_mse.to_bits());
        }
        assert_eq!(
            a.weights.values().as_slice(),
            b.weights.values().as_slice()
        );

        let zero_cfg = TrainConfig {
            steps: 0,
            ..cfg.clone()
        };
        let mut rng = SeededRng::new(5);
        let out = train_incremental(
            &zero_cfg,
            &model,
            FlatWeights::zeros(model.layout()),
            &data,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.curve.len(), 1);
        assert_eq!(out.curve[0].step, 0);
        assert!(!out.diverged);
    }

    #[test]
    fn unit_alpha_interpolation_drives_training_loss_down_fast() {
        // Linear target, Gauss-Newton scale, α = 1: every step interpolates
        // its sample, so train MSE collapses quickly.
        let root = SeededRng::new(21);
        let mut feature_rng = root.split(0);
        let rows: Vec<(DenseVector, f64)> = (0..200)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| feature_rng.uniform(-1.0, 1.0)).collect();
                let y = 3.0 * x[0] - 2.0 * x[1] + 0.5 * x[2];
                (DenseVector::from_raw(x), y)
            })
            .collect();
        let data = PreparedData {
            train: rows.clone(),
            test: rows,
            input_dim: 3,
            unseen_categories: 0,
        };
        let model = Model::linear(3);
        let cfg = TrainConfig {
            optim: OptimConfig {
                epsilon: 0.0,
                ..default_optim(Rule::Ignd, 1.0)
            },
            steps: 2000,
            eval_every: 0,
        };
        let mut rng = SeededRng::new(2);
        let out = train_incremental(
            &cfg,
            &model,
            FlatWeights::zeros(model.layout()),
            &data,
            &mut rng,
        )
        .unwrap();
        let final_point = out.curve.last().unwrap();
        assert!(
            final_point.train_mse < 1e-12,
            "train mse {}",
            final_point.train_mse
        );
        assert!(!out.diverged);
    }

    #[test]
    fn divergent_sgd_run_is_flagged_not_fatal() {
        let ds = synthetic_regression(&SyntheticSpec {
            rows: 100,
            ..SyntheticSpec::default()
        });
        let data = prepare(&ds, &SplitSpec::default()).unwrap();
        let model = Model::linear(data.input_dim);
        let cfg = TrainConfig {
            optim: default_optim(Rule::Sgd, 1e6),
            steps: 500,
            eval_every: 0,
        };
        let mut rng = SeededRng::new(1);
        let out = train_incremental(
            &cfg,
            &model,
            FlatWeights::zeros(model.layout()),
            &data,
            &mut rng,
        )
        .unwrap();
        assert!(out.diverged);
    }

    #[test]
    fn synthetic_generator_is_deterministic() {
        let spec = SyntheticSpec::default();
        assert_eq!(synthetic_regression(&spec), synthetic_regression(&spec));
        let other = SyntheticSpec {
            seed: 2,
            ..SyntheticSpec::default()
        };
        assert_ne!(synthetic_regression(&spec), synthetic_regression(&other));
    }

    #[test]
    fn format_f64_round_trips() {
        for v in [
            0.0,
            -0.0,
            1.5,
            -2.25e-8,
            1e20,
            std::f64::consts::PI,
            f64::MIN_POSITIVE,
        ] {
            let s = format_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s}");
        }
    }
}
