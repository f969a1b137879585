//! Dataset ingestion and generation: numeric CSV files, train/test splits,
//! input standardization, and the two synthetic tasks (interval-gap cubic
//! regression and two-moons classification).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::heads::Targets;
use crate::train::{stream_rng, streams};

/// Train-set statistics reused on every split: inputs are standardized,
/// outputs only centered (their scale is left intact so likelihoods stay
/// comparable across runs).
#[derive(Debug, Clone)]
pub struct NormalizationStats {
    pub input_mean: Array1<f64>,
    pub input_std: Array1<f64>,
    /// Zero for classification targets, which are never transformed.
    pub output_mean: Array1<f64>,
}

/// A numeric matrix split into inputs and trailing target columns.
#[derive(Debug, Clone)]
pub struct CsvDataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    /// Present when the data was normalized on load.
    pub stats: Option<NormalizationStats>,
}

/// Parse a comma-separated numeric file. A non-numeric first line is treated
/// as a header; any other malformed line is an error naming the 1-based line
/// number. Blank lines are skipped.
fn parse_matrix(text: &str, path: &Path) -> Result<Array2<f64>> {
    let path_str = path.display().to_string();
    let mut rows: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    let mut n_rows = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let mut values = Vec::with_capacity(fields.len());
        let mut bad_field: Option<usize> = None;
        for (col, field) in fields.iter().enumerate() {
            match field.parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) => {
                    bad_field = Some(col);
                    break;
                }
            }
        }
        if let Some(col) = bad_field {
            if n_rows == 0 && width.is_none() {
                // Header row.
                continue;
            }
            return Err(Error::Parse {
                path: path_str,
                line: line_no,
                detail: format!("column {} is not numeric: `{}`", col + 1, fields[col]),
            });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    path: path_str,
                    line: line_no,
                    detail: format!("expected {w} columns, found {}", values.len()),
                });
            }
            Some(_) => {}
        }
        rows.extend_from_slice(&values);
        n_rows += 1;
    }
    let width = width.ok_or_else(|| Error::Parse {
        path: path_str.clone(),
        line: 1,
        detail: "no data rows".to_string(),
    })?;
    Ok(Array2::from_shape_vec((n_rows, width), rows).expect("row-major fill"))
}

/// Load a whole numeric CSV as one matrix (used for OOD input files).
pub fn load_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_matrix(&text, path)
}

/// Load a supervised CSV: the last `n_targets` columns are targets, the rest
/// inputs. With `normalize`, inputs are standardized and targets centered by
/// the statistics of this file (callers that split off a test set first
/// should load raw and apply [`normalization_stats`] of the train part).
pub fn load_dataset_csv(path: &Path, n_targets: usize, normalize: bool) -> Result<CsvDataset> {
    if n_targets == 0 {
        return Err(Error::invalid("load_dataset_csv", "n_targets must be at least 1"));
    }
    let matrix = load_matrix_csv(path)?;
    if matrix.ncols() <= n_targets {
        return Err(Error::invalid(
            "load_dataset_csv",
            format!(
                "{} columns cannot hold {} targets plus inputs",
                matrix.ncols(),
                n_targets
            ),
        ));
    }
    let n_inputs = matrix.ncols() - n_targets;
    let mut inputs = matrix.slice(ndarray::s![.., ..n_inputs]).to_owned();
    let mut targets = matrix.slice(ndarray::s![.., n_inputs..]).to_owned();
    let stats = if normalize {
        let stats = normalization_stats(&inputs.view(), &targets.view(), true);
        apply_normalization(&mut inputs, &mut targets, &stats);
        Some(stats)
    } else {
        None
    };
    Ok(CsvDataset { inputs, targets, stats })
}

/// Write inputs and targets side by side, one row per line, with
/// round-trippable float formatting and no header.
pub fn write_dataset_csv(
    path: &Path,
    inputs: &ArrayView2<'_, f64>,
    targets: &ArrayView2<'_, f64>,
) -> Result<()> {
    if inputs.nrows() != targets.nrows() {
        return Err(Error::shape(
            "write_dataset_csv",
            format!("{} input rows vs {} target rows", inputs.nrows(), targets.nrows()),
        ));
    }
    let mut out = String::new();
    for r in 0..inputs.nrows() {
        let fields: Vec<String> = inputs
            .row(r)
            .iter()
            .chain(targets.row(r).iter())
            .map(|v| format!("{v}"))
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Input means/stds (population std) and target means. A zero-variance input
/// column gets std 1 with a warning so standardization stays a no-op there.
/// With `center_outputs` false (classification labels) the output means are
/// zero.
pub fn normalization_stats(
    inputs: &ArrayView2<'_, f64>,
    targets: &ArrayView2<'_, f64>,
    center_outputs: bool,
) -> NormalizationStats {
    let n = inputs.nrows() as f64;
    let input_mean = inputs.mean_axis(Axis(0)).expect("nonempty data");
    let mut input_std = Array1::zeros(inputs.ncols());
    for c in 0..inputs.ncols() {
        let col = inputs.column(c);
        let var = col.iter().map(|v| (v - input_mean[c]).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        input_std[c] = if std > 0.0 {
            std
        } else {
            eprintln!("warning: input column {c} has zero variance; std clamped to 1");
            1.0
        };
    }
    let output_mean = if center_outputs {
        targets.mean_axis(Axis(0)).expect("nonempty data")
    } else {
        Array1::zeros(targets.ncols())
    };
    NormalizationStats { input_mean, input_std, output_mean }
}

/// Standardize inputs and center targets in place.
pub fn apply_normalization(
    inputs: &mut Array2<f64>,
    targets: &mut Array2<f64>,
    stats: &NormalizationStats,
) {
    for mut row in inputs.rows_mut() {
        row -= &stats.input_mean;
        row /= &stats.input_std;
    }
    for mut row in targets.rows_mut() {
        row -= &stats.output_mean;
    }
}

/// Standardize a matrix of extra inputs (probe points, OOD sets) with the
/// train statistics.
pub fn apply_input_normalization(inputs: &mut Array2<f64>, stats: &NormalizationStats) {
    for mut row in inputs.rows_mut() {
        row -= &stats.input_mean;
        row /= &stats.input_std;
    }
}

/// Seeded train/test row split. Rows are shuffled once, the first
/// `round(test_fraction * n)` become the test set, and both sides are
/// returned in ascending row order. `test_fraction` 0 yields an empty test
/// set; at least one training row always remains.
pub fn split_rows(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, streams::SPLIT);
    idx.shuffle(&mut rng);
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let n_test = n_test.min(n.saturating_sub(1));
    let (test, train) = idx.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Interpret a single target column as class labels.
pub fn labels_from_targets(targets: &ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    if targets.ncols() != 1 {
        return Err(Error::invalid(
            "labels_from_targets",
            format!("class labels must be one column, got {}", targets.ncols()),
        ));
    }
    let mut labels = Vec::with_capacity(targets.nrows());
    for (i, &v) in targets.column(0).iter().enumerate() {
        if !(v.fract() == 0.0 && v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid(
                "labels_from_targets",
                format!("row {}: label {v} is not a nonnegative integer", i + 1),
            ));
        }
        labels.push(v as usize);
    }
    Ok(labels)
}

/// Synthetic dataset kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    /// 1-d regression `y = c x^3 + noise` with inputs on `[-4,-2] ∪ [2,4]`.
    CubicGap,
    /// Two interleaved noisy semicircles, labeled 0 (outer) and 1 (inner).
    HalfMoon,
}

/// Generator knobs; `None` picks the kind's convention (100 points and noise
/// 0.1 for the cubic gap, 1000 points and noise 0.2 for the moons).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyParams {
    pub n: Option<usize>,
    pub noise_std: Option<f64>,
    /// Cubic coefficient `c`.
    pub cubic_coeff: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams { n: None, noise_std: None, cubic_coeff: 0.1 }
    }
}

/// Draw a synthetic dataset.
pub fn make_toy_dataset(
    kind: ToyKind,
    params: &ToyParams,
    seed: u64,
) -> Result<(Array2<f64>, Targets)> {
    let mut rng = stream_rng(seed, streams::DATA);
    match kind {
        ToyKind::CubicGap => {
            let n = params.n.unwrap_or(100);
            let noise = params.noise_std.unwrap_or(0.1);
            check_toy(n, noise)?;
            let mut x = Array2::zeros((n, 1));
            let mut y = Array2::zeros((n, 1));
            for i in 0..n {
                // The two intervals have equal length, so a fair coin keeps
                // the union uniform.
                let negative: bool = rng.random();
                let u: f64 = rng.random();
                let xi = if negative { -4.0 + 2.0 * u } else { 2.0 + 2.0 * u };
                let z: f64 = rng.sample(StandardNormal);
                x[[i, 0]] = xi;
                y[[i, 0]] = params.cubic_coeff * xi.powi(3) + noise * z;
            }
            Ok((x, Targets::Real(y)))
        }
        ToyKind::HalfMoon => {
            let n = params.n.unwrap_or(1000);
            let noise = params.noise_std.unwrap_or(0.2);
            check_toy(n, noise)?;
            let n_outer = n / 2;
            let n_inner = n - n_outer;
            let mut x = Array2::zeros((n, 2));
            let mut labels = Vec::with_capacity(n);
            for (i, t) in arc(n_outer).into_iter().enumerate() {
                x[[i, 0]] = t.cos();
                x[[i, 1]] = t.sin();
                labels.push(0);
            }
            for (i, t) in arc(n_inner).into_iter().enumerate() {
                x[[n_outer + i, 0]] = 1.0 - t.cos();
                x[[n_outer + i, 1]] = 0.5 - t.sin();
                labels.push(1);
            }
            for v in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += noise * z;
            }
            Ok((x, Targets::Class(labels)))
        }
    }
}

fn check_toy(n: usize, noise: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("make_toy_dataset", "n must be positive"));
    }
    if !(noise >= 0.0) {
        return Err(Error::invalid(
            "make_toy_dataset",
            format!("noise_std must be nonnegative, got {noise}"),
        ));
    }
    Ok(())
}

/// `n` angles evenly spaced on `[0, pi]`, endpoints included.
fn arc(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| std::f64::consts::PI * i as f64 / (n - 1) as f64)
        .collect()
}

/// Points on an annulus around `center`: radius uniform on
/// `[radius_min, radius_max]`, angle uniform. Used as a synthetic
/// out-of-distribution set at a controlled distance from the data.
pub fn make_ring(
    center: ArrayView1<'_, f64>,
    radius_min: f64,
    radius_max: f64,
    n: usize,
    seed: u64,
) -> Array2<f64> {
    assert_eq!(center.len(), 2, "ring OOD sets are two-dimensional");
    let mut rng = stream_rng(seed, streams::DATA);
    let mut out = Array2::zeros((n, 2));
    for i in 0..n {
        let r = radius_min + (radius_max - radius_min) * rng.random::<f64>();
        let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        out[[i, 0]] = center[0] + r * theta.cos();
        out[[i, 1]] = center[1] + r * theta.sin();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_row_file_splits_inputs_from_the_trailing_target() {
        let f = write_temp("1,2\n3,4\n");
        let ds = load_dataset_csv(f.path(), 1, false).unwrap();
        assert_eq!(ds.inputs, array![[1.0], [3.0]]);
        assert_eq!(ds.targets, array![[2.0], [4.0]]);
        assert!(ds.stats.is_none());
    }

    #[test]
    fn header_lines_are_skipped_and_malformed_rows_name_their_line() {
        let f = write_temp("x,y\n1,2\n3,4\n");
        let ds = load_dataset_csv(f.path(), 1, false).unwrap();
        assert_eq!(ds.inputs.nrows(), 2);

        let f = write_temp("1,2\n3,oops\n");
        let err = load_dataset_csv(f.path(), 1, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2"), "error should cite line 2: {msg}");
        assert!(msg.contains("oops"), "error should quote the field: {msg}");

        let f = write_temp("1,2\n3,4,5\n");
        let err = load_dataset_csv(f.path(), 1, false).unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
    }

    #[test]
    fn normalization_standardizes_inputs_and_centers_outputs() {
        let f = write_temp("1,10\n3,20\n");
        let ds = load_dataset_csv(f.path(), 1, true).unwrap();
        // Column (1,3): mean 2, population std 1.
        assert_eq!(ds.inputs, array![[-1.0], [1.0]]);
        // Outputs centered, never rescaled.
        assert_eq!(ds.targets, array![[-5.0], [5.0]]);
        let stats = ds.stats.unwrap();
        assert_eq!(stats.input_mean[0], 2.0);
        assert_eq!(stats.input_std[0], 1.0);
        assert_eq!(stats.output_mean[0], 15.0);
    }

    #[test]
    fn zero_variance_columns_are_left_unscaled() {
        let f = write_temp("5,1,10\n5,3,20\n");
        let ds = load_dataset_csv(f.path(), 1, true).unwrap();
        assert_eq!(ds.inputs.column(0), array![0.0, 0.0]);
        assert_eq!(ds.stats.unwrap().input_std[0], 1.0);
    }

    #[test]
    fn csv_round_trip_is_exact_to_the_bit() {
        let mut rng = stream_rng(7, streams::DATA);
        let inputs =
            Array2::from_shape_fn((40, 3), |_| rng.sample::<f64, _>(StandardNormal) * 1e3);
        let mut targets = Array2::from_shape_fn((40, 2), |_| {
            let v: f64 = rng.sample(StandardNormal);
            v / 3.0
        });
        targets[[0, 0]] = 1e-300;
        targets[[1, 0]] = -0.0;
        targets[[2, 0]] = 1.0 / 3.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset_csv(&path, &inputs.view(), &targets.view()).unwrap();
        let ds = load_dataset_csv(&path, 2, false).unwrap();
        for (a, b) in inputs.iter().zip(ds.inputs.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in targets.iter().zip(ds.targets.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn split_is_seeded_and_preserves_row_order_within_sides() {
        let (train, test) = split_rows(10, 0.3, 5);
        let (train2, test2) = split_rows(10, 0.3, 5);
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        assert_eq!(test.len(), 3);
        assert_eq!(train.len(), 7);
        assert!(train.windows(2).all(|w| w[0] < w[1]));
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let (train, test) = split_rows(4, 0.0, 5);
        assert!(test.is_empty());
        assert_eq!(train.len(), 4);
    }

    #[test]
    fn labels_reject_non_integers() {
        assert_eq!(
            labels_from_targets(&array![[0.0], [2.0], [1.0]].view()).unwrap(),
            vec![0, 2, 1]
        );
        assert!(labels_from_targets(&array![[0.5]].view()).is_err());
        assert!(labels_from_targets(&array![[-1.0]].view()).is_err());
        assert!(labels_from_targets(&array![[0.0, 1.0]].view()).is_err());
    }

    #[test]
    fn cubic_gap_avoids_the_gap_and_zero_noise_is_exact() {
        let params = ToyParams { noise_std: Some(0.0), ..ToyParams::default() };
        let (x, y) = make_toy_dataset(ToyKind::CubicGap, &params, 3).unwrap();
        let Targets::Real(y) = y else { panic!("cubic data is real-valued") };
        assert_eq!(x.nrows(), 100);
        for (xi, yi) in x.column(0).iter().zip(y.column(0).iter()) {
            assert!((2.0..=4.0).contains(&xi.abs()), "x = {xi} is inside the gap");
            assert_eq!(*yi, 0.1 * xi.powi(3));
        }

        let noisy = make_toy_dataset(ToyKind::CubicGap, &ToyParams::default(), 3)
            .unwrap()
            .0;
        assert!(noisy.column(0).iter().all(|v| v.abs() >= 2.0 && v.abs() <= 4.0));
    }

    #[test]
    fn half_moon_is_balanced_and_noise_free_points_lie_on_the_moons() {
        let params = ToyParams { noise_std: Some(0.0), ..ToyParams::default() };
        let (x, t) = make_toy_dataset(ToyKind::HalfMoon, &params, 9).unwrap();
        let Targets::Class(labels) = t else { panic!("moon data is labeled") };
        assert_eq!(labels.iter().filter(|&&c| c == 0).count(), 500);
        assert_eq!(labels.iter().filter(|&&c| c == 1).count(), 500);
        for (row, &label) in x.rows().into_iter().zip(&labels) {
            let (a, b) = (row[0], row[1]);
            let residual = if label == 0 {
                a * a + b * b - 1.0
            } else {
                (1.0 - a).powi(2) + (0.5 - b).powi(2) - 1.0
            };
            assert!(residual.abs() < 1e-12, "off-moon point ({a}, {b})");
        }
    }

    #[test]
    fn ring_points_lie_in_the_requested_annulus() {
        let center = array![1.0, -2.0];
        let ring = make_ring(center.view(), 3.0, 4.0, 300, 11);
        for row in ring.rows() {
            let d = ((row[0] - 1.0).powi(2) + (row[1] + 2.0).powi(2)).sqrt();
            assert!((3.0 - 1e-12..=4.0 + 1e-12).contains(&d), "distance {d}");
        }
    }
}
