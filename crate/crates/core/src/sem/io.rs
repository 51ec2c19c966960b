use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dag_sampler::is_acyclic;
use crate::diffcore::Tensor;

use super::{Dataset, DatasetMeta, GroundTruthGraph, SemError, Splits};

pub const SACHS_N: usize = 853;
pub const SACHS_D: usize = 11;

const SPLIT_FILES: [&str; 3] = ["X_train.csv", "X_val.csv", "X_test.csv"];

fn io_err(path: &Path, source: std::io::Error) -> SemError {
    SemError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> SemError {
    SemError::Format {
        file: path.display().to_string(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> SemError {
    let at = e
        .position()
        .map(|p| format!(" at line {}", p.line()))
        .unwrap_or_default();
    format_err(path, format!("malformed CSV{at}: {e}"))
}

fn write_matrix(path: &Path, x: &Tensor, header: Option<&[String]>) -> Result<(), SemError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if let Some(h) = header {
        w.write_record(h).map_err(|e| csv_err(path, e))?;
    }
    for r in 0..x.rows() {
        // `{}` on f64 prints the shortest string that parses back exactly
        w.write_record(x.row_slice(r).iter().map(|v| v.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn column_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

/// Reads a numeric CSV. Returns the header (if requested) and the rows.
fn read_matrix(
    path: &Path,
    has_header: bool,
) -> Result<(Option<Vec<String>>, Vec<Vec<f64>>), SemError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = if has_header {
        Some(
            reader
                .headers()
                .map_err(|e| csv_err(path, e))?
                .iter()
                .map(str::to_string)
                .collect(),
        )
    } else {
        None
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.parse::<f64>().map_err(|_| {
                    format_err(
                        path,
                        format!("line {line}, column {}: `{field}` is not a number", c + 1),
                    )
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn rows_to_tensor(path: &Path, rows: &[Vec<f64>], d: usize) -> Result<Tensor, SemError> {
    let mut data = Vec::with_capacity(rows.len() * d);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(format_err(
                path,
                format!("row {} has {} columns, expected {d}", i + 1, row.len()),
            ));
        }
        data.extend_from_slice(row);
    }
    Ok(Tensor::new(rows.len(), d, data).expect("row lengths checked"))
}

/// Writes `X_train.csv`, `X_val.csv`, `X_test.csv`, `meta.json` and, when a
/// ground truth is present, `adjacency.csv`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), SemError> {
    dataset.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let header = column_names(dataset.dim());
    let parts = [
        &dataset.splits.train,
        &dataset.splits.val,
        &dataset.splits.test,
    ];
    for (name, rows) in SPLIT_FILES.iter().zip(parts) {
        write_matrix(&dir.join(name), &dataset.x.select_rows(rows), Some(&header))?;
    }
    if let Some(g) = &dataset.truth {
        write_matrix(&dir.join("adjacency.csv"), &g.adjacency, None)?;
    }
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&dataset.meta).expect("metadata serializes");
    std::fs::write(&meta_path, json + "\n").map_err(|e| io_err(&meta_path, e))
}

/// Inverse of [`save_dataset`]. Rows come back in train, val, test order
/// with contiguous splits; a missing `adjacency.csv` means no ground truth.
pub fn load_dataset(dir: &Path) -> Result<Dataset, SemError> {
    let meta_path = dir.join("meta.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&text).map_err(|e| format_err(&meta_path, e.to_string()))?;
    let d = meta.d;
    let expected = column_names(d);
    let mut data = Vec::new();
    let mut counts = [0usize; 3];
    for (k, name) in SPLIT_FILES.iter().enumerate() {
        let path = dir.join(name);
        if k > 0 && !path.exists() {
            continue;
        }
        let (header, rows) = read_matrix(&path, true)?;
        let header = header.unwrap_or_default();
        if header != expected {
            return Err(format_err(
                &path,
                format!(
                    "header has {} columns {:?}, expected x0..x{}",
                    header.len(),
                    header,
                    d - 1
                ),
            ));
        }
        let x = rows_to_tensor(&path, &rows, d)?;
        counts[k] = x.rows();
        data.extend(x.into_data());
    }
    let total = counts.iter().sum();
    let x = Tensor::new(total, d, data).expect("column counts checked");
    let adj_path = dir.join("adjacency.csv");
    let truth = if adj_path.exists() {
        let (_, rows) = read_matrix(&adj_path, false)?;
        if rows.len() != d {
            return Err(format_err(
                &adj_path,
                format!("{} rows, expected {d}", rows.len()),
            ));
        }
        let adjacency = rows_to_tensor(&adj_path, &rows, d)?;
        if adjacency.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(format_err(&adj_path, "entries must be 0 or 1"));
        }
        if !is_acyclic(&adjacency) {
            return Err(format_err(&adj_path, "graph contains a cycle"));
        }
        Some(GroundTruthGraph {
            adjacency,
            family: meta.graph_family,
            seed: meta.seed,
        })
    } else {
        None
    };
    let dataset = Dataset {
        x,
        splits: Splits::contiguous(counts[0], counts[1], counts[2]),
        truth,
        meta,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn parse_edges(path: &Path, names: &[String]) -> Result<Tensor, SemError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let d = names.len();
    let resolve = |tok: &str| -> Option<usize> {
        let tok = tok.trim();
        names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(tok))
            .or_else(|| tok.parse::<usize>().ok().filter(|&i| i < d))
    };
    let mut adjacency = Tensor::zeros(d, d);
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line
            .split([',', '\t', ' '])
            .filter(|t| !t.is_empty())
            .collect();
        if toks.len() != 2 {
            return Err(format_err(
                path,
                format!("line {}: expected `source,target`", k + 1),
            ));
        }
        match (resolve(toks[0]), resolve(toks[1])) {
            (Some(a), Some(b)) if a != b => adjacency.set(a, b, 1.0),
            // a header line such as `source,target`
            (None, None) if k == 0 => continue,
            _ => {
                return Err(format_err(
                    path,
                    format!("line {}: unknown node in `{line}`", k + 1),
                ))
            }
        }
    }
    if !is_acyclic(&adjacency) {
        return Err(format_err(path, "edge list contains a cycle"));
    }
    Ok(adjacency)
}

/// Loads the 853 × 11 observational protein-signalling data and its
/// consensus network.
///
/// `data` is a CSV with a header of 11 variable names; `edges` lists one
/// `source,target` pair per line, by name or by zero-based column index.
/// Columns are standardized to zero mean and unit (population) variance,
/// then rows are shuffled with `seed` and split into training and
/// validation; there is no test split.
pub fn load_sachs(
    data: &Path,
    edges: &Path,
    seed: u64,
    val_fraction: f64,
) -> Result<Dataset, SemError> {
    let (header, rows) = read_matrix(data, true)?;
    let names = header.unwrap_or_default();
    if rows.len() != SACHS_N || names.len() != SACHS_D {
        return Err(format_err(
            data,
            format!(
                "expected {SACHS_N}×{SACHS_D} data, got {}×{}",
                rows.len(),
                names.len()
            ),
        ));
    }
    let mut x = rows_to_tensor(data, &rows, SACHS_D)?;
    for j in 0..SACHS_D {
        let col: Vec<f64> = (0..SACHS_N).map(|r| x.get(r, j)).collect();
        let mean = col.iter().sum::<f64>() / SACHS_N as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / SACHS_N as f64;
        if var <= 0.0 {
            return Err(format_err(
                data,
                format!("column `{}` is constant", names[j]),
            ));
        }
        let sd = var.sqrt();
        for r in 0..SACHS_N {
            x.set(r, j, (col[r] - mean) / sd);
        }
    }
    let adjacency = parse_edges(edges, &names)?;
    let mut order: Vec<usize> = (0..SACHS_N).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let x = x.select_rows(&order);
    let n_val = (SACHS_N as f64 * val_fraction).round() as usize;
    let dataset = Dataset {
        x,
        splits: Splits::contiguous(SACHS_N - n_val, n_val, 0),
        truth: Some(GroundTruthGraph {
            adjacency,
            family: None,
            seed: None,
        }),
        meta: DatasetMeta {
            seed: Some(seed),
            d: SACHS_D,
            n: SACHS_N,
            graph_family: None,
            expected_edges: None,
            mechanism: "sachs".into(),
            noise_variance: None,
        },
    };
    dataset.validate()?;
    Ok(dataset)
}
