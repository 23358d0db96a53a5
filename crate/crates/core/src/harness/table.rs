use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::run::{load_demonstrations, parallel_map, run_single, write_json, RunRecord};
use crate::error::Result;
use crate::expert::write_atomic;
use crate::gail::DemoDataset;

pub const TABLE_JSON: &str = "table.json";
pub const TABLE_TEXT: &str = "table.txt";
pub const TABLE_TIMINGS: &str = "table.timings.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellStatus {
    Ok {
        mean_score: f64,
        per_seed: Vec<f64>,
        env_steps: Vec<usize>,
    },
    Failed {
        error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub n_demonstrations: usize,
    #[serde(flatten)]
    pub status: CellStatus,
}

impl Cell {
    pub fn mean_score(&self) -> Option<f64> {
        match &self.status {
            CellStatus::Ok { mean_score, .. } => Some(*mean_score),
            CellStatus::Failed { .. } => None,
        }
    }
}

/// Mean final scores by (method, demonstration count) for one environment.
/// Wall times live in a sidecar file so that the table itself is a pure
/// function of configuration and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub env: String,
    pub methods: Vec<Method>,
    pub demonstrations: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Mean score of the demonstration subset used in each column.
    pub expert: Vec<Option<f64>>,
    pub cells: Vec<Cell>,
}

impl ResultTable {
    pub fn cell(&self, method: Method, n: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.method == method && c.n_demonstrations == n)
    }

    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| matches!(c.status, CellStatus::Ok { .. }))
    }

    /// Aligned plain text with methods as rows and demonstration counts as
    /// columns. The best method of each column is underlined.
    pub fn render(&self) -> String {
        let mut header = vec![format!("{} / num of traj", self.env)];
        header.extend(self.demonstrations.iter().map(|n| n.to_string()));
        let mut rows = vec![header];
        let mut expert = vec!["expert".to_string()];
        expert.extend(self.expert.iter().map(|e| e.map_or("-".into(), |v| format!("{v:.1}"))));
        rows.push(expert);
        let mut best = vec![None; self.demonstrations.len()];
        for (j, &n) in self.demonstrations.iter().enumerate() {
            best[j] = self
                .methods
                .iter()
                .filter_map(|&m| self.cell(m, n).and_then(Cell::mean_score).map(|s| (m, s)))
                .fold(None, |acc: Option<(Method, f64)>, (m, s)| match acc {
                    Some((_, b)) if b >= s => acc,
                    _ => Some((m, s)),
                })
                .map(|(m, _)| m);
        }
        let mut marks = vec![vec![false; self.demonstrations.len() + 1]; 2];
        for &m in &self.methods {
            let mut row = vec![m.name().to_string()];
            let mut mark = vec![false];
            for (j, &n) in self.demonstrations.iter().enumerate() {
                row.push(match self.cell(m, n).map(|c| &c.status) {
                    Some(CellStatus::Ok { mean_score, .. }) => format!("{mean_score:.1}"),
                    Some(CellStatus::Failed { .. }) => "failed".into(),
                    None => "-".into(),
                });
                mark.push(best[j] == Some(m));
            }
            rows.push(row);
            marks.push(mark);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, (row, mark)) in rows.iter().zip(&marks).enumerate() {
            let mut line = String::new();
            for (j, text) in row.iter().enumerate() {
                if j > 0 {
                    line.push_str("  ");
                }
                let pad = widths[j] - text.chars().count();
                if j == 0 {
                    line.push_str(text);
                    line.push_str(&" ".repeat(pad));
                } else {
                    line.push_str(&" ".repeat(pad));
                    if mark[j] {
                        // combining low line under every character
                        text.chars().for_each(|c| {
                            line.push(c);
                            line.push('\u{332}');
                        });
                    } else {
                        line.push_str(text);
                    }
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out
    }
}

pub fn cell_from_records(method: Method, n: usize, records: &[RunRecord]) -> Cell {
    let per_seed: Vec<f64> = records.iter().map(|r| r.final_score).collect();
    Cell {
        method,
        n_demonstrations: n,
        status: CellStatus::Ok {
            mean_score: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
            per_seed,
            env_steps: records.iter().map(|r| r.env_steps).collect(),
        },
    }
}

/// Runs every (method, demonstration count, seed) of `cfg.sweep` and writes
/// the table as JSON and as aligned text into `cfg.out_dir`. A failed run
/// marks its cell failed; the table is still written. `ppo` ignores
/// demonstrations, so it runs once and fills every column.
pub fn compare_methods(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let counts = &cfg.sweep.demonstrations;
    let mut datasets: BTreeMap<(bool, usize), std::result::Result<Option<DemoDataset>, String>> = BTreeMap::new();
    for &m in &cfg.sweep.methods {
        for &n in counts {
            let key = if m.uses_demonstrations() { n } else { 0 };
            datasets
                .entry((m.uses_demonstrations(), key))
                .or_insert_with(|| load_demonstrations(cfg, m, key).map_err(|e| e.to_string()));
        }
    }
    let mut tasks = Vec::new();
    for &m in &cfg.sweep.methods {
        let ns: Vec<usize> = if m.uses_demonstrations() { counts.clone() } else { vec![0] };
        for n in ns {
            for &seed in &cfg.seeds {
                tasks.push((m, n, seed));
            }
        }
    }
    let outputs = parallel_map(&tasks, cfg.jobs(), |&(m, n, seed)| {
        let demos = datasets[&(m.uses_demonstrations(), n)].as_ref().map_err(Clone::clone)?;
        run_single(cfg, m, n, demos.as_ref(), seed)
            .map(|o| (o.record, o.wall_seconds))
            .map_err(|e| e.to_string())
    });

    let timings: Vec<_> = tasks
        .iter()
        .zip(&outputs)
        .filter_map(|(&(m, n, seed), out)| {
            let secs = out.as_ref().ok()?.1;
            Some(serde_json::json!({ "method": m, "n_demonstrations": n, "seed": seed, "wall_seconds": secs }))
        })
        .collect();
    let mut cells = Vec::new();
    for &m in &cfg.sweep.methods {
        for &n in counts {
            let key = if m.uses_demonstrations() { n } else { 0 };
            let mut records = Vec::new();
            let mut error = None;
            for (task, out) in tasks.iter().zip(&outputs) {
                if task.0 != m || task.1 != key {
                    continue;
                }
                match out {
                    Ok((r, _)) => records.push(r.clone()),
                    Err(e) => error = Some(format!("seed {}: {e}", task.2)),
                }
            }
            cells.push(match error {
                Some(error) => Cell {
                    method: m,
                    n_demonstrations: n,
                    status: CellStatus::Failed { error },
                },
                None => cell_from_records(m, n, &records),
            });
        }
    }
    let expert = counts
        .iter()
        .map(|&n| datasets.get(&(true, n)).and_then(|d| d.as_ref().ok()).and_then(|d| d.as_ref()).map(|d| d.mean_score))
        .collect();
    let table = ResultTable {
        env: cfg.env.id.clone(),
        methods: cfg.sweep.methods.clone(),
        demonstrations: counts.clone(),
        seeds: cfg.seeds.clone(),
        expert,
        cells,
    };
    write_table(&table, &cfg.out_dir)?;
    write_json(&cfg.out_dir.join(TABLE_TIMINGS), &timings)?;
    Ok(table)
}

pub fn write_table(table: &ResultTable, dir: &Path) -> Result<()> {
    write_json(&dir.join(TABLE_JSON), table)?;
    write_atomic(&dir.join(TABLE_TEXT), table.render().as_bytes())
}
