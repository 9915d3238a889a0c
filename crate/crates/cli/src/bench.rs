//! Benchmark grids: the grid-size/headcount sweep and the policy ablation.

use wfdes_core::metrics::Spread;
use wfdes_core::runner::RunError;
use wfdes_core::{ConfigError, GridConfig, PolicySpec, ScenarioConfig};

use crate::batch::{render_table, run_batch, BatchSummary};

pub const GRID_SIDES: [u32; 4] = [32, 64, 128, 256];
/// (facilities, personnel)
pub const HEADCOUNTS: [(usize, usize); 5] = [(25, 5), (25, 10), (25, 25), (50, 25), (100, 25)];

/// A sweep cell: the base scenario on a `side`² grid with the given initial
/// counts. Caps are raised to twice the initial counts when the base caps
/// are smaller.
pub fn trend_cell(base: &ScenarioConfig, side: u32, facilities: usize, personnel: usize) -> ScenarioConfig {
    let mut s = base.clone();
    s.grid = GridConfig::square(side);
    s.initial_facilities = facilities;
    s.initial_personnel = personnel;
    s.engine.max_facilities = s.engine.max_facilities.max(2 * facilities);
    s.engine.max_personnel = s.engine.max_personnel.max(2 * personnel);
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendTable {
    pub sides: Vec<u32>,
    pub headcounts: Vec<(usize, usize)>,
    /// `nsw[row][col]`: episode-NSW spread per cell.
    pub nsw: Vec<Vec<Spread>>,
}

impl TrendTable {
    pub fn mean(&self, side: u32, headcount: (usize, usize)) -> Option<f64> {
        let r = self.sides.iter().position(|s| *s == side)?;
        let c = self.headcounts.iter().position(|h| *h == headcount)?;
        Some(self.nsw[r][c].mean)
    }

    pub fn render(&self) -> String {
        let mut headers = vec!["Grid size".to_string()];
        headers.extend(self.headcounts.iter().map(|(f, p)| format!("{f}F x {p}S")));
        let rows: Vec<Vec<String>> = self
            .sides
            .iter()
            .zip(&self.nsw)
            .map(|(side, cells)| {
                let mut row = vec![format!("{side} x {side}")];
                row.extend(cells.iter().map(|s| format!("{:.2}", s.mean)));
                row
            })
            .collect();
        render_table(&headers, &rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid,facilities,personnel,nsw_mean,nsw_p25,nsw_p75\n");
        for (side, cells) in self.sides.iter().zip(&self.nsw) {
            for ((f, p), s) in self.headcounts.iter().zip(cells) {
                out += &format!("{side},{f},{p},{},{},{}\n", s.mean, s.p25, s.p75);
            }
        }
        out
    }
}

/// Runs `base.episodes` episodes per cell. `progress` is called after each
/// cell with a one-line report.
pub fn trends(
    base: &ScenarioConfig,
    sides: &[u32],
    headcounts: &[(usize, usize)],
    threads: usize,
    mut progress: impl FnMut(&str),
) -> Result<TrendTable, RunError> {
    let mut nsw = Vec::new();
    for &side in sides {
        let mut row = Vec::new();
        for &(f, p) in headcounts {
            let cell = trend_cell(base, side, f, p);
            cell.validate()?;
            let outputs = run_batch(&cell, false, threads)?;
            let summary = BatchSummary::of_outputs(&outputs);
            progress(&format!(
                "{side}x{side} {f}F x {p}S: {} episodes, NSW {:.3}",
                outputs.len(),
                summary.nsw
            ));
            row.push(summary.nsw);
        }
        nsw.push(row);
    }
    Ok(TrendTable {
        sides: sides.to_vec(),
        headcounts: headcounts.to_vec(),
        nsw,
    })
}

/// Built-in rows of the ablation, numbered from 1.
pub const ABLATION_ROWS: [(&str, &str, &str); 4] = [
    ("random", "random", "random"),
    ("random", "threshold", "spatial-average"),
    ("greedy", "threshold", "random"),
    ("greedy", "threshold", "spatial-average"),
];

/// Rows that need a trained agent attached over the protocol.
pub const EXTERNAL_ROWS: [(&str, &str, &str); 3] = [
    ("PPO", "Heuristic", "Heuristic"),
    ("PPO", "PPO", "PPO"),
    ("IMPALA", "IMPALA", "IMPALA"),
];

pub fn ablation_policy(base: &PolicySpec, row: usize) -> Result<PolicySpec, ConfigError> {
    let (d, m, p) = ABLATION_ROWS
        .get(row.wrapping_sub(1))
        .ok_or_else(|| ConfigError::new("rows", format!("no built-in row {row} (1-{})", ABLATION_ROWS.len())))?;
    let mut spec = base.clone();
    spec.apply_cli(&format!("dispatch={d},mgmt={m},pos={p}"))?;
    Ok(spec)
}

fn label(name: &str) -> String {
    match name {
        "random" => "Random".into(),
        "greedy" | "threshold" | "spatial-average" => "Heuristic".into(),
        other => other.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    /// (row number, summary)
    pub rows: Vec<(usize, BatchSummary)>,
    /// Whether the learned rows are listed as external.
    pub show_external: bool,
}

impl AblationTable {
    pub fn row(&self, number: usize) -> Option<&BatchSummary> {
        self.rows.iter().find(|(n, _)| *n == number).map(|(_, s)| s)
    }

    pub fn headers() -> Vec<String> {
        let mut h: Vec<String> = ["Method #", "Dispatch", "Workforce mgmt", "Personnel positioning"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(BatchSummary::HEADERS.iter().map(|s| s.to_string()));
        h
    }

    pub fn render(&self) -> String {
        let mut rows = Vec::new();
        for (n, s) in &self.rows {
            let (d, m, p) = ABLATION_ROWS[n - 1];
            let mut row = vec![n.to_string(), label(d), label(m), label(p)];
            row.extend(s.cells());
            rows.push(row);
        }
        if self.show_external {
            for (i, (d, m, p)) in EXTERNAL_ROWS.iter().enumerate() {
                let mut row = vec![(ABLATION_ROWS.len() + i + 1).to_string(), d.to_string(), m.to_string(), p.to_string()];
                row.extend(std::iter::repeat_n("external".to_string(), 4));
                rows.push(row);
            }
        }
        render_table(&Self::headers(), &rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,dispatch,management,positioning,metric,mean,p25,p75\n");
        for (n, s) in &self.rows {
            let (d, m, p) = ABLATION_ROWS[n - 1];
            for (metric, spread) in ["wc", "pur", "afd", "nsw"].iter().zip(s.spreads()) {
                out += &format!("{n},{d},{m},{p},{metric},{},{},{}\n", spread.mean, spread.p25, spread.p75);
            }
        }
        out
    }
}

/// Runs the selected built-in rows (`None` = all), `base.episodes` each.
pub fn ablate(
    base: &ScenarioConfig,
    rows: Option<&[usize]>,
    threads: usize,
    mut progress: impl FnMut(&str),
) -> Result<AblationTable, RunError> {
    let selected: Vec<usize> = rows.map_or_else(|| (1..=ABLATION_ROWS.len()).collect(), <[usize]>::to_vec);
    let mut out = Vec::new();
    for n in selected {
        let mut s = base.clone();
        s.policy = ablation_policy(&base.policy, n)?;
        s.validate()?;
        let summary = BatchSummary::of_outputs(&run_batch(&s, false, threads)?);
        progress(&format!("row {n} ({}): NSW {:.3}", s.policy, summary.nsw));
        out.push((n, summary));
    }
    Ok(AblationTable {
        rows: out,
        show_external: rows.is_none(),
    })
}
