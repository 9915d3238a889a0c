//! Seeded episode batches and their `mean (p25-p75)` summaries.

use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use wfdes_core::metrics::Spread;
use wfdes_core::runner::{run_episode, EpisodeOutput, RunError};
use wfdes_core::{EpisodeSummary, ScenarioConfig};

/// Runs episodes `seed, seed+1, ...` of `scenario`, in parallel when
/// `threads` is not 1. Results come back in episode order.
pub fn run_batch(scenario: &ScenarioConfig, record: bool, threads: usize) -> Result<Vec<EpisodeOutput>, RunError> {
    let seeds: Vec<u64> = (0..scenario.episodes as u64).map(|i| scenario.seed + i).collect();
    in_pool(threads, || {
        seeds
            .par_iter()
            .map(|&seed| run_episode(scenario, seed, None, record))
            .collect()
    })
}

/// Runs `f` on a pool of `threads` workers (0 = one per core).
pub fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSummary {
    pub episodes: usize,
    pub wc: Spread,
    pub pur: Spread,
    pub afd: Spread,
    pub nsw: Spread,
}

impl BatchSummary {
    pub const HEADERS: [&'static str; 4] = ["Workforce cost", "Personnel util. rate", "Facility downtime", "Nash social welfare"];

    pub fn of(summaries: &[EpisodeSummary]) -> Self {
        let col = |f: fn(&EpisodeSummary) -> f64| Spread::of(&summaries.iter().map(f).collect::<Vec<_>>());
        Self {
            episodes: summaries.len(),
            wc: col(|s| s.wc),
            pur: col(|s| s.pur),
            afd: col(|s| s.afd),
            nsw: col(|s| s.nsw),
        }
    }

    pub fn of_outputs(outputs: &[EpisodeOutput]) -> Self {
        Self::of(&outputs.iter().map(|o| o.summary).collect::<Vec<_>>())
    }

    pub fn spreads(&self) -> [Spread; 4] {
        [self.wc, self.pur, self.afd, self.nsw]
    }

    /// Table cells; workforce cost gets no decimals, as it runs to thousands.
    pub fn cells(&self) -> [String; 4] {
        [
            format!("{:.0}", self.wc),
            format!("{:.2}", self.pur),
            format!("{:.2}", self.afd),
            format!("{:.2}", self.nsw),
        ]
    }

    /// `stat,wc,pur,afd,nsw` rows at full precision.
    pub fn to_csv(&self) -> String {
        let s = self.spreads();
        let row = |label: &str, pick: fn(&Spread) -> f64| {
            format!("{label},{},{},{},{}\n", pick(&s[0]), pick(&s[1]), pick(&s[2]), pick(&s[3]))
        };
        let mut out = String::from("stat,wc,pur,afd,nsw\n");
        out += &row("mean", |x| x.mean);
        out += &row("p25", |x| x.p25);
        out += &row("p75", |x| x.p75);
        out
    }
}

/// Per-episode `episode_<seed>.csv` and `episode_<seed>.jsonl`, plus
/// `episodes.csv` (one summary line per episode) and `summary.csv`.
pub fn write_outputs(dir: &Path, outputs: &[EpisodeOutput], summary: &BatchSummary) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut episodes = String::from("seed,steps,wc,pur,afd,nsw\n");
    for o in outputs {
        fs::write(dir.join(format!("episode_{}.csv", o.seed)), &o.metrics_csv)?;
        if let Some(t) = &o.trajectory {
            fs::write(dir.join(format!("episode_{}.jsonl", o.seed)), t.to_text())?;
        }
        let s = &o.summary;
        episodes += &format!("{},{},{},{},{},{}\n", o.seed, s.steps, s.wc, s.pur, s.afd, s.nsw);
    }
    fs::write(dir.join("episodes.csv"), episodes)?;
    fs::write(dir.join("summary.csv"), summary.to_csv())
}

/// Plain-text table with left-aligned, space-padded columns.
pub fn render_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            widths[i] = widths[i].max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join(" | ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers);
    out += &(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-") + "\n");
    for r in rows {
        out += &line(r);
    }
    out
}
