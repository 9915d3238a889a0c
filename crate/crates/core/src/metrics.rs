//! Workforce cost, utilization and downtime KPIs and their Nash social
//! welfare scalarization. Lower NSW is better.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::window::RollingWindow;

/// How the utilization factor enters the welfare product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PurMode {
    /// Raw utilization.
    #[default]
    Raw,
    /// `1 - |pur - target| / max(target, 1 - target)`.
    TargetProximity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub window_pur: usize,
    pub window_afd: usize,
    pub pur_target: f64,
    pub pur_margin: f64,
    pub pur_mode: PurMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            window_pur: 50,
            window_afd: 50,
            pur_target: 0.75,
            pur_margin: 0.05,
            pur_mode: PurMode::Raw,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.window_pur == 0 {
            return Err(ConfigError::new("metrics.window_pur", "must be at least 1"));
        }
        if self.window_afd == 0 {
            return Err(ConfigError::new("metrics.window_afd", "must be at least 1"));
        }
        let lo = self.pur_target - self.pur_margin;
        let hi = self.pur_target + self.pur_margin;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || self.pur_margin < 0.0 {
            return Err(ConfigError::new(
                "metrics.pur_target",
                "pur_target +/- pur_margin must lie in [0, 1]",
            ));
        }
        Ok(())
    }

    /// Utilization factor fed to the welfare product.
    pub fn pur_factor(&self, pur: f64) -> f64 {
        match self.pur_mode {
            PurMode::Raw => pur,
            PurMode::TargetProximity => pur_target_proximity(pur, self.pur_target),
        }
    }
}

/// `ln(n)`; an empty workforce is degenerate and costs 0.
pub fn workforce_cost(n_personnel: usize) -> f64 {
    if n_personnel == 0 {
        0.0
    } else {
        (n_personnel as f64).ln()
    }
}

/// Working steps over steps present in the window.
pub fn personnel_utilization(window: &RollingWindow) -> f64 {
    window.ratio()
}

/// Steps with an unfulfilled request over steps present in the window.
pub fn facility_downtime(window: &RollingWindow) -> f64 {
    window.ratio()
}

pub fn nash_social_welfare(wc: f64, pur: f64, afd: f64) -> f64 {
    (wc * pur * afd).cbrt()
}

pub fn pur_target_proximity(pur: f64, target: f64) -> f64 {
    1.0 - (pur - target).abs() / target.max(1.0 - target)
}

/// KPI snapshot after one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub t: u64,
    pub wc_step: f64,
    pub wc_cumulative: f64,
    pub pur_per_personnel: Vec<f64>,
    pub pur_mean: f64,
    pub afd_per_facility: Vec<f64>,
    pub afd_mean: f64,
    pub nsw: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "t,wc_step,wc_cumulative,pur_mean,afd_mean,nsw";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.t, self.wc_step, self.wc_cumulative, self.pur_mean, self.afd_mean, self.nsw
        )
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Episode-level aggregates: cumulative workforce cost, mean utilization,
/// mean downtime and the welfare of those three.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub steps: u64,
    pub wc: f64,
    pub pur: f64,
    pub afd: f64,
    pub nsw: f64,
}

/// Accumulates per-step reports into episode aggregates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeAccumulator {
    pub wc_cumulative: f64,
    pur: Vec<f64>,
    afd: Vec<f64>,
    nsw: Vec<f64>,
    wc: Vec<f64>,
}

impl EpisodeAccumulator {
    pub fn record(&mut self, report: &MetricsReport) {
        self.wc_cumulative = report.wc_cumulative;
        self.wc.push(report.wc_step);
        self.pur.push(report.pur_mean);
        self.afd.push(report.afd_mean);
        self.nsw.push(report.nsw);
    }

    pub fn steps(&self) -> u64 {
        self.pur.len() as u64
    }

    pub fn summary(&self, config: &MetricsConfig) -> EpisodeSummary {
        let pur = mean(&self.pur);
        let afd = mean(&self.afd);
        EpisodeSummary {
            steps: self.steps(),
            wc: self.wc_cumulative,
            pur,
            afd,
            nsw: nash_social_welfare(self.wc_cumulative, config.pur_factor(pur), afd),
        }
    }

    /// Mean / p25 / p75 rows over the per-step series, in CSV column order.
    pub fn csv_summary_rows(&self) -> Vec<String> {
        let cols = [&self.wc, &self.pur, &self.afd, &self.nsw];
        let spreads: Vec<Spread> = cols.iter().map(|c| Spread::of(c)).collect();
        let row = |label: &str, pick: fn(&Spread) -> f64| {
            format!(
                "{label},{},{},{},{},{}",
                pick(&spreads[0]),
                self.wc_cumulative,
                pick(&spreads[1]),
                pick(&spreads[2]),
                pick(&spreads[3])
            )
        };
        vec![row("mean", |s| s.mean), row("p25", |s| s.p25), row("p75", |s| s.p75)]
    }
}

/// Linear-interpolated percentile of pre-sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// `mean (p25-p75)` summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub p25: f64,
    pub p75: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean: mean(values),
            p25: percentile(&sorted, 0.25),
            p75: percentile(&sorted, 0.75),
        }
    }

    pub fn iqr(&self) -> f64 {
        self.p75 - self.p25
    }
}

impl fmt::Display for Spread {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = f.precision().unwrap_or(2);
        write!(f, "{:.p$} ({:.p$}-{:.p$})", self.mean, self.p25, self.p75)
    }
}
