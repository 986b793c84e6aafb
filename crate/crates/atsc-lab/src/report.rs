//! Delay reports: per-intersection average delay for each method and
//! seed, aggregated over evaluation episodes, rendered as a
//! comma-delimited table with a deterministic byte layout.
//!
//! The table has one row per (method, seed) holding the mean delay at
//! each intersection plus a `sum` column that is exactly the row sum,
//! followed by `mean` and `std` rows per method (population std over
//! seeds). Rerunning the same evaluation reproduces the file byte for
//! byte comparisons between reports use the percent-reduction formula
//! `(base - method) / base * 100` on the sum column.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

use atsc_agents::EpisodeMetrics;

use crate::methods::Method;

/// Evaluation outcome for one (method, seed) pair.
#[derive(Debug, Clone)]
pub struct SeedEval {
    pub seed: u64,
    /// Mean delay per intersection over the evaluation episodes.
    pub delay: Vec<f64>,
}

impl SeedEval {
    /// Averages per-episode per-intersection delays over the episodes.
    pub fn from_metrics(seed: u64, metrics: &[EpisodeMetrics]) -> Result<SeedEval> {
        if metrics.is_empty() {
            bail!("no evaluation episodes for seed {seed}");
        }
        let n = metrics[0].delay.len();
        let mut delay = vec![0.0; n];
        for m in metrics {
            if m.delay.len() != n {
                bail!("inconsistent intersection counts across episodes");
            }
            for (acc, d) in delay.iter_mut().zip(&m.delay) {
                *acc += d;
            }
        }
        for d in &mut delay {
            *d /= metrics.len() as f64;
        }
        Ok(SeedEval { seed, delay })
    }

    pub fn sum(&self) -> f64 {
        self.delay.iter().sum()
    }
}

/// All seeds of one method.
#[derive(Debug, Clone)]
pub struct MethodEval {
    pub method: Method,
    pub seeds: Vec<SeedEval>,
}

impl MethodEval {
    pub fn mean_sum(&self) -> f64 {
        self.seeds.iter().map(SeedEval::sum).sum::<f64>() / self.seeds.len() as f64
    }

    pub fn std_sum(&self) -> f64 {
        let mean = self.mean_sum();
        let var = self
            .seeds
            .iter()
            .map(|s| (s.sum() - mean).powi(2))
            .sum::<f64>()
            / self.seeds.len() as f64;
        var.sqrt()
    }

    fn column_mean(&self, i: usize) -> f64 {
        self.seeds.iter().map(|s| s.delay[i]).sum::<f64>() / self.seeds.len() as f64
    }

    fn column_std(&self, i: usize) -> f64 {
        let mean = self.column_mean(i);
        let var = self
            .seeds
            .iter()
            .map(|s| (s.delay[i] - mean).powi(2))
            .sum::<f64>()
            / self.seeds.len() as f64;
        var.sqrt()
    }
}

/// Percent reduction of `method` relative to `base` (positive when the
/// method improves on the base).
pub fn percent_reduction(base: f64, method: f64) -> f64 {
    (base - method) / base * 100.0
}

/// Renders the canonical report. Row order follows `evals`; seeds print
/// in their stored order; every float uses fixed six-decimal formatting,
/// so equal inputs produce byte-equal output.
pub fn render_report(evals: &[MethodEval]) -> Result<String> {
    if evals.is_empty() {
        bail!("nothing to report");
    }
    let n = evals[0]
        .seeds
        .first()
        .context("method has no seeds")?
        .delay
        .len();
    let mut out = String::new();
    out.push_str("method,seed");
    for i in 0..n {
        let _ = write!(out, ",delay_i{i}");
    }
    out.push_str(",sum\n");
    for me in evals {
        if me.seeds.is_empty() {
            bail!("{} has no seeds", me.method);
        }
        for se in &me.seeds {
            if se.delay.len() != n {
                bail!("inconsistent intersection counts across methods");
            }
            let _ = write!(out, "{},{}", me.method, se.seed);
            for d in &se.delay {
                let _ = write!(out, ",{d:.6}");
            }
            let _ = writeln!(out, ",{:.6}", se.sum());
        }
        let _ = write!(out, "{},mean", me.method);
        for i in 0..n {
            let _ = write!(out, ",{:.6}", me.column_mean(i));
        }
        let _ = writeln!(out, ",{:.6}", me.mean_sum());
        let _ = write!(out, "{},std", me.method);
        for i in 0..n {
            let _ = write!(out, ",{:.6}", me.column_std(i));
        }
        let _ = writeln!(out, ",{:.6}", me.std_sum());
    }
    // Ordering summary: methods sorted by mean total delay, best first.
    let mut order: Vec<&MethodEval> = evals.iter().collect();
    order.sort_by(|a, b| a.mean_sum().total_cmp(&b.mean_sum()));
    let line = order
        .iter()
        .map(|me| format!("{} ({:.6})", me.method, me.mean_sum()))
        .collect::<Vec<_>>()
        .join(" < ");
    let _ = writeln!(out, "# ordering by mean total delay: {line}");
    Ok(out)
}

/// Parses a report produced by [`render_report`] back into per-seed
/// rows (mean/std rows and the ordering comment are skipped).
pub fn parse_report(text: &str) -> Result<Vec<MethodEval>> {
    let mut evals: Vec<MethodEval> = Vec::new();
    for line in text.lines().skip(1) {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            bail!("malformed report row {line:?}");
        }
        if fields[1] == "mean" || fields[1] == "std" {
            continue;
        }
        let method = Method::parse(fields[0])?;
        let seed: u64 = fields[1].parse().context("seed column")?;
        let delay: Vec<f64> = fields[2..fields.len() - 1]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .context("delay columns")?;
        let declared: f64 = fields[fields.len() - 1].parse().context("sum column")?;
        let sum: f64 = delay.iter().sum();
        if (declared - sum).abs() > 1e-3 {
            bail!("sum column {declared} does not match row sum {sum}");
        }
        match evals.iter_mut().find(|me| me.method == method) {
            Some(me) => me.seeds.push(SeedEval { seed, delay }),
            None => evals.push(MethodEval {
                method,
                seeds: vec![SeedEval { seed, delay }],
            }),
        }
    }
    if evals.is_empty() {
        bail!("report has no data rows");
    }
    Ok(evals)
}

/// Compares every method in `evals` against `base` by mean total delay.
pub fn render_comparison(evals: &[MethodEval], base: Method) -> Result<String> {
    let base_eval = evals
        .iter()
        .find(|me| me.method == base)
        .with_context(|| format!("base method {base} not present in the reports"))?;
    let base_mean = base_eval.mean_sum();
    let mut out = String::new();
    out.push_str("method,mean_sum,std_sum,reduction_vs_base_pct\n");
    for me in evals {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.2}",
            me.method,
            me.mean_sum(),
            me.std_sum(),
            percent_reduction(base_mean, me.mean_sum())
        );
    }
    Ok(out)
}
