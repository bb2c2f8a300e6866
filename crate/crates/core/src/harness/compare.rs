//! The four-variant sweep with and without the parameter schedule.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::Result;
use crate::plants::ChangeSchedule;
use crate::redmd::RecursiveEstimator;

use super::config::{ExperimentConfig, Variant};
use super::sim::{compute_metric, initial_estimator, reference_energy, run_closed_loop_with};

/// Environment variable capping the number of worker threads (0 = run inline).
pub const THREADS_ENV: &str = "KOOPMAN_ADAPT_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub with_schedule: bool,
    pub speed: f64,
    pub variant: Variant,
    pub e_cum: Option<f64>,
    pub reference_energy: Option<f64>,
    /// `e_cum / sum ||w||^2`.
    pub normalized: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub speeds: Vec<f64>,
    /// Ordered by schedule (without, with), then speed, then variant.
    pub cells: Vec<CellResult>,
}

impl ComparisonTable {
    pub fn get(&self, with_schedule: bool, speed: f64, variant: Variant) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.with_schedule == with_schedule && c.speed == speed && c.variant == variant)
    }

    pub fn normalized(&self, with_schedule: bool, speed: f64, variant: Variant) -> Option<f64> {
        self.get(with_schedule, speed, variant).and_then(|c| c.normalized)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("schedule,speed,variant,e_cum,reference_energy,normalized,status\n");
        let num = |v: Option<f64>| v.map_or_else(String::new, crate::edmd::format_f64);
        for c in &self.cells {
            let status = c.error.as_deref().map_or("ok".to_string(), |e| {
                format!("\"failed: {}\"", e.replace('"', "'"))
            });
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                if c.with_schedule { "with" } else { "without" },
                crate::edmd::format_f64(c.speed),
                c.variant.name(),
                num(c.e_cum),
                num(c.reference_energy),
                num(c.normalized),
                status
            );
        }
        out
    }

    /// Human-readable table: one row per variant, one column per
    /// (speed, schedule) pair.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "variant");
        for s in &self.speeds {
            let _ = write!(out, "{:>16}{:>16}", format!("v={s} no change"), format!("v={s} change"));
        }
        out.push('\n');
        for v in Variant::ALL {
            let _ = write!(out, "{:<16}", v.name());
            for s in &self.speeds {
                for sched in [false, true] {
                    let cell = match self.get(sched, *s, v) {
                        Some(CellResult { normalized: Some(x), .. }) => format!("{x:.4e}"),
                        Some(_) => "failed".to_string(),
                        None => "-".to_string(),
                    };
                    let _ = write!(out, "{cell:>16}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Worker count from [`THREADS_ENV`], defaulting to the available cores.
pub fn worker_count(cells: usize) -> usize {
    let requested = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().unwrap_or(1),
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    requested.min(cells)
}

fn run_cell(cfg: &ExperimentConfig, est: &RecursiveEstimator, with_schedule: bool, speed: f64, variant: Variant) -> CellResult {
    let mut c = cfg.clone();
    c.run.variant = variant;
    c.run.reference.speed = speed;
    if !with_schedule {
        c.schedule = ChangeSchedule::default();
    }
    let mut out = CellResult {
        with_schedule,
        speed,
        variant,
        e_cum: None,
        reference_energy: None,
        normalized: None,
        error: None,
    };
    match run_closed_loop_with(&c, est.clone(), |_| {}) {
        Ok(recs) => match (compute_metric(&recs), reference_energy(&recs)) {
            (Ok(e), Ok(w)) => {
                out.e_cum = Some(e);
                out.reference_energy = Some(w);
                out.normalized = Some(e / w);
            }
            (Err(e), _) | (_, Err(e)) => out.error = Some(e.to_string()),
        },
        Err(abort) => out.error = Some(abort.to_string()),
    }
    out
}

/// Run every (schedule, speed, variant) cell. All cells share the offline
/// initialisation, which does not depend on the schedule or the speed.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonTable> {
    let est = initial_estimator(cfg)?;
    let mut jobs = Vec::new();
    for sched in [false, true] {
        for &speed in &cfg.run.speeds {
            for v in Variant::ALL {
                jobs.push((sched, speed, v));
            }
        }
    }
    let workers = worker_count(jobs.len());
    let cells = if workers == 0 {
        jobs.iter().map(|&(s, sp, v)| run_cell(cfg, &est, s, sp, v)).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; jobs.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&(s, sp, v)) = jobs.get(i) else { break };
                    let r = run_cell(cfg, &est, s, sp, v);
                    slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("workers finished")
            .into_iter()
            .map(|c| c.expect("every job ran"))
            .collect()
    };
    Ok(ComparisonTable {
        speeds: cfg.run.speeds.clone(),
        cells,
    })
}
