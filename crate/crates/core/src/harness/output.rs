use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, TableFormat};
use super::experiment::{ExperimentResult, ResultRow};
use crate::controller::ArmValueRecord;
use crate::error::{Error, Result};
use crate::metrics::{entropy_profile, SessionRecord};
use crate::stats::Welford;

pub const RESULTS_STEM: &str = "results";
pub const ARM_VALUES_FILE: &str = "arm_values.jsonl";
pub const PROFILE_STEM: &str = "entropy_profile";
pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Mean and population std of one metric column over a group of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub controller: String,
    pub tag: String,
    pub count: usize,
    pub m: (f64, f64),
    pub accept_rate: (f64, f64),
    pub speedup: (f64, f64),
}

/// One summary per (controller, tag) group that spans at least two seeds, in
/// order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let key = (r.controller.as_str(), r.tag.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .filter_map(|(controller, tag)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.controller == controller && r.tag == tag)
                .collect();
            if group.len() < 2 {
                return None;
            }
            let stat = |f: fn(&ResultRow) -> f64| {
                let w: Welford = group.iter().map(|r| f(r)).collect();
                (w.mean(), w.std_dev())
            };
            Some(SummaryRow {
                controller: controller.to_string(),
                tag: tag.to_string(),
                count: group.len(),
                m: stat(|r| r.m),
                accept_rate: stat(|r| r.accept_rate),
                speedup: stat(|r| r.speedup),
            })
        })
        .collect()
}

/// Header, one line per row, then `mean` and `std` lines per summary group.
pub fn results_table(rows: &[ResultRow], format: TableFormat) -> String {
    let d = format.delimiter();
    let mut out = format!("controller{d}seed{d}tag{d}m{d}accept_rate{d}speedup\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}{d}{}{d}{}{d}{:.6}{d}{:.6}{d}{:.6}",
            r.controller, r.seed, r.tag, r.m, r.accept_rate, r.speedup
        );
    }
    for s in summarize(rows) {
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let v = |pair: (f64, f64)| if pick == 0 { pair.0 } else { pair.1 };
            let _ = writeln!(
                out,
                "{}{d}{label}{d}{}{d}{:.6}{d}{:.6}{d}{:.6}",
                s.controller,
                s.tag,
                v(s.m),
                v(s.accept_rate),
                v(s.speedup)
            );
        }
    }
    out
}

/// Per-position `sqrt(H)` statistics at accepted positions for every run.
pub fn profile_table(result: &ExperimentResult, format: TableFormat) -> String {
    let d = format.delimiter();
    let mut out = format!("controller{d}seed{d}tag{d}position{d}count{d}mean{d}std\n");
    for run in &result.runs {
        for (tag, points) in entropy_profile(&run.sessions) {
            for p in points {
                let _ = writeln!(
                    out,
                    "{}{d}{}{d}{}{d}{}{d}{}{d}{:.6}{d}{:.6}",
                    run.controller, run.seed, tag, p.position, p.count, p.mean, p.std
                );
            }
        }
    }
    out
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    controller: &'a str,
    seed: u64,
    tag: &'a str,
    #[serde(flatten)]
    record: &'a T,
}

fn jsonl<'a, T: Serialize + 'a>(
    result: &'a ExperimentResult,
    pick: impl Fn(&'a super::experiment::ControllerRun) -> &'a [T],
) -> Result<String> {
    let mut out = String::new();
    for run in &result.runs {
        for record in pick(run) {
            let line = Tagged {
                controller: &run.controller,
                seed: run.seed,
                tag: &run.tag,
                record,
            };
            out.push_str(&serde_json::to_string(&line).map_err(|e| Error::config(e.to_string()))?);
            out.push('\n');
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    seeds: &'a [u64],
    files: Vec<String>,
    config: &'a ExperimentConfig,
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Write the results table, arm-value series, entropy profiles, optional
/// session log and the run manifest into `dir`. Returns the paths written.
pub fn emit_results(result: &ExperimentResult, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = result.rows();
    if rows.is_empty() {
        return Err(Error::config("no result rows to write"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = config.format.extension();
    let mut written = Vec::new();
    write(
        dir,
        &format!("{RESULTS_STEM}.{ext}"),
        &results_table(&rows, config.format),
        &mut written,
    )?;
    let arm_values = jsonl::<ArmValueRecord>(result, |r| &r.arm_log)?;
    write(dir, ARM_VALUES_FILE, &arm_values, &mut written)?;
    write(
        dir,
        &format!("{PROFILE_STEM}.{ext}"),
        &profile_table(result, config.format),
        &mut written,
    )?;
    if config.write_sessions {
        let sessions = jsonl::<SessionRecord>(result, |r| &r.sessions)?;
        write(dir, SESSIONS_FILE, &sessions, &mut written)?;
    }
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seeds: &config.seeds,
        files: written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        config,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::config(e.to_string()))?;
    write(dir, MANIFEST_FILE, &(text + "\n"), &mut written)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(controller: &str, seed: u64, m: f64) -> ResultRow {
        ResultRow {
            controller: controller.into(),
            seed,
            tag: "t".into(),
            m,
            accept_rate: 0.5,
            speedup: 1.0,
        }
    }

    #[test]
    fn single_row_table() {
        let t = results_table(&[row("a", 1, 2.0)], TableFormat::Csv);
        assert_eq!(
            t,
            "controller,seed,tag,m,accept_rate,speedup\na,1,t,2.000000,0.500000,1.000000\n"
        );
    }

    #[test]
    fn summary_lines() {
        let rows = [row("a", 1, 2.0), row("a", 2, 4.0), row("b", 1, 1.0)];
        let t = results_table(&rows, TableFormat::Tsv);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[4], "a\tmean\tt\t3.000000\t0.500000\t1.000000");
        assert_eq!(lines[5], "a\tstd\tt\t1.000000\t0.000000\t0.000000");
    }
}
