//! Trial CSV and JSON summary output.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::stats::SummaryReport;
use crate::trace::TrialRecord;

pub const CSV_HEADER: &str = "trial_id,method,epsilon,p,T,m,samples_used,final_gap,success,wall_ms,seed";
const WALL_MS_COLUMN: usize = 9;

/// Records as CSV with a header row and LF line endings. Floats use the
/// shortest representation that parses back to the same value.
pub fn csv_string(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        // T counts proximal stages, so it is two less than the stage count.
        let t = r.stages.saturating_sub(2);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.trial_id,
            r.method,
            r.epsilon_target,
            r.p,
            t,
            r.m,
            r.samples_used,
            r.final_gap,
            r.success,
            r.wall_ms,
            r.seed
        )
        .unwrap();
    }
    out
}

/// Blanks the `wall_ms` column so runs can be compared byte for byte.
pub fn mask_wall_ms(csv: &str) -> String {
    csv.lines()
        .enumerate()
        .map(|(i, line)| {
            if i == 0 {
                return format!("{line}\n");
            }
            let mut fields: Vec<&str> = line.split(',').collect();
            if fields.len() > WALL_MS_COLUMN {
                fields[WALL_MS_COLUMN] = "";
            }
            format!("{}\n", fields.join(","))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub reports: Vec<SummaryReport>,
}

pub fn summary_json(config: &RunConfig, reports: &[SummaryReport]) -> Result<String> {
    let summary = RunSummary {
        config: config.clone(),
        reports: reports.to_vec(),
    };
    let mut s = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes `trials.csv` and `summary.json` into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, config: &RunConfig, records: &[TrialRecord], reports: &[SummaryReport]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trials.csv"), csv_string(records))?;
    std::fs::write(dir.join("summary.json"), summary_json(config, reports)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::stats::empirical_failure;
    use crate::trace::Method;

    fn rec(id: u64, gap: f64, wall: u64) -> TrialRecord {
        TrialRecord {
            trial_id: id,
            method: Method::NaiveMarkov,
            epsilon_target: 0.1,
            p: 0.05,
            stages: 1,
            m: 1,
            samples_used: 1234,
            final_gap: gap,
            success: gap <= 0.1,
            wall_ms: wall,
            seed: 42 + id,
            error: None,
        }
    }

    #[test]
    fn empty_input_is_header_only() {
        assert_eq!(csv_string(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn golden_rows() {
        let csv = csv_string(&[rec(0, 0.0625, 17), rec(1, 0.30000000000000004, 3)]);
        let expected = "trial_id,method,epsilon,p,T,m,samples_used,final_gap,success,wall_ms,seed\n\
                        0,naive-markov,0.1,0.05,0,1,1234,0.0625,true,17,42\n\
                        1,naive-markov,0.1,0.05,0,1,1234,0.30000000000000004,false,3,43\n";
        assert_eq!(csv, expected);
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn masking_ignores_wall_time() {
        let a = csv_string(&[rec(0, 0.05, 17)]);
        let b = csv_string(&[rec(0, 0.05, 99)]);
        assert_ne!(a, b);
        assert_eq!(mask_wall_ms(&a), mask_wall_ms(&b));
        assert_eq!(
            mask_wall_ms(&a).lines().nth(1).unwrap(),
            "0,naive-markov,0.1,0.05,0,1,1234,0.05,true,,42"
        );
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::from_toml(
            "problem = \"quadratic\"\ndim = 2\nmu = 1.0\nlip_grad = 2.0\nmethods = [\"naive-markov\"]\nepsilon = 0.1\np = 0.05\nreplications = 2\n",
        )
        .unwrap();
        let recs = [rec(0, 0.05, 1), rec(1, 0.5, 1)];
        let report = empirical_failure(&recs, 0.1).unwrap();
        let text = summary_json(&cfg, std::slice::from_ref(&report)).unwrap();
        let back: RunSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.reports, vec![report]);
    }
}
