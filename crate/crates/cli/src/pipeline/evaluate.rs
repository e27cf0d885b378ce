//! Scores every report row against the ground truth of the test cases.

use cardioseg::metrics::{evaluate_case, MetricsReport, ReportRow};
use cardioseg::volume::read_nifti;
use cardioseg::Result;
use rayon::prelude::*;

use super::data::{cases, load_labeled, Role};
use super::predict::{row_path, ROWS};
use super::{write_file, write_json, Pipeline, Stage, StageOutput};

pub const REPORT_FILE: &str = "report.tsv";
pub const REPORT_JSON: &str = "report.json";
pub const CASES_FILE: &str = "cases.tsv";

pub(super) fn run(p: &Pipeline) -> Result<StageOutput> {
    let dir = p.stage_dir(Stage::Evaluate);
    let conn = p.cfg.metrics.connectivity;
    let test: Vec<_> = cases(p)?.into_iter().filter(|c| c.role == Role::Test).collect();
    let truths = test.par_iter().map(|c| load_labeled(p, c)).collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport::default();
    for row in ROWS {
        let cases = test
            .par_iter()
            .zip(&truths)
            .map(|(case, (volume, truth))| {
                let (pred, _) = read_nifti::<u8>(&row_path(p, &case.id, row))?;
                evaluate_case(&case.id, &pred, &truth.data, volume.spacing, conn)
            })
            .collect::<Result<Vec<_>>>()?;
        report.rows.push(ReportRow { variant: row.to_string(), cases });
    }
    let files = vec![dir.join(REPORT_FILE), dir.join(CASES_FILE), dir.join(REPORT_JSON)];
    write_file(&files[0], report.to_tsv().as_bytes())?;
    write_file(&files[1], report.cases_tsv().as_bytes())?;
    write_json(&files[2], &report)?;
    let overall: serde_json::Map<_, _> = report
        .rows
        .iter()
        .map(|r| (r.variant.clone(), serde_json::json!(r.overall().mean)))
        .collect();
    Ok(StageOutput { files, summary: serde_json::json!({ "cases": test.len(), "overall_mean": overall }) })
}
