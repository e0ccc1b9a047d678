use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::experiment::ExperimentRun;
use super::report::{ReportDocument, MIA_REPORT_FIELDS, REPORT_FIELDS, SCHEMA_VERSION};
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const INVALID_FILE: &str = "report.invalid.json";

fn write(path: &Path, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    files.push(path.to_path_buf());
    Ok(())
}

/// Writes `report.json` plus CSV sidecars (`history.csv`, `roc_<kind>.csv`,
/// `hist_epoch<k>.csv`, `projection.csv`). The report is written last, via a
/// temporary file and rename, so a failure never leaves a partial report.
pub fn export_report(report: &ReportDocument, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    write(&dir.join("history.csv"), &report.history.to_csv(), &mut files)?;
    for c in &report.curves {
        write(&dir.join(format!("roc_{}.csv", c.kind)), &c.curve.to_csv(), &mut files)?;
    }
    for s in &report.snapshots {
        write(&dir.join(format!("hist_epoch{}.csv", s.epoch)), &s.histogram.to_csv(), &mut files)?;
    }
    let mut projection = String::from("index,x,y,class,is_vulnerable\n");
    for p in &report.projection {
        projection.push_str(&format!(
            "{},{:?},{:?},{},{}\n",
            p.index,
            p.x,
            p.y,
            p.class,
            u8::from(p.is_vulnerable)
        ));
    }
    write(&dir.join("projection.csv"), &projection, &mut files)?;

    let body = serde_json::to_string_pretty(report)?;
    let tmp = dir.join(format!("{REPORT_FILE}.tmp"));
    fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
    let target = dir.join(REPORT_FILE);
    fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
    let _ = fs::remove_file(dir.join(INVALID_FILE));
    files.push(target);
    Ok(files)
}

/// [`export_report`] plus per-attack score dumps (`scores_<kind>.csv`).
pub fn export_run(run: &ExperimentRun, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for s in &run.scores {
        write(&dir.join(format!("scores_{}.csv", s.kind)), &s.to_csv(), &mut files)?;
    }
    files.extend(export_report(&run.report, dir)?);
    Ok(files)
}

/// Marks an output directory whose run aborted; any artifacts already in it
/// are not a valid report.
pub fn write_invalid_marker(dir: &Path, error: &Error) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(INVALID_FILE);
    let body = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "valid": false,
        "error": error.to_string(),
    });
    fs::write(&path, serde_json::to_string_pretty(&body)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_report(path: &Path) -> Result<ReportDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)?;
    validate_report_schema(&value)?;
    Ok(serde_json::from_value(value)?)
}

/// Checks the documented field list and schema version.
pub fn validate_report_schema(value: &Value) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidInput(format!("report schema: {msg}")));
    let Some(obj) = value.as_object() else {
        return bad("not an object".into());
    };
    for f in REPORT_FIELDS {
        if !obj.contains_key(*f) {
            return bad(format!("missing field `{f}`"));
        }
    }
    if let Some(extra) = obj.keys().find(|k| !REPORT_FIELDS.contains(&k.as_str())) {
        return bad(format!("unexpected field `{extra}`"));
    }
    if obj["schema_version"].as_u64() != Some(u64::from(SCHEMA_VERSION)) {
        return bad(format!("schema_version must be {SCHEMA_VERSION}"));
    }
    let Some(attacks) = obj["attacks"].as_array() else {
        return bad("`attacks` is not an array".into());
    };
    for a in attacks {
        let Some(a) = a.as_object() else {
            return bad("attack entry is not an object".into());
        };
        let mut keys: Vec<&str> = a.keys().map(String::as_str).collect();
        keys.sort_unstable();
        let mut expected = MIA_REPORT_FIELDS.to_vec();
        expected.sort_unstable();
        if keys != expected {
            return bad(format!("attack entry has fields {keys:?}, expected {expected:?}"));
        }
        for num in ["auc", "advantage"] {
            match a[num].as_f64() {
                Some(v) if (0.0..=1.0).contains(&v) => {}
                _ => return bad(format!("`{num}` must be a number in [0, 1]")),
            }
        }
    }
    Ok(())
}
