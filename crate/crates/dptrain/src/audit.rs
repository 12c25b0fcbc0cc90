//! Offline fairness audit of a predictions file: subgroup blocks along age
//! and sex, per-sex metric curves, and sample-size vs AUROC correlations.

use std::fs;
use std::path::{Path, PathBuf};

use datapipe::{AgeBin, Sex, SubgroupKey, LABEL_NAMES};
use fairmetrics::{
    auroc, pearson_r, subgroup_report, FairnessReport, Grouping, PredictionSet, NUM_LABELS,
};

use crate::RunError;

/// Which demographic axes to audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditGrouping {
    Age,
    Sex,
    Both,
}

impl AuditGrouping {
    pub fn parse(s: &str) -> Result<Self, RunError> {
        match s {
            "age" => Ok(Self::Age),
            "sex" => Ok(Self::Sex),
            "both" => Ok(Self::Both),
            other => Err(RunError::Config(format!(
                "unknown grouping {other:?}; expected \"age\", \"sex\", or \"both\""
            ))),
        }
    }

    fn wants_age(self) -> bool {
        matches!(self, Self::Age | Self::Both)
    }

    fn wants_sex(self) -> bool {
        matches!(self, Self::Sex | Self::Both)
    }
}

/// Reports and files produced by one audit.
#[derive(Debug)]
pub struct AuditOutput {
    pub age: Option<FairnessReport>,
    pub sex: Option<FairnessReport>,
    pub files: Vec<PathBuf>,
}

fn expected_header() -> String {
    let mut header = String::from("filename,patient_id,age,sex,comorbidity_count");
    for name in LABEL_NAMES {
        header.push_str(&format!(",score_{name}"));
    }
    for name in LABEL_NAMES {
        header.push_str(&format!(",target_{name}"));
    }
    header
}

fn parse_field<T: std::str::FromStr>(value: &str, line: usize, what: &str) -> Result<T, RunError> {
    value.parse().map_err(|_| {
        RunError::Config(format!("predictions line {line}: bad {what} value {value:?}"))
    })
}

/// Reads a predictions CSV back into a [`PredictionSet`], returning the
/// manifest hash recorded in its leading comment when present.
///
/// The file must carry the subgroup metadata columns (age, sex); files
/// without them are rejected since no audit is possible.
pub fn load_predictions(path: &Path) -> Result<(PredictionSet, Option<String>), RunError> {
    let text = fs::read_to_string(path)?;
    let mut manifest_hash = None;
    let mut lines = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(hash) = rest.trim().strip_prefix("manifest ") {
                manifest_hash = Some(hash.trim().to_string());
            }
            continue;
        }
        if !line.is_empty() {
            lines.push(line);
        }
    }
    let Some((&header, rows)) = lines.split_first() else {
        return Err(RunError::Config(format!("{} is empty", path.display())));
    };
    if header != expected_header() {
        return Err(RunError::Config(format!(
            "predictions header mismatch (subgroup metadata required): expected \
             {:?}, found {header:?}",
            expected_header()
        )));
    }

    let mut scores = Vec::with_capacity(rows.len());
    let mut targets = Vec::with_capacity(rows.len());
    let mut subgroups = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let line = i + 2;
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 5 + 2 * NUM_LABELS {
            return Err(RunError::Config(format!(
                "predictions line {line}: expected {} fields, found {}",
                5 + 2 * NUM_LABELS,
                fields.len()
            )));
        }
        let age: u32 = parse_field(fields[2], line, "age")?;
        let sex = Sex::parse(fields[3])
            .map_err(|e| RunError::Config(format!("predictions line {line}: {e}")))?;
        let mut score_row = [0.0f64; NUM_LABELS];
        for (slot, value) in score_row.iter_mut().zip(&fields[5..5 + NUM_LABELS]) {
            *slot = parse_field(value, line, "score")?;
        }
        let mut target_row = [false; NUM_LABELS];
        for (slot, value) in target_row.iter_mut().zip(&fields[5 + NUM_LABELS..]) {
            *slot = match *value {
                "0" => false,
                "1" => true,
                other => {
                    return Err(RunError::Config(format!(
                        "predictions line {line}: target must be 0 or 1, found {other:?}"
                    )))
                }
            };
        }
        let age_bin = AgeBin::from_age(age)
            .map_err(|e| RunError::Config(format!("predictions line {line}: {e}")))?;
        let comorbidity_count = target_row.iter().filter(|&&t| t).count();
        scores.push(score_row);
        targets.push(target_row);
        subgroups.push(SubgroupKey { age_bin, sex, comorbidity_count });
    }
    let predictions = PredictionSet::new(scores, targets, subgroups)
        .map_err(|e| RunError::Config(format!("invalid predictions: {e}")))?;
    Ok((predictions, manifest_hash))
}

fn group_columns(grouping: Grouping) -> Vec<&'static str> {
    match grouping {
        Grouping::AgeBins => AgeBin::ALL.iter().map(|b| b.as_str()).collect(),
        Grouping::Sex => vec![Sex::Female.as_str(), Sex::Male.as_str()],
    }
}

/// Renders a fairness report as a block: metric rows × subgroup columns.
/// Subgroups with no members get empty cells.
fn block_csv(report: &FairnessReport, grouping: Grouping, manifest_hash: &str) -> String {
    let columns = group_columns(grouping);
    let cell = |name: &str, pick: &dyn Fn(&fairmetrics::SubgroupEntry) -> String| {
        report
            .entries
            .iter()
            .find(|e| e.name == name)
            .map_or(String::new(), |e| pick(e))
    };
    let mut out = format!("# manifest {manifest_hash}\nmetric");
    for c in &columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    let rows: [(&str, Box<dyn Fn(&fairmetrics::SubgroupEntry) -> String>); 4] = [
        ("n", Box::new(|e| e.n.to_string())),
        ("mean_auroc", Box::new(|e| e.mean_auroc.map_or(String::new(), |v| format!("{v:.6}")))),
        ("std_auroc", Box::new(|e| e.std_auroc.map_or(String::new(), |v| format!("{v:.6}")))),
        ("ptd", Box::new(|e| format!("{:.6}", e.parity_difference))),
    ];
    for (label, pick) in rows {
        out.push_str(label);
        for c in &columns {
            out.push(',');
            out.push_str(&cell(c, pick.as_ref()));
        }
        out.push('\n');
    }
    out
}

fn rows_of_sex(predictions: &PredictionSet, sex: Sex) -> Vec<usize> {
    (0..predictions.len())
        .filter(|&i| predictions.subgroups()[i].sex == sex)
        .collect()
}

fn label_auroc(predictions: &PredictionSet, rows: &[usize], label: usize) -> Option<f64> {
    let scores: Vec<f64> = rows.iter().map(|&r| predictions.scores()[r][label]).collect();
    let targets: Vec<bool> = rows.iter().map(|&r| predictions.targets()[r][label]).collect();
    auroc(&scores, &targets).ok()
}

fn label_positives(predictions: &PredictionSet, rows: &[usize], label: usize) -> usize {
    rows.iter().filter(|&&r| predictions.targets()[r][label]).count()
}

/// Per-label AUROC for each sex, one row per label plus an average row.
fn sex_curves_csv(predictions: &PredictionSet, manifest_hash: &str) -> String {
    let female = rows_of_sex(predictions, Sex::Female);
    let male = rows_of_sex(predictions, Sex::Male);
    let mut out = format!("# manifest {manifest_hash}\nlabel,female_auroc,male_auroc\n");
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for label in 0..NUM_LABELS {
        out.push_str(LABEL_NAMES[label]);
        for (k, rows) in [&female, &male].into_iter().enumerate() {
            out.push(',');
            if let Some(value) = label_auroc(predictions, rows, label) {
                out.push_str(&format!("{value:.6}"));
                sums[k] += value;
                counts[k] += 1;
            }
        }
        out.push('\n');
    }
    out.push_str("average");
    for k in 0..2 {
        out.push(',');
        if counts[k] > 0 {
            out.push_str(&format!("{:.6}", sums[k] / counts[k] as f64));
        }
    }
    out.push('\n');
    out
}

/// Diagnosis-level sample size vs AUROC, overall and per sex, with Pearson
/// correlations between positive-count and AUROC across the eight labels.
fn size_auroc(
    predictions: &PredictionSet,
    manifest_hash: &str,
) -> Result<(String, serde_json::Value), RunError> {
    let all: Vec<usize> = (0..predictions.len()).collect();
    let groups: [(&str, Vec<usize>); 3] = [
        ("all", all),
        ("female", rows_of_sex(predictions, Sex::Female)),
        ("male", rows_of_sex(predictions, Sex::Male)),
    ];
    let mut csv = format!("# manifest {manifest_hash}\ngroup,label,n_positive,auroc\n");
    let mut correlations = serde_json::Map::new();
    for (name, rows) in &groups {
        let mut sizes = Vec::new();
        let mut values = Vec::new();
        for label in 0..NUM_LABELS {
            let n_pos = label_positives(predictions, rows, label);
            csv.push_str(&format!("{name},{},{n_pos}", LABEL_NAMES[label]));
            csv.push(',');
            if let Some(value) = label_auroc(predictions, rows, label) {
                csv.push_str(&format!("{value:.6}"));
                sizes.push(n_pos as f64);
                values.push(value);
            }
            csv.push('\n');
        }
        let r = if sizes.len() >= 2 { pearson_r(&sizes, &values).ok() } else { None };
        correlations.insert(
            (*name).to_string(),
            r.map_or(serde_json::Value::Null, |v| serde_json::json!(v)),
        );
        if let Some(r) = r {
            csv.push_str(&format!("# pearson_r {name} {r:.6}\n"));
        }
    }
    let json = serde_json::json!({
        "manifest_hash": manifest_hash,
        "pearson_r": serde_json::Value::Object(correlations),
    });
    Ok((csv, json))
}

fn write_fairness_pair(
    dir: &Path,
    stem: &str,
    report: &FairnessReport,
    grouping: Grouping,
    manifest_hash: &str,
    files: &mut Vec<PathBuf>,
) -> Result<(), RunError> {
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, block_csv(report, grouping, manifest_hash))?;
    files.push(csv_path);
    let wrapped = serde_json::json!({
        "manifest_hash": manifest_hash,
        "report": serde_json::to_value(report)?,
    });
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&wrapped)?)?;
    files.push(json_path);
    Ok(())
}

/// Runs the audit and writes its artifacts into `out_dir`.
pub fn audit_predictions(
    predictions: &PredictionSet,
    manifest_hash: Option<&str>,
    grouping: AuditGrouping,
    out_dir: &Path,
) -> Result<AuditOutput, RunError> {
    fs::create_dir_all(out_dir)?;
    let hash = manifest_hash.unwrap_or("unknown");
    let mut files = Vec::new();

    let age = if grouping.wants_age() {
        let report = subgroup_report(predictions, Grouping::AgeBins)?;
        write_fairness_pair(out_dir, "audit_age", &report, Grouping::AgeBins, hash, &mut files)?;
        Some(report)
    } else {
        None
    };

    let sex = if grouping.wants_sex() {
        let report = subgroup_report(predictions, Grouping::Sex)?;
        write_fairness_pair(out_dir, "audit_sex", &report, Grouping::Sex, hash, &mut files)?;

        let curves_path = out_dir.join("sex_curves.csv");
        fs::write(&curves_path, sex_curves_csv(predictions, hash))?;
        files.push(curves_path);
        Some(report)
    } else {
        None
    };

    let (size_csv, size_json) = size_auroc(predictions, hash)?;
    let size_csv_path = out_dir.join("size_auroc.csv");
    fs::write(&size_csv_path, size_csv)?;
    files.push(size_csv_path);
    let size_json_path = out_dir.join("size_auroc.json");
    fs::write(&size_json_path, serde_json::to_string_pretty(&size_json)?)?;
    files.push(size_json_path);

    Ok(AuditOutput { age, sex, files })
}
