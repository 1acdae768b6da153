//! Summaries of result tables and plot-ready figure data.
//!
//! Figure tables are CSV with a fixed column order per kind, preceded by
//! `#` comment lines carrying the kind and the config digest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::registry;
use crate::pipeline::{Mode, ResultRecord, ResultTable};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no successful cells to summarize")]
    EmptyTable,
    #[error("result table lacks the {0} axis")]
    MissingAxis(String),
    #[error("malformed figure table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Family,
    Model,
    Template,
    Mode,
    K,
}

impl GroupKey {
    pub const ALL: [GroupKey; 5] = [Self::Family, Self::Model, Self::Template, Self::Mode, Self::K];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Family => "family",
            Self::Model => "model",
            Self::Template => "template",
            Self::Mode => "mode",
            Self::K => "k",
        }
    }
}

impl FromStr for GroupKey {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown group key {s:?}"))
    }
}

/// Grouping value. `K` sorts numerically, everything else lexically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum KeyValue {
    Text(String),
    Num(usize),
}

fn key_value(r: &ResultRecord, g: GroupKey) -> KeyValue {
    match g {
        GroupKey::Family => KeyValue::Text(r.family.clone()),
        GroupKey::Model => KeyValue::Text(r.model_id.clone()),
        GroupKey::Template => KeyValue::Text(r.template_id.clone()),
        GroupKey::Mode => KeyValue::Text(r.mode.as_str().to_string()),
        GroupKey::K => KeyValue::Num(r.k),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryRow {
    pub family: Option<String>,
    pub model: Option<String>,
    pub template: Option<String>,
    pub mode: Option<Mode>,
    pub k: Option<usize>,
    pub mean_accuracy: f64,
    pub accuracy_variance: f64,
    pub count: usize,
    pub min: f64,
    pub max: f64,
    /// Failed cells that fell into this group.
    pub errors: usize,
}

/// Mean and population variance. Values are summed in sorted order so the
/// result does not depend on input order.
fn moments(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.max(0.0))
}

#[derive(Default)]
struct Bucket {
    accs: Vec<f64>,
    errors: usize,
    sample: Option<ResultRecord>,
}

/// Groups successful cells by `group_by` and summarizes eval accuracy.
/// Rows come out sorted by key; groups made only of failed cells are dropped.
pub fn aggregate(rt: &ResultTable, group_by: &[GroupKey]) -> Result<Vec<SummaryRow>, ReportError> {
    let mut keys: Vec<GroupKey> = group_by.to_vec();
    keys.sort();
    keys.dedup();
    let mut buckets: BTreeMap<Vec<KeyValue>, Bucket> = BTreeMap::new();
    for r in &rt.records {
        let key: Vec<KeyValue> = keys.iter().map(|&g| key_value(r, g)).collect();
        let b = buckets.entry(key).or_default();
        match r.eval_accuracy.filter(|_| !r.is_error()) {
            Some(a) => {
                b.accs.push(a);
                b.sample.get_or_insert_with(|| r.clone());
            }
            None => b.errors += 1,
        }
    }
    let rows: Vec<SummaryRow> = buckets
        .into_values()
        .filter_map(|mut b| {
            let sample = b.sample.take()?;
            let (mean, var) = moments(&mut b.accs);
            let has = |g| keys.contains(&g);
            Some(SummaryRow {
                family: has(GroupKey::Family).then(|| sample.family.clone()),
                model: has(GroupKey::Model).then(|| sample.model_id.clone()),
                template: has(GroupKey::Template).then(|| sample.template_id.clone()),
                mode: has(GroupKey::Mode).then_some(sample.mode),
                k: has(GroupKey::K).then_some(sample.k),
                mean_accuracy: mean,
                accuracy_variance: var,
                count: b.accs.len(),
                min: b.accs[0],
                max: b.accs[b.accs.len() - 1],
                errors: b.errors,
            })
        })
        .collect();
    if rows.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    Ok(rows)
}

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "family",
    "model",
    "template",
    "mode",
    "k",
    "mean_accuracy",
    "accuracy_variance",
    "count",
    "min",
    "max",
    "errors",
];

/// Summary rows as CSV in [`SUMMARY_COLUMNS`] order, keys that were not
/// grouped on left empty.
pub fn summary_csv(rows: &[SummaryRow], config_digest: &str) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.family.clone().unwrap_or_default(),
            r.model.clone().unwrap_or_default(),
            r.template.clone().unwrap_or_default(),
            r.mode.map(|m| m.to_string()).unwrap_or_default(),
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            r.mean_accuracy.to_string(),
            r.accuracy_variance.to_string(),
            r.count.to_string(),
            r.min.to_string(),
            r.max.to_string(),
            r.errors.to_string(),
        ])
        .expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 cells");
    format!("# config_digest={config_digest}\n{body}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigKind {
    /// Per-cell accuracies by (family, mode) at k = 1 and k = 300.
    ModeViolin,
    /// Template-averaged accuracy per (family, model, k).
    ScalingByK,
    /// Accuracy variance per (family, k).
    VarianceVsK,
    /// Per-cell accuracies by template.
    AccuracyByPrompt,
}

impl FigKind {
    pub const ALL: [FigKind; 4] = [
        Self::ModeViolin,
        Self::ScalingByK,
        Self::VarianceVsK,
        Self::AccuracyByPrompt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ModeViolin => "mode_violin",
            Self::ScalingByK => "scaling_by_k",
            Self::VarianceVsK => "variance_vs_k",
            Self::AccuracyByPrompt => "accuracy_by_prompt",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Self::ModeViolin => &["family", "mode", "k", "model", "template", "accuracy"],
            Self::ScalingByK => &["family", "model", "size_rank", "k", "mean_accuracy", "count"],
            Self::VarianceVsK => &["family", "k", "accuracy_variance", "mean_accuracy", "count"],
            Self::AccuracyByPrompt => &["template", "family", "model", "mode", "k", "accuracy"],
        }
    }
}

impl fmt::Display for FigKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FigKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown figure kind {s:?}"))
    }
}

/// A figure table. Cells are kept as text; numbers use the shortest
/// representation that parses back to the same `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FigTable {
    pub kind: FigKind,
    pub config_digest: String,
    pub rows: Vec<Vec<String>>,
}

const VIOLIN_KS: [usize; 2] = [1, 300];

impl FigTable {
    pub fn columns(&self) -> &'static [&'static str] {
        self.kind.columns()
    }

    /// Values of a column parsed as `f64`; `None` if the column is unknown
    /// or a cell does not parse.
    pub fn column_f64(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns().iter().position(|c| *c == name)?;
        self.rows.iter().map(|r| r[i].parse().ok()).collect()
    }

    pub fn emit(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(self.columns()).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 cells");
        format!(
            "# config_digest={}\n# kind={}\n{body}",
            self.config_digest, self.kind
        )
    }

    pub fn parse(text: &str) -> Result<Self, ReportError> {
        let mut digest = None;
        let mut kind = None;
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            let Some(comment) = line.strip_prefix('#') else { break };
            body_start += line.len();
            let comment = comment.trim();
            if let Some(d) = comment.strip_prefix("config_digest=") {
                digest = Some(d.to_string());
            } else if let Some(k) = comment.strip_prefix("kind=") {
                kind = Some(k.parse::<FigKind>().map_err(ReportError::Malformed)?);
            }
        }
        let digest = digest.ok_or_else(|| ReportError::Malformed("missing config_digest header".into()))?;
        let kind = kind.ok_or_else(|| ReportError::Malformed("missing kind header".into()))?;
        let mut rd = csv::ReaderBuilder::new().from_reader(&text.as_bytes()[body_start..]);
        let header = rd.headers().map_err(|e| ReportError::Malformed(e.to_string()))?;
        if header.iter().ne(kind.columns().iter().copied()) {
            return Err(ReportError::Malformed(format!("unexpected columns for {kind}")));
        }
        let rows = rd
            .records()
            .map(|r| {
                r.map(|r| r.iter().map(str::to_string).collect())
                    .map_err(|e| ReportError::Malformed(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            kind,
            config_digest: digest,
            rows,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.emit())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// First config digest found among the records, or "unknown".
pub fn table_digest(rt: &ResultTable) -> String {
    rt.records
        .iter()
        .find_map(|r| r.config_digest.clone())
        .unwrap_or_else(|| "unknown".to_string())
}

fn cell_rows(rt: &ResultTable) -> Vec<(&ResultRecord, f64)> {
    let mut v: Vec<_> = rt
        .ok_records()
        .filter_map(|r| r.eval_accuracy.map(|a| (r, a)))
        .collect();
    v.sort_by(|(a, x), (b, y)| {
        (&a.family, a.mode.as_str(), a.k, &a.model_id, &a.template_id)
            .cmp(&(&b.family, b.mode.as_str(), b.k, &b.model_id, &b.template_id))
            .then(x.total_cmp(y))
    });
    v
}

/// Builds the figure data of `kind` from the successful cells of `rt`.
pub fn emit_fig_data(rt: &ResultTable, kind: FigKind) -> Result<FigTable, ReportError> {
    if rt.ok_records().next().is_none() {
        return Err(ReportError::EmptyTable);
    }
    let ks: BTreeSet<usize> = rt.ok_records().map(|r| r.k).collect();
    let rows: Vec<Vec<String>> = match kind {
        FigKind::ModeViolin => {
            let rows: Vec<_> = cell_rows(rt)
                .into_iter()
                .filter(|(r, _)| VIOLIN_KS.contains(&r.k))
                .map(|(r, a)| {
                    vec![
                        r.family.clone(),
                        r.mode.to_string(),
                        r.k.to_string(),
                        r.model_id.clone(),
                        r.template_id.clone(),
                        a.to_string(),
                    ]
                })
                .collect();
            if rows.is_empty() {
                return Err(ReportError::MissingAxis("k = 1 or k = 300".into()));
            }
            rows
        }
        FigKind::ScalingByK => aggregate(rt, &[GroupKey::Family, GroupKey::Model, GroupKey::K])?
            .into_iter()
            .map(|s| {
                let model = s.model.unwrap_or_default();
                let rank = registry::lookup(&model)
                    .map(|m| m.size_rank.to_string())
                    .unwrap_or_default();
                vec![
                    s.family.unwrap_or_default(),
                    model,
                    rank,
                    s.k.unwrap_or_default().to_string(),
                    s.mean_accuracy.to_string(),
                    s.count.to_string(),
                ]
            })
            .collect(),
        FigKind::VarianceVsK => {
            if ks.len() < 2 {
                return Err(ReportError::MissingAxis("k (needs at least two values)".into()));
            }
            aggregate(rt, &[GroupKey::Family, GroupKey::K])?
                .into_iter()
                .map(|s| {
                    vec![
                        s.family.unwrap_or_default(),
                        s.k.unwrap_or_default().to_string(),
                        s.accuracy_variance.to_string(),
                        s.mean_accuracy.to_string(),
                        s.count.to_string(),
                    ]
                })
                .collect()
        }
        FigKind::AccuracyByPrompt => {
            let mut cells = cell_rows(rt);
            cells.sort_by(|(a, x), (b, y)| {
                (&a.template_id, &a.family, &a.model_id, a.mode.as_str(), a.k)
                    .cmp(&(&b.template_id, &b.family, &b.model_id, b.mode.as_str(), b.k))
                    .then(x.total_cmp(y))
            });
            cells
                .into_iter()
                .map(|(r, a)| {
                    vec![
                        r.template_id.clone(),
                        r.family.clone(),
                        r.model_id.clone(),
                        r.mode.to_string(),
                        r.k.to_string(),
                        a.to_string(),
                    ]
                })
                .collect()
        }
    };
    Ok(FigTable {
        kind,
        config_digest: table_digest(rt),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::embed::ProviderKind;
    use crate::pipeline::LabelPolicy;
    use proptest::prelude::*;

    fn rec(model: &str, template: &str, mode: Mode, k: usize, acc: Option<f64>) -> ResultRecord {
        ResultRecord {
            provider_kind: ProviderKind::Synthetic,
            model_id: model.into(),
            family: crate::embed::model_family(model, ProviderKind::Synthetic),
            dim: 8,
            template_id: template.into(),
            template: "{}".into(),
            mode,
            k,
            seed: 0,
            train_split: Split::Train,
            eval_split: Split::Test,
            labels: LabelPolicy::Balanced,
            lambda: 1e-4,
            train_accuracy: acc,
            eval_accuracy: acc,
            train_loss: acc.map(|_| 0.5),
            k_effective: acc.map(|_| k),
            n_train: acc.map(|_| 10),
            n_eval: acc.map(|_| 10),
            error: if acc.is_none() { Some("boom".into()) } else { None },
            error_stage: None,
            wall_time_s: None,
            config_digest: Some("abc123".into()),
        }
    }

    fn table(records: Vec<ResultRecord>) -> ResultTable {
        ResultTable { records }
    }

    #[test]
    fn two_cells_mean_and_population_variance() {
        let rt = table(vec![
            rec("m", "copy", Mode::Single, 1, Some(0.7)),
            rec("m", "copy", Mode::Single, 1, Some(0.8)),
        ]);
        let rows = aggregate(&rt, &[GroupKey::Model]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean_accuracy - 0.75).abs() < 1e-12);
        assert!((rows[0].accuracy_variance - 0.0025).abs() < 1e-12);
        assert_eq!((rows[0].count, rows[0].min, rows[0].max), (2, 0.7, 0.8));
    }

    #[test]
    fn single_cell_has_zero_variance() {
        let rows = aggregate(&table(vec![rec("m", "t", Mode::Paired, 10, Some(0.6))]), &[]).unwrap();
        assert_eq!(rows[0].accuracy_variance, 0.0);
        assert_eq!(rows[0].count, 1);
    }

    #[test]
    fn grouping_by_template_over_builtins_gives_five_rows() {
        let mut v = Vec::new();
        for t in crate::prompt::builtin_templates() {
            for k in [1, 10] {
                v.push(rec("m", &t.id, Mode::Single, k, Some(0.5 + k as f64 / 100.0)));
            }
        }
        let rows = aggregate(&table(v), &[GroupKey::Template]).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.template.is_some() && r.model.is_none()));
    }

    #[test]
    fn error_cells_are_counted_not_averaged() {
        let rt = table(vec![
            rec("m", "t", Mode::Single, 1, Some(0.9)),
            rec("m", "t", Mode::Single, 1, None),
            rec("x", "t", Mode::Single, 1, None),
        ]);
        let rows = aggregate(&rt, &[GroupKey::Model]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].count, rows[0].errors, rows[0].mean_accuracy), (1, 1, 0.9));
        assert!(matches!(
            aggregate(&table(vec![rec("x", "t", Mode::Single, 1, None)]), &[]),
            Err(ReportError::EmptyTable)
        ));
    }

    #[test]
    fn k_groups_sort_numerically() {
        let rt = table(vec![
            rec("m", "t", Mode::Single, 300, Some(0.9)),
            rec("m", "t", Mode::Single, 50, Some(0.8)),
            rec("m", "t", Mode::Single, 1, Some(0.6)),
        ]);
        let ks: Vec<_> = aggregate(&rt, &[GroupKey::K]).unwrap().iter().map(|r| r.k.unwrap()).collect();
        assert_eq!(ks, [1, 50, 300]);
    }

    fn sweep_like() -> ResultTable {
        let mut v = Vec::new();
        for (i, t) in ["a", "b", "c"].iter().enumerate() {
            for mode in [Mode::Single, Mode::Paired] {
                for k in [1, 10, 300] {
                    let acc = 0.6 + 0.01 * i as f64 + k as f64 / 1000.0;
                    v.push(rec("text-embedding-ada-002", t, mode, k, Some(acc)));
                    v.push(rec("synthetic-8", t, mode, k, Some(acc / 2.0)));
                }
            }
        }
        table(v)
    }

    #[test]
    fn scaling_by_k_has_one_row_per_family_model_k() {
        let f = emit_fig_data(&sweep_like(), FigKind::ScalingByK).unwrap();
        assert_eq!(f.rows.len(), 2 * 3);
        let counts = f.column_f64("count").unwrap();
        assert!(counts.iter().all(|&c| c == 6.0));
        let ada: Vec<_> = f.rows.iter().filter(|r| r[1] == "text-embedding-ada-002").collect();
        assert!(ada.iter().all(|r| !r[2].is_empty()));
        assert_eq!(f.config_digest, "abc123");
    }

    #[test]
    fn variance_vs_k_needs_two_ks() {
        let rt = table(vec![rec("m", "a", Mode::Single, 1, Some(0.6)), rec("m", "b", Mode::Single, 1, Some(0.7))]);
        assert!(matches!(emit_fig_data(&rt, FigKind::VarianceVsK), Err(ReportError::MissingAxis(_))));
        let f = emit_fig_data(&sweep_like(), FigKind::VarianceVsK).unwrap();
        assert_eq!(f.rows.len(), 2 * 3);
    }

    #[test]
    fn mode_violin_keeps_only_k1_and_k300() {
        let f = emit_fig_data(&sweep_like(), FigKind::ModeViolin).unwrap();
        assert_eq!(f.rows.len(), 2 * 3 * 2 * 2);
        assert!(f.rows.iter().all(|r| r[2] == "1" || r[2] == "300"));
        let rt = table(vec![rec("m", "a", Mode::Single, 10, Some(0.6))]);
        assert!(matches!(emit_fig_data(&rt, FigKind::ModeViolin), Err(ReportError::MissingAxis(_))));
    }

    #[test]
    fn figure_tables_round_trip_and_carry_the_digest() {
        for kind in FigKind::ALL {
            let f = emit_fig_data(&sweep_like(), kind).unwrap();
            let text = f.emit();
            assert!(text.starts_with("# config_digest=abc123\n"));
            assert_eq!(FigTable::parse(&text).unwrap(), f);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fig.csv");
        let f = emit_fig_data(&sweep_like(), FigKind::AccuracyByPrompt).unwrap();
        f.write(&path).unwrap();
        assert_eq!(FigTable::read(&path).unwrap(), f);
    }

    #[test]
    fn summary_csv_leaves_ungrouped_keys_empty() {
        let rt = table(vec![rec("m", "t", Mode::Paired, 10, Some(0.5))]);
        let text = summary_csv(&aggregate(&rt, &[GroupKey::Mode]).unwrap(), "d1");
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "# config_digest=d1");
        assert_eq!(lines[1], SUMMARY_COLUMNS.join(","));
        assert_eq!(lines[2], ",,,paired,,0.5,0,1,0.5,0.5,0");
    }

    #[test]
    fn parse_rejects_missing_header() {
        assert!(FigTable::parse("family,k\nx,1\n").is_err());
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(
            accs in proptest::collection::vec(0.0f64..1.0, 1..40),
            seed in any::<u64>(),
        ) {
            let v: Vec<_> = accs
                .iter()
                .enumerate()
                .map(|(i, &a)| rec(["m1", "m2"][i % 2], ["a", "b", "c"][i % 3], Mode::Single, [1, 10][i % 2], Some(a)))
                .collect();
            let mut shuffled = v.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed));
            for keys in [&[][..], &[GroupKey::Model][..], &[GroupKey::Template, GroupKey::K][..]] {
                prop_assert_eq!(aggregate(&table(v.clone()), keys).unwrap(), aggregate(&table(shuffled.clone()), keys).unwrap());
            }
        }

        #[test]
        fn emitted_cells_round_trip(accs in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..20)) {
            let v: Vec<_> = accs.iter().enumerate().map(|(i, &a)| rec("m", &format!("t,{i}\""), Mode::Paired, 1, Some(a))).collect();
            let f = emit_fig_data(&table(v), FigKind::AccuracyByPrompt).unwrap();
            prop_assert_eq!(FigTable::parse(&f.emit()).unwrap(), f);
        }
    }
}
