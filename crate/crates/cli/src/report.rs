//! Report files: `<name>.txt` (aligned tables), `<name>.tsv`, the resolved
//! `config.json` and a machine-readable `summary.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use readmit_core::eval::{align, pct, tsv, ConfusionMatrix, MeanMetrics, MetricsReport};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Git's blob object id for `bytes`.
pub fn git_blob_sha1(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(git_blob_sha1(&bytes))
}

/// One headline line of a run, percentages as fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub accuracy: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_f: f64,
}

impl SummaryRow {
    pub fn from_mean(label: impl Into<String>, m: &MeanMetrics) -> Self {
        SummaryRow {
            label: label.into(),
            accuracy: m.accuracy,
            macro_recall: m.macro_recall,
            macro_precision: m.macro_precision,
            macro_f: m.macro_f,
        }
    }

    pub fn from_report(label: impl Into<String>, m: &MetricsReport) -> Self {
        SummaryRow {
            label: label.into(),
            accuracy: m.accuracy,
            macro_recall: m.macro_recall,
            macro_precision: m.macro_precision,
            macro_f: m.macro_f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub input_sha1: Option<String>,
    pub seed: Option<u64>,
    pub rows: Vec<SummaryRow>,
}

pub const METRIC_HEADER: [&str; 5] = ["run", "accuracy", "recall", "precision", "f1"];

pub fn metric_cells(rows: &[SummaryRow]) -> Vec<Vec<String>> {
    let mut out = vec![strings(&METRIC_HEADER)];
    for r in rows {
        out.push(vec![
            r.label.clone(),
            pct(r.accuracy),
            pct(r.macro_recall),
            pct(r.macro_precision),
            pct(r.macro_f),
        ]);
    }
    out
}

pub fn strings(cells: &[&str]) -> Vec<String> {
    cells.iter().map(|s| s.to_string()).collect()
}

/// Confusion matrix cells with predicted classes as rows.
pub fn confusion_cells(cm: &ConfusionMatrix, labels: &[&str]) -> Vec<Vec<String>> {
    let mut out = vec![std::iter::once("predicted/actual".to_string())
        .chain(labels.iter().map(|s| s.to_string()))
        .collect()];
    for (p, name) in labels.iter().enumerate() {
        let mut row = vec![name.to_string()];
        row.extend((0..labels.len()).map(|a| cm.get(p, a).to_string()));
        out.push(row);
    }
    out
}

struct Section {
    title: String,
    rows: Vec<Vec<String>>,
}

pub struct Report {
    command: String,
    config: Option<ExperimentConfig>,
    input_sha1: Option<String>,
    seed: Option<u64>,
    sections: Vec<Section>,
    notes: Vec<String>,
    summary: Vec<SummaryRow>,
}

impl Report {
    pub fn new(
        command: &str,
        config: Option<&ExperimentConfig>,
        input_sha1: Option<String>,
        seed: Option<u64>,
    ) -> Self {
        Report {
            command: command.to_string(),
            config: config.cloned(),
            input_sha1,
            seed,
            sections: Vec::new(),
            notes: Vec::new(),
            summary: Vec::new(),
        }
    }

    pub fn table(&mut self, title: impl Into<String>, rows: Vec<Vec<String>>) {
        self.sections.push(Section {
            title: title.into(),
            rows,
        });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn notes(&mut self, notes: impl IntoIterator<Item = String>) {
        self.notes.extend(notes);
    }

    pub fn summary(&mut self, row: SummaryRow) {
        self.summary.push(row);
    }

    fn header(&self) -> Result<String, CliError> {
        let mut s = format!("readmit {}\n", self.command);
        if let Some(h) = &self.input_sha1 {
            s += &format!("input_sha1: {h}\n");
        }
        if let Some(seed) = self.seed {
            s += &format!("seed: {seed}\n");
        }
        if let Some(c) = &self.config {
            s += "config:\n";
            s += &serde_json::to_string_pretty(c).map_err(|e| CliError::Data(e.to_string()))?;
            s.push('\n');
        }
        Ok(s)
    }

    pub fn render_text(&self) -> Result<String, CliError> {
        let mut s = self.header()?;
        for sec in &self.sections {
            s += &format!("\n== {} ==\n", sec.title);
            s += &align(&sec.rows);
        }
        if !self.notes.is_empty() {
            s += "\nnotes:\n";
            for n in &self.notes {
                s += &format!("- {n}\n");
            }
        }
        Ok(s)
    }

    pub fn render_tsv(&self) -> Result<String, CliError> {
        let mut s: String = self.header()?.lines().map(|l| format!("# {l}\n")).collect();
        for sec in &self.sections {
            s += &format!("\n# {}\n", sec.title);
            s += &tsv(&sec.rows);
        }
        for n in &self.notes {
            s += &format!("# note: {n}\n");
        }
        Ok(s)
    }

    /// Writes the report files into `dir` and returns the text rendering.
    pub fn write(&self, dir: &Path) -> Result<String, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        let text = self.render_text()?;
        write(&dir.join(format!("{}.txt", self.command)), &text)?;
        write(&dir.join(format!("{}.tsv", self.command)), &self.render_tsv()?)?;
        if let Some(c) = &self.config {
            write(&dir.join("config.json"), &(json(c)? + "\n"))?;
        }
        let summary = Summary {
            command: self.command.clone(),
            input_sha1: self.input_sha1.clone(),
            seed: self.seed,
            rows: self.summary.clone(),
        };
        write(&dir.join("summary.json"), &(json(&summary)? + "\n"))?;
        Ok(text)
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Data(e.to_string()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(git_blob_sha1(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
        assert_eq!(git_blob_sha1(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
        assert_eq!(
            git_blob_sha1(b"a,b,readmitted\n1,2,0\n"),
            "21a7daa56afa6e1a5141bb3d5ae53843ae972b9b"
        );
    }

    #[test]
    fn text_and_tsv_carry_the_same_tables() {
        let mut r = Report::new("train", None, Some("abc".into()), Some(4));
        r.table(
            "metrics",
            vec![strings(&["run", "accuracy"]), strings(&["mean", "64.41"])],
        );
        r.note("checked");
        let text = r.render_text().unwrap();
        assert!(text.contains("seed: 4\n"));
        assert!(text.contains("== metrics ==\nrun   accuracy\nmean     64.41\n"));
        let t = r.render_tsv().unwrap();
        assert!(t.starts_with("# readmit train\n# input_sha1: abc\n"));
        assert!(t.contains("run\taccuracy\nmean\t64.41\n"));
        assert!(t.ends_with("# note: checked\n"));
    }
}
