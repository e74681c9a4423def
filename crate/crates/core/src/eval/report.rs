use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Category, EvalError, EvalRecord, Level};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub high: usize,
    pub medium: usize,
    pub low: usize,
}

impl LevelCounts {
    fn add(&mut self, level: Level) {
        match level {
            Level::High => self.high += 1,
            Level::Medium => self.medium += 1,
            Level::Low => self.low += 1,
        }
    }

    pub fn get(&self, level: Level) -> usize {
        match level {
            Level::High => self.high,
            Level::Medium => self.medium,
            Level::Low => self.low,
        }
    }

    pub fn total(&self) -> usize {
        self.high + self.medium + self.low
    }

    /// `High - 21, Medium - 1`; `-` when empty.
    pub fn cell(&self) -> String {
        let parts: Vec<String> = Level::ALL
            .iter()
            .filter(|l| self.get(**l) > 0)
            .map(|l| format!("{} - {}", l.as_str(), self.get(*l)))
            .collect();
        if parts.is_empty() {
            "-".to_string()
        } else {
            parts.join(", ")
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub questions: usize,
    pub recall: LevelCounts,
    pub precision: LevelCounts,
    pub accuracy: LevelCounts,
}

impl CategoryRow {
    fn add(&mut self, recall: Level, precision: Level, accuracy: Level) {
        self.questions += 1;
        self.recall.add(recall);
        self.precision.add(precision);
        self.accuracy.add(accuracy);
    }
}

/// Rating tallies for every category (all seven, zero rows included) and
/// the grand total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub categories: BTreeMap<Category, CategoryRow>,
    pub total: CategoryRow,
}

impl AggregateReport {
    pub fn row(&self, category: Category) -> &CategoryRow {
        &self.categories[&category]
    }
}

pub fn aggregate(records: &[EvalRecord]) -> Result<AggregateReport, EvalError> {
    let mut categories: BTreeMap<Category, CategoryRow> =
        Category::ALL.iter().map(|c| (*c, CategoryRow::default())).collect();
    let mut total = CategoryRow::default();
    for r in records {
        let rating = r.rating.as_ref().ok_or_else(|| EvalError::UnratedRecord(r.question.id.clone()))?;
        let row = categories.get_mut(&r.question.category).expect("all categories present");
        row.add(rating.recall, rating.precision, rating.accuracy);
        total.add(rating.recall, rating.precision, rating.accuracy);
    }
    Ok(AggregateReport { categories, total })
}

/// Aligned text table: category, question count, then one tally column per
/// metric.
pub fn render_table(report: &AggregateReport) -> String {
    let header = ["Category", "# of Questions", "Recall", "Precision", "Accuracy"].map(String::from);
    let row = |label: &str, r: &CategoryRow| {
        [label.to_string(), r.questions.to_string(), r.recall.cell(), r.precision.cell(), r.accuracy.cell()]
    };
    let mut rows = vec![header];
    rows.extend(report.categories.iter().map(|(c, r)| row(c.label(), r)));
    rows.push(row("Total", &report.total));

    let widths: Vec<usize> =
        (0..5).map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (n, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if n == 0 || n == rows.len() - 2 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}
