use std::fmt::Write;

use super::{MeanCi, PreferenceStats};
use crate::corpus::ContextClass;

/// One row of the F1 / human-score table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table2Row {
    pub model: String,
    pub activity: MeanCi,
    pub entity: MeanCi,
    pub fluency: Option<f64>,
    pub relevancy: Option<f64>,
}

fn pm(m: &MeanCi) -> String {
    format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.half_width)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// F1 scores (×100, mean ± 90% CI) alongside mean human scores.
pub fn render_table2(rows: &[Table2Row]) -> String {
    let header = ["Model", "F1 Activity", "F1 Entity", "Human Fluency", "Human Relevancy"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| [r.model.clone(), pm(&r.activity), pm(&r.entity), opt(r.fluency), opt(r.relevancy)])
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            let pad = w - c.chars().count();
            if i == 0 {
                let _ = write!(s, "{c}{}", " ".repeat(pad));
            } else {
                let _ = write!(s, " | {}{c}", " ".repeat(pad));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&header.map(String::from));
    out += &(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-") + "\n");
    for row in &body {
        out += &line(row);
    }
    out
}

fn share(s: &super::Share, bold: bool) -> String {
    format!("{:.1} ± {:.1}{}", s.pct, s.ci, if bold { "*" } else { "" })
}

/// Wins/losses/ties in percent, grouped into short- and long-context
/// sections. `*` marks the winning side of a significant difference.
pub fn render_table3(stats: &[PreferenceStats]) -> String {
    let mut out = format!("{:<24} | {:>14} | {:>14} | {:>14}\n", "Opponent", "Wins", "Losses", "Ties");
    for (class, title) in [(Some(ContextClass::Short), "Short Contexts"), (Some(ContextClass::Long), "Long Contexts"), (None, "All Contexts")] {
        let rows: Vec<&PreferenceStats> = stats.iter().filter(|s| s.class == class).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{title}");
        for s in rows {
            let win_star = s.significant && s.wins.pct > s.losses.pct;
            let loss_star = s.significant && s.losses.pct > s.wins.pct;
            let _ = writeln!(
                out,
                "{:<24} | {:>14} | {:>14} | {:>14}",
                format!("{} vs {}", s.subject, s.opponent),
                share(&s.wins, win_star),
                share(&s.losses, loss_star),
                share(&s.ties, false),
            );
        }
    }
    out
}
