use std::collections::BTreeMap;

use super::RunManifest;
use crate::eval::percent;

/// Accuracy table: rows are (architecture, condition), columns are
/// corpora, cells are mean POS accuracy in percent. The best cell in each
/// column is starred; cells that tie after rounding are all starred.
pub fn render_table(manifests: &[RunManifest]) -> String {
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut columns: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), String> = BTreeMap::new();
    for m in manifests {
        let row = (m.arch.as_str().to_string(), m.condition.as_str().to_string());
        let r = rows.iter().position(|x| *x == row).unwrap_or_else(|| {
            rows.push(row);
            rows.len() - 1
        });
        let c = columns.iter().position(|x| *x == m.corpus).unwrap_or_else(|| {
            columns.push(m.corpus.clone());
            columns.len() - 1
        });
        if let Some(s) = &m.summary {
            cells.insert((r, c), percent(s.pos_accuracy));
        }
    }

    let best: Vec<Option<f64>> = (0..columns.len())
        .map(|c| {
            cells
                .iter()
                .filter(|((_, cc), _)| *cc == c)
                .filter_map(|(_, v)| v.parse::<f64>().ok())
                .reduce(f64::max)
        })
        .collect();

    let mut grid: Vec<Vec<String>> = vec![
        ["arch", "condition"]
            .into_iter()
            .map(String::from)
            .chain(columns.iter().cloned())
            .collect(),
    ];
    for (r, (arch, cond)) in rows.iter().enumerate() {
        let mut line = vec![arch.clone(), cond.clone()];
        for (c, b) in best.iter().enumerate() {
            line.push(match cells.get(&(r, c)) {
                Some(v) if v.parse::<f64>().ok() == *b => format!("{v}*"),
                Some(v) => v.clone(),
                None => "-".to_string(),
            });
        }
        grid.push(line);
    }

    let widths: Vec<usize> = (0..grid[0].len())
        .map(|i| grid.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &grid {
        let cols: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (s, w))| if i < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        out.push_str(cols.join("  ").trim_end());
        out.push('\n');
    }
    out
}
