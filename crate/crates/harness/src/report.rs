//! CSV and Markdown emission. Row files keep full precision; summary tables
//! use three decimals.

use rankcomp_core::competition::{EvalRow, EvalTable, Measure};

use crate::error::HarnessError;

const ROW_HEADER: [&str; 23] = [
    "query_id",
    "round",
    "player_id",
    "doc_id",
    "agent",
    "player_kind",
    "rank_curr",
    "rank_next",
    "n",
    "raw_promotion",
    "scaled_promotion",
    "score",
    "rf_raw",
    "orig_faith",
    "corp_faith_dense",
    "corp_faith_sparse",
    "rcf_mod_dense",
    "rcf_curr_dense",
    "rcf_mod_sparse",
    "rcf_curr_sparse",
    "quality",
    "relevance",
    "flags",
];

fn csv_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(format!("csv: {e}"))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rows_csv(rows: &[EvalRow]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ROW_HEADER).map_err(csv_err)?;
    for r in rows {
        let f = &r.faithfulness;
        let p = &r.promotion;
        w.write_record([
            r.query_id.clone(),
            r.round.to_string(),
            r.player_id.clone(),
            r.doc_id.clone(),
            r.agent.clone(),
            r.player_kind.as_str().to_string(),
            p.rank_curr.to_string(),
            p.rank_next.to_string(),
            p.n.to_string(),
            p.raw.to_string(),
            p.scaled.to_string(),
            r.score.to_string(),
            f.rf_raw.to_string(),
            f.orig_faith.value.to_string(),
            f.corp_faith_dense().to_string(),
            f.corp_faith_sparse().to_string(),
            f.dense.rcf_mod.to_string(),
            f.dense.rcf_curr.to_string(),
            f.sparse.rcf_mod.to_string(),
            f.sparse.rcf_curr.to_string(),
            opt(r.quality),
            opt(r.relevance),
            r.flags.join(";"),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

fn fixed3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

fn dash(s: String) -> String {
    if s.is_empty() {
        "-".into()
    } else {
        s
    }
}

/// Group means, one row per group.
pub fn table_csv(table: &EvalTable) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["group".to_string(), "rows".to_string()];
    header.extend(Measure::ALL.iter().map(|m| m.header().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for g in &table.groups {
        let mut rec = vec![g.group.clone(), g.rows.to_string()];
        rec.extend(
            Measure::ALL
                .iter()
                .map(|m| fixed3(g.means.get(m).copied().flatten())),
        );
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

/// Pairwise p-values, one row per (pair, measure).
pub fn pvalues_csv(table: &EvalTable) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group_a", "group_b", "measure", "pairs", "p_value"])
        .map_err(csv_err)?;
    for t in &table.tests {
        w.write_record([
            t.group_a.clone(),
            t.group_b.clone(),
            t.measure.header().to_string(),
            t.pairs.to_string(),
            fixed3(t.p_value),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

pub fn table_markdown(table: &EvalTable) -> String {
    let mut out = String::new();
    let mut header = vec!["Group".to_string(), "N".to_string()];
    header.extend(Measure::ALL.iter().map(|m| m.header().to_string()));
    push_row(&mut out, &header);
    push_row(&mut out, &vec!["---".to_string(); header.len()]);
    for g in &table.groups {
        let mut cells = vec![g.group.clone(), g.rows.to_string()];
        cells.extend(
            Measure::ALL
                .iter()
                .map(|m| dash(fixed3(g.means.get(m).copied().flatten()))),
        );
        push_row(&mut out, &cells);
    }

    if !table.tests.is_empty() {
        out.push_str("\nPaired permutation test p-values\n\n");
        let mut header = vec!["Groups".to_string()];
        header.extend(Measure::ALL.iter().map(|m| m.header().to_string()));
        push_row(&mut out, &header);
        push_row(&mut out, &vec!["---".to_string(); header.len()]);
        let mut pairs: Vec<(&str, &str)> = table
            .tests
            .iter()
            .map(|t| (t.group_a.as_str(), t.group_b.as_str()))
            .collect();
        pairs.dedup();
        for (a, b) in pairs {
            let mut cells = vec![format!("{a} vs {b}")];
            cells.extend(
                Measure::ALL
                    .iter()
                    .map(|m| dash(fixed3(table.p_value(a, b, *m)))),
            );
            push_row(&mut out, &cells);
        }
    }
    out
}

fn push_row(out: &mut String, cells: &[String]) {
    out.push_str("| ");
    out.push_str(&cells.join(" | "));
    out.push_str(" |\n");
}
