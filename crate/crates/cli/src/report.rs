//! Plain-text tables for the terminal.

use afcfit::metrics::{EvalReport, GroupMetrics};

fn row(label: &str, g: &GroupMetrics) -> String {
    format!(
        "{label:<16} {:>8} {:>8.2} {:>8.4} {:>8.2} {:>8.2} {:>8.2} {:>8.4}",
        g.t_count, g.aj, g.nll, g.afc2_distance_only, g.afc2_surface, g.aj_simulated, g.nll_simulated
    )
}

pub fn eval_table(report: &EvalReport) -> String {
    let mut out = format!("distance: {}  (seed {})\n", report.distance_name, report.seed);
    out.push_str(&format!(
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "", "T", "AJ", "NLL", "2AFC-d", "2AFC-s", "AJ(sim)", "NLL(sim)"
    ));
    out.push_str(&row("all", &report.overall()));
    out.push('\n');
    let grouped = report.per_group.len() > 1 || report.per_group.keys().any(|k| k != afcfit::data::DEFAULT_GROUP);
    if grouped {
        out.push_str("per group:\n");
        for (label, g) in &report.per_group {
            out.push_str(&row(label, g));
            out.push('\n');
        }
    }
    out
}
