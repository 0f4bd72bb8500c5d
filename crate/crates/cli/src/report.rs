//! Markdown summary of a pipeline run.

use std::fmt::Write;

use serde_json::Value;
use subscope_core::decompose::BasisSet;
use subscope_core::subgroup::BiasReport;

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

pub fn render(set: &BasisSet, reports: &[BiasReport], matching: Option<&Value>, metrics: &[Value]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Subgroup discovery report\n");

    let _ = writeln!(s, "## Bases\n");
    let _ = writeln!(s, "Embeddings normalized: {}\n", if set.normalized { "yes" } else { "no" });
    let _ = writeln!(s, "| class | method | components | train rows | score scale | covariance per component |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for b in &set.bases {
        let cov: Vec<String> = b.components.iter().map(|c| format!("{:.4}", c.covariance)).collect();
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.4} | {} |",
            b.class_label,
            b.method.name(),
            b.components.len(),
            b.n_train,
            b.score_scale,
            cov.join(", ")
        );
    }

    let _ = writeln!(s, "\n## Biased subgroups\n");
    let _ = writeln!(s, "| class | k | biased | validation accuracy per pseudo-subgroup | counts |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for r in reports {
        let acc: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.3}")).collect();
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            r.class,
            r.k,
            fmt_list(&r.biased),
            acc.join(", "),
            fmt_list(&r.counts)
        );
    }
    let empty: Vec<String> = reports
        .iter()
        .flat_map(|r| r.empty.iter().map(move |e| format!("class {} subgroup {e}", r.class)))
        .collect();
    if !empty.is_empty() {
        let _ = writeln!(s, "\nEmpty pseudo-subgroups (never flagged): {}", empty.join("; "));
    }

    if let Some(m) = matching {
        let _ = writeln!(s, "\n## Matching against references\n");
        let _ = writeln!(s, "| class | assignment | total |cos| | mean |cos| |");
        let _ = writeln!(s, "|---|---|---|---|");
        for c in m["classes"].as_array().into_iter().flatten() {
            let sigma: Vec<String> = c["sigma"]
                .as_array()
                .into_iter()
                .flatten()
                .enumerate()
                .map(|(i, j)| format!("{i}→{j}"))
                .collect();
            let _ = writeln!(
                s,
                "| {} | {} | {:.4} | {:.4} |",
                c["class"],
                sigma.join(" "),
                c["total"].as_f64().unwrap_or(f64::NAN),
                c["mean"].as_f64().unwrap_or(f64::NAN)
            );
        }
        let _ = writeln!(
            s,
            "\nMean over classes: {:.4} (mean |cos|), {:.4} (total)",
            m["mean_similarity"].as_f64().unwrap_or(f64::NAN),
            m["mean_total"].as_f64().unwrap_or(f64::NAN)
        );
        if let Some(rate) = m["detection"]["mean_success"].as_f64() {
            let _ = writeln!(s, "\nBiased-subgroup detection success: {rate:.3}");
        }
    }

    if !metrics.is_empty() {
        let _ = writeln!(s, "\n## Mitigation\n");
        let _ = writeln!(s, "| method | augmented rows | overall acc | worst | 2nd worst |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for m in metrics {
            let worst = m["worst"].as_array();
            let nth = |i: usize| {
                worst.and_then(|w| w.get(i)).and_then(Value::as_f64).map_or("-".to_string(), |v| format!("{v:.3}"))
            };
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} | {} | {} |",
                m["method"].as_str().unwrap_or("?"),
                m["augmented_rows"],
                m["overall_acc"].as_f64().unwrap_or(f64::NAN),
                nth(0),
                nth(1)
            );
        }
    }
    s
}
