use super::RunReport;

fn seconds(s: f64) -> String {
    if s < 1.0 {
        "<1".to_string()
    } else {
        format!("{}", s.round() as u64)
    }
}

/// Header row plus one row per module label, then the modules sum, the
/// iteration total, found nodes and nodes per second.
pub fn report_rows(report: &RunReport) -> Vec<Vec<String>> {
    let mut labels: Vec<String> = Vec::new();
    for it in &report.iterations {
        for m in &it.modules {
            if !labels.contains(&m.label) {
                labels.push(m.label.clone());
            }
        }
    }
    let mut rows = Vec::new();
    let mut header = vec!["Iteration".to_string()];
    header.extend(report.iterations.iter().map(|i| i.index.to_string()));
    rows.push(header);
    for label in &labels {
        let mut row = vec![label.clone()];
        for it in &report.iterations {
            row.push(match it.modules.iter().find(|m| &m.label == label) {
                Some(m) if m.error.is_some() => format!("{} (failed)", seconds(m.duration_s)),
                Some(m) => seconds(m.duration_s),
                None => "-".to_string(),
            });
        }
        rows.push(row);
    }
    let mut push = |name: &str, f: &dyn Fn(&super::IterationReport) -> String| {
        let mut row = vec![name.to_string()];
        row.extend(report.iterations.iter().map(f));
        rows.push(row);
    };
    push("Modules", &|i| seconds(i.module_total_s()));
    push("Total", &|i| seconds(i.duration_s));
    push("Number of found nodes", &|i| i.nodes_found.to_string());
    push("Nodes per second", &|i| format!("{:.2}", i.nodes_per_second));
    rows
}

/// Plain-text table, one column per iteration.
pub fn report_table(report: &RunReport) -> String {
    let rows = report_rows(report);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let line = |r: &Vec<String>| -> String {
        r.iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let rule: String = widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-");
    let mut out = String::new();
    let n = rows.len();
    for (i, r) in rows.iter().enumerate() {
        out.push_str(line(r).trim_end());
        out.push('\n');
        // rules under the header and above the node rows
        if i == 0 || i + 3 == n {
            out.push_str(&rule);
            out.push('\n');
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_csv(report: &RunReport) -> String {
    report_rows(report)
        .iter()
        .map(|r| r.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

#[cfg(test)]
mod tests {
    use super::super::{IterationReport, ModuleTiming, RunStatus};
    use super::*;

    fn module(label: &str, d: f64) -> ModuleTiming {
        ModuleTiming {
            label: label.into(),
            module_id: label.into(),
            duration_s: d,
            targets: 0,
            observations: 0,
            seeds: 0,
            error: None,
        }
    }

    fn iteration(index: u32, modules: Vec<ModuleTiming>, total: f64, nodes: usize) -> IterationReport {
        IterationReport {
            index,
            global_iteration: index,
            targets: 1,
            modules,
            duration_s: total,
            nodes_found: nodes,
            nodes_per_second: nodes as f64 / total,
            seeds_added: 0,
            seeds_dropped: 0,
            version: None,
        }
    }

    fn report(iterations: Vec<IterationReport>) -> RunReport {
        RunReport {
            run_id: "run-1".into(),
            policy: "p".into(),
            status: RunStatus::Completed,
            iterations,
            total_duration_s: 0.0,
            final_version: None,
            notes: vec![],
        }
    }

    #[test]
    fn published_run_shape() {
        let chain = |a: f64, b: f64, c: f64, d: f64| {
            vec![module("nmap(-A)", a), module("dgw", b), module("nmap(udp161)", c), module("snmpwalk", d)]
        };
        let r = report(vec![
            iteration(1, chain(7.0, 0.1, 0.2, 0.3), 7.0, 2),
            iteration(2, chain(27.0, 0.1, 2.0, 13.0), 44.0, 15),
            iteration(3, chain(1114.0, 0.4, 8.0, 797.0), 1996.0, 856),
        ]);
        let rows = report_rows(&r);
        assert_eq!(rows[0], vec!["Iteration", "1", "2", "3"]);
        assert_eq!(rows[2], vec!["dgw", "<1", "<1", "<1"]);
        assert_eq!(rows[6], vec!["Total", "7", "44", "1996"]);
        assert_eq!(rows[7], vec!["Number of found nodes", "2", "15", "856"]);
        assert_eq!(rows[8], vec!["Nodes per second", "0.29", "0.34", "0.43"]);
        let text = report_table(&r);
        assert_eq!(text.lines().count(), 11);
        assert!(report_csv(&r).starts_with("Iteration,1,2,3\nnmap(-A),7,27,1114\n"));
    }

    #[test]
    fn single_iteration_has_one_column() {
        let r = report(vec![iteration(1, vec![module("a,b", 0.5)], 0.5, 3)]);
        let rows = report_rows(&r);
        assert!(rows.iter().all(|row| row.len() == 2));
        assert!(report_csv(&r).contains("\"a,b\",<1"));
    }
}
