//! Plain-text rendering of a report document. Everything shown here is read
//! back out of the structured document, so the two formats cannot disagree.

use std::fmt::Write;

use serde_json::Value;

fn num(v: &Value) -> String {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() && x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e6) => format!("{x:.3e}"),
            Some(x) if n.is_f64() => {
                let s = format!("{x:.6}");
                s.trim_end_matches('0').trim_end_matches('.').to_string()
            }
            _ => n.to_string(),
        },
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn edge(v: &Value) -> String {
    format!("{}-{}", num(&v["parent"]), num(&v["child"]))
}

fn list(v: &Value) -> String {
    v.as_array().map(|a| a.iter().map(num).collect::<Vec<_>>().join(",")).unwrap_or_default()
}

fn verdict(passed: &Value) -> &'static str {
    if passed.as_bool().unwrap_or(false) {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cost_table(out: &mut String, report: &Value) {
    let task = num(&report["task"]);
    let _ = writeln!(out, "{task} cost for code {}", num(&report["code"]));
    if let Some(l) = report["labeling"].as_array().filter(|l| !l.is_empty()) {
        let _ = writeln!(out, "labeling: {}", l.iter().map(num).collect::<Vec<_>>().join(" < "));
    }
    if !report["mode"].is_null() {
        let _ = writeln!(out, "mode: {}", num(&report["mode"]));
    }
    let _ = writeln!(out, "{:<16} {:>6} {:>10}", "edge", "M_e", "log2 M_e");
    for e in report["entries"].as_array().into_iter().flatten() {
        let _ = writeln!(out, "{:<16} {:>6} {:>10}", edge(&e["edge"]), num(&e["m"]), num(&e["log2_cost"]));
    }
    let _ = writeln!(out, "total: {} ebits", num(&report["total"]));
    if report["lower_estimate"].as_bool() == Some(true) {
        let _ = writeln!(out, "note: not every branch was explored; costs are lower estimates");
    }
}

fn relative(out: &mut String, r: &Value) {
    if r.is_null() {
        let _ = writeln!(out, "relative-state check: skipped (not exhaustive)");
        return;
    }
    let worst = if r["spread_max"].is_null() { &r["concentrate_max"] } else { &r["spread_max"] };
    let _ = writeln!(out, "relative-state check: {} random inputs, worst trace distance {}", num(&r["samples"]), num(worst));
}

fn render_result(out: &mut String, command: &str, r: &Value) {
    match command {
        "cost-spread" => cost_table(out, &r["report"]),
        "cost-concentrate" => {
            cost_table(out, &r["report"]);
            let _ = writeln!(
                out,
                "branches: {}, probability sum {}, max deviation {}: {}",
                num(&r["branches"]),
                num(&r["probability_sum"]),
                num(&r["max_deviation"]),
                verdict(&r["verified"])
            );
        }
        "run-spread" => {
            cost_table(out, &r["report"]);
            let _ = writeln!(out, "lower bound: {}", num(&r["lower_bound"]["verdict"]));
            let v = &r["verification"];
            let _ = writeln!(
                out,
                "branches: {}, probability sum {}, max deviation {}",
                num(&v["branches"]),
                num(&v["probability_sum"]),
                num(&v["max_deviation"])
            );
            relative(out, &r["relative_state"]);
            let b = &r["recorded_branch"];
            let _ = writeln!(out, "recorded branch [{}]: {} events, hash {}", list(&b["outcomes"]), num(&b["events"]), num(&b["final_hash"]));
            let _ = writeln!(out, "{}", verdict(&r["passed"]));
        }
        "run-concentrate" => {
            cost_table(out, &r["report"]);
            let _ = writeln!(
                out,
                "branches: {}, probability sum {}, max deviation {}",
                num(&r["branches"]),
                num(&r["probability_sum"]),
                num(&r["max_deviation"])
            );
            relative(out, &r["relative_state"]);
            let b = &r["recorded_branch"];
            let _ = writeln!(out, "recorded branch [{}], probability {}:", list(&b["outcomes"]), num(&b["probability"]));
            for m in b["measurements"].as_array().into_iter().flatten() {
                let _ = writeln!(out, "  {} measures -> {} (p = {})", num(&m["party"]), num(&m["outcome"]), num(&m["probability"]));
            }
            let _ = writeln!(out, "  deferred corrections: {}, then the root isometry", num(&b["deferred_corrections"]));
            let _ = writeln!(out, "{}", verdict(&r["passed"]));
        }
        "compare" => {
            let c = &r["comparison"];
            let _ = writeln!(out, "labeling: {}", list(&c["labeling"]).replace(',', " < "));
            let _ = writeln!(out, "{:<16} {:>10} {:>15}", "edge", "spread M_e", "concentrate M_e");
            for e in c["edges"].as_array().into_iter().flatten() {
                let mark = if e["strict"].as_bool() == Some(true) { "  <" } else { "" };
                let _ = writeln!(out, "{:<16} {:>10} {:>15}{mark}", edge(&e["edge"]), num(&e["spread"]), num(&e["concentrate"]));
            }
            let _ = writeln!(out, "totals: spread {}, concentrate {} ebits", num(&c["spread_total"]), num(&c["concentrate_total"]));
            let n = c["violations"].as_array().map_or(0, Vec::len);
            let _ = writeln!(out, "violations: {n}");
        }
        "ki" => {
            let k = &r["ki"];
            let _ = writeln!(out, "dims: R' {}, A {}, B {}", num(&k["dim_reference"]), num(&k["dim_a"]), num(&k["dim_b"]));
            let _ = writeln!(out, "{:>3} {:>10} {:>6} {:>6} {:>6} {:>6} {:>10}", "j", "p_j", "L_A", "R_A", "L_B", "R_B", "lambda0");
            for b in k["blocks"].as_array().into_iter().flatten() {
                let _ = writeln!(
                    out,
                    "{:>3} {:>10} {:>6} {:>6} {:>6} {:>6} {:>10}",
                    num(&b["j"]),
                    num(&b["p"]),
                    num(&b["dim_l_a"]),
                    num(&b["dim_r_a"]),
                    num(&b["dim_l_b"]),
                    num(&b["dim_r_b"]),
                    num(&b["lambda0"])
                );
            }
            let _ = writeln!(out, "K = {} (teleporting the support would need {})", num(&k["k"]), num(&k["k_fallback"]));
            let _ = writeln!(out, "reconstruction error {}", num(&k["reconstruction_error"]));
        }
        "verify-trace" => {
            let v = &r["verdict"];
            let _ = writeln!(out, "{} trace of {}, branch [{}]", num(&r["task"]), num(&r["code"]), list(&r["outcomes"]));
            let _ = writeln!(out, "hash matches: {}", v["hash_matches"]);
            let _ = writeln!(out, "probability {} (mismatch {})", num(&v["probability"]), num(&v["probability_mismatch"]));
            let _ = writeln!(out, "deviation {}", num(&v["deviation"]));
            let _ = writeln!(out, "resources match report: {}, event order: {}", v["resources_match"], v["order_ok"]);
            let _ = writeln!(out, "{}", verdict(&v["passed"]));
        }
        _ => {
            let _ = writeln!(out, "{r:#}");
        }
    }
}

pub fn render(doc: &Value) -> String {
    let mut out = String::new();
    if let Some(e) = doc.get("error") {
        let _ = write!(out, "error ({}): {}", num(&e["kind"]), num(&e["message"]));
        return out;
    }
    render_result(&mut out, doc["command"].as_str().unwrap_or(""), &doc["result"]);
    if let Some(p) = doc["result"].get("trace_out").filter(|p| !p.is_null()) {
        let _ = writeln!(out, "trace written to {}", num(p));
    }
    out
}
