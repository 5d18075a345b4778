//! Report serialization. JSON output is canonical: object keys sorted and
//! every float printed with six decimals, so equal inputs give equal bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::aggregate::ResponsibilityTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
    Markdown,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Markdown => "md",
        }
    }
}

pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("report types serialize");
    let mut out = String::new();
    write_value(&value, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(value: &Value, depth: usize, out: &mut String) {
    let pad = |out: &mut String, d: usize| out.extend(std::iter::repeat_n("  ", d));
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) if n.is_f64() => {
            let _ = write!(out, "{:.6}", n.as_f64().expect("f64 number"));
        }
        Value::Number(n) => {
            let _ = write!(out, "{n}");
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, depth + 1);
                write_value(item, depth + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            // serde_json's default map is ordered by key
            out.push_str("{\n");
            for (i, (k, v)) in map.iter().enumerate() {
                pad(out, depth + 1);
                out.push_str(&serde_json::to_string(k).expect("strings serialize"));
                out.push_str(": ");
                write_value(v, depth + 1, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push('}');
        }
    }
}

/// FR ranking, length contribution, and (when given) top-k appearance
/// counts as markdown tables.
pub fn markdown(table: &ResponsibilityTable, topk: Option<(usize, &BTreeMap<String, usize>)>) -> String {
    let mut out =
        String::from("## Feature responsibility\n\n| rank | feature | FR | normalized |\n|---|---|---|---|\n");
    for (i, f) in table.ranking.iter().enumerate() {
        let _ = writeln!(out, "| {} | {} | {:.6} | {:.6} |", i + 1, f, table.fr[f], table.normalized_fr[f]);
    }
    out.push_str("\n## Contribution by combination length\n\n| length | FR share (%) |\n|---|---|\n");
    for (len, pct) in &table.by_length_contribution {
        let _ = writeln!(out, "| {len} | {pct:.6} |");
    }
    if let Some((k, counts)) = topk {
        let _ = write!(out, "\n## Top-{k} appearances\n\n| feature | count |\n|---|---|\n");
        let mut rows: Vec<(&String, &usize)> = counts.iter().collect();
        rows.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        for (f, c) in rows {
            let _ = writeln!(out, "| {f} | {c} |");
        }
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::feature_responsibility;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_floats_fixed() {
        let v = json!({"b": 1.0, "a": [1, 0.5], "c": {"z": null, "y": "s\"q"}});
        let text = canonical_json(&v);
        assert_eq!(
            text,
            "{\n  \"a\": [\n    1,\n    0.500000\n  ],\n  \"b\": 1.000000,\n  \"c\": {\n    \"y\": \"s\\\"q\",\n    \"z\": null\n  }\n}\n"
        );
        assert_eq!(canonical_json(&v), text);
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["a"][1], 0.5);
    }

    #[test]
    fn markdown_lists_every_length() {
        let ids: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
        let results = vec![vec![vec!["A".to_string()], vec!["B".to_string(), "C".to_string()]]];
        let t = feature_responsibility(&ids, &results);
        let md = markdown(&t, None);
        assert!(md.contains("| 1 | 66.666667 |"));
        assert!(md.contains("| 2 | 33.333333 |"));
        assert!(md.contains("| 1 | A | 1.000000 | 1.000000 |"));
    }
}
