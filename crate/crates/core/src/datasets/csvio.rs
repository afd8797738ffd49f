//! CSV persistence.
//!
//! Layout: optional leading metadata comments (`#classes=N`,
//! `#groups=a|b|...`), then a header row. Dense data uses one column per
//! feature; token data uses a single `tokens` column of space-separated ids.
//! `label` is required, `group` and `id` are optional.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::GroupedDataset;
use crate::diffcore::{Example, Input};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn save_csv<T: Scalar>(dataset: &GroupedDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut file = File::create(path)?;
    writeln!(file, "#classes={}", dataset.num_classes)?;
    writeln!(file, "#groups={}", dataset.group_names.join("|"))?;
    let mut w = csv::Writer::from_writer(file);
    let tokens = matches!(dataset.examples.first().map(|e| &e.input), Some(Input::Tokens(_)));
    let mut header: Vec<String> =
        if tokens { vec!["tokens".into()] } else { (0..dataset.input_dim().unwrap_or(0)).map(|j| format!("x{j}")).collect() };
    header.extend(["label", "group", "id"].map(String::from));
    w.write_record(&header)?;
    for e in &dataset.examples {
        let mut row: Vec<String> = match &e.input {
            Input::Tokens(t) => vec![t.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")],
            Input::Dense(x) => x.iter().map(T::to_string).collect(),
        };
        row.push(e.label.to_string());
        row.push(e.group_or_zero().to_string());
        row.push(e.id.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<GroupedDataset<T>> {
    let path = path.as_ref();
    let mut classes: Option<usize> = None;
    let mut names: Option<Vec<String>> = None;
    let mut meta_lines = 0usize;
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let Some(meta) = line.strip_prefix('#') else { break };
        meta_lines += 1;
        if let Some(v) = meta.strip_prefix("classes=") {
            classes = Some(v.trim().parse().map_err(|_| parse_err(meta_lines, "bad #classes value"))?);
        } else if let Some(v) = meta.strip_prefix("groups=") {
            names = Some(v.trim().split('|').map(String::from).collect());
        }
    }

    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header_line = meta_lines + 1;
    let headers = reader.headers().map_err(|e| parse_err(header_line, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let label_col = col("label").ok_or_else(|| parse_err(header_line, "missing label column"))?;
    let group_col = col("group");
    let id_col = col("id");
    let token_col = col("tokens");
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| Some(i) != group_col && Some(i) != id_col && i != label_col && Some(i) != token_col)
        .collect();
    if token_col.is_none() && feature_cols.is_empty() {
        return Err(parse_err(header_line, "no feature or tokens column"));
    }

    let mut examples = Vec::new();
    let mut max_group = 0usize;
    let mut max_label = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let line = header_line + row_idx + 1;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |i: usize| record.get(i).ok_or_else(|| parse_err(line, format!("missing field {i}")));
        let label: usize = field(label_col)?.trim().parse().map_err(|_| parse_err(line, "bad label"))?;
        let group = match group_col {
            Some(c) => field(c)?.trim().parse().map_err(|_| parse_err(line, "bad group"))?,
            None => 0,
        };
        let id = match id_col {
            Some(c) => field(c)?.trim().parse().map_err(|_| parse_err(line, "bad id"))?,
            None => row_idx as u64,
        };
        let input = match token_col {
            Some(c) => Input::Tokens(
                field(c)?
                    .split_whitespace()
                    .map(|t| t.parse::<u32>().map_err(|_| parse_err(line, format!("bad token id {t:?}"))))
                    .collect::<Result<_>>()?,
            ),
            None => Input::Dense(
                feature_cols
                    .iter()
                    .map(|&c| {
                        let raw = field(c)?.trim();
                        raw.parse::<T>().map_err(|_| parse_err(line, format!("bad number {raw:?}")))
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        max_group = max_group.max(group);
        max_label = max_label.max(label);
        examples.push(Example { input, label, group: Some(group), id });
    }
    let num_classes = classes.unwrap_or(max_label + 1).max(2);
    let names = names.unwrap_or_else(|| (0..=max_group).map(|g| format!("group{g}")).collect());
    GroupedDataset::new(examples, names, num_classes)
}
