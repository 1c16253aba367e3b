//! `dppsel margins`: determinant margins grouped by hop count.
//!
//! The hop of a supervision tuple is the size of its gold subset. Rows come
//! out per hop plus an `all` aggregate, in raw space always and in adapter
//! space when parameters are given.

use std::collections::BTreeMap;

use serde::Serialize;

use dppsel::adapter::AdapterParams;
use dppsel::io::{examples_from_tuples, read_embeddings, read_tuples};
use dppsel::objective::{TrainingExample, DEFAULT_MAX_NEG_SUBSETS};
use dppsel::pipeline::margin_analysis;

use crate::args::MarginsArgs;
use crate::commands::{check_adapter_dim, load_params_opt, write_or_stdout};
use crate::config::{digest, manifest_beside, pick, pick_required, Ctx, Manifest};
use crate::table;
use crate::CmdResult;

#[derive(Serialize)]
struct MarginRow {
    hop: String,
    space: &'static str,
    count: usize,
    mean_det_pos: f64,
    mean_det_neg_max: f64,
    mean_margin: f64,
    negative_fraction: f64,
    positive_fraction: f64,
}

#[derive(Serialize)]
struct Echo {
    tuples: String,
    embeddings: String,
    params: Option<String>,
    max_neg_subsets: usize,
    out: Option<String>,
}

pub fn run(ctx: &Ctx, args: &MarginsArgs) -> CmdResult<i32> {
    let tuples_path = pick_required(args.tuples.clone(), ctx.file.tuples.clone(), "tuples")?;
    let emb_path =
        pick_required(args.embeddings.clone(), ctx.file.embeddings.clone(), "embeddings")?;
    let params_path = args.params.clone().or_else(|| ctx.file.params.clone());
    let cap = pick(
        args.max_neg_subsets,
        ctx.file.max_neg_subsets,
        DEFAULT_MAX_NEG_SUBSETS,
    );
    let out = args.out.clone().or_else(|| ctx.file.out.clone());

    let tuples = read_tuples(&tuples_path)?;
    let table_data = read_embeddings(&emb_path)?;
    let examples = examples_from_tuples(&tuples, &table_data)?;
    let params = load_params_opt(params_path.as_deref())?;
    check_adapter_dim(params.as_ref(), table_data.matrix.dim())?;

    let mut groups: BTreeMap<usize, Vec<&TrainingExample>> = BTreeMap::new();
    for ex in &examples {
        groups.entry(ex.positives.len()).or_default().push(ex);
    }

    let mut rows: Vec<MarginRow> = Vec::new();
    for (&hop, group) in &groups {
        rows.push(aggregate(&hop.to_string(), group, None, cap, ctx.seed)?);
        if let Some(p) = &params {
            rows.push(aggregate(&hop.to_string(), group, Some(p), cap, ctx.seed)?);
        }
    }
    if groups.len() > 1 {
        let all: Vec<&TrainingExample> = examples.iter().collect();
        rows.push(aggregate("all", &all, None, cap, ctx.seed)?);
        if let Some(p) = &params {
            rows.push(aggregate("all", &all, Some(p), cap, ctx.seed)?);
        }
    }

    print!("{}", render(&rows));
    if let Some(path) = &out {
        let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
        write_or_stdout(&format!("{json}\n"), Some(path))?;
    }

    let echo = Echo {
        tuples: tuples_path.display().to_string(),
        embeddings: emb_path.display().to_string(),
        params: params_path.as_ref().map(|p| p.display().to_string()),
        max_neg_subsets: cap,
        out: out.as_ref().map(|p| p.display().to_string()),
    };
    let mut manifest = Manifest::new("margins", ctx.seed, echo)
        .input_opt(ctx.config_input.clone())
        .input(digest("tuples", &tuples_path)?)
        .input(digest("embeddings", &emb_path)?);
    if let Some(p) = &params_path {
        manifest = manifest.input(digest("params", p)?);
    }
    if let Some(p) = &out {
        manifest = manifest.output("margins", p);
    }
    manifest.emit(out.as_deref().map(manifest_beside))?;
    Ok(0)
}

fn aggregate(
    hop: &str,
    group: &[&TrainingExample],
    params: Option<&AdapterParams>,
    cap: usize,
    seed: u64,
) -> CmdResult<MarginRow> {
    let mut det_pos = 0.0;
    let mut det_neg = 0.0;
    let mut margin = 0.0;
    let mut negative = 0usize;
    let mut positive = 0usize;
    for ex in group {
        let r = margin_analysis(
            &ex.pool,
            &ex.positives,
            &ex.negatives,
            ex.positives.len(),
            params,
            cap,
            seed,
        )?;
        det_pos += r.det_pos;
        det_neg += r.det_neg_max;
        margin += r.margin;
        negative += usize::from(r.margin < 0.0);
        positive += usize::from(r.margin > 0.0);
    }
    let n = group.len().max(1) as f64;
    Ok(MarginRow {
        hop: hop.to_string(),
        space: if params.is_some() { "adapter" } else { "raw" },
        count: group.len(),
        mean_det_pos: det_pos / n,
        mean_det_neg_max: det_neg / n,
        mean_margin: margin / n,
        negative_fraction: negative as f64 / n,
        positive_fraction: positive as f64 / n,
    })
}

fn render(rows: &[MarginRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.hop.clone(),
                r.space.to_string(),
                r.count.to_string(),
                format!("{:.4}", r.mean_det_pos),
                format!("{:.4}", r.mean_det_neg_max),
                format!("{:+.4}", r.mean_margin),
                format!("{:.4}", r.negative_fraction),
                format!("{:.4}", r.positive_fraction),
            ]
        })
        .collect();
    table::render(
        &["hop", "space", "count", "det_pos", "det_neg_max", "margin", "neg_frac", "pos_frac"],
        &cells,
    )
}
