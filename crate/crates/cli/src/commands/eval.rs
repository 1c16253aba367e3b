//! `dppsel eval`: metric matrix over selection modes and quality settings.

use serde::Serialize;

use dppsel::io::read_pools;
use dppsel::map_infer::DEFAULT_EPSILON;
use dppsel::pipeline::{
    evaluate, MetricsReport, PipelineConfig, SelectionMode, DEFAULT_POOL_SIZE,
};

use crate::args::EvalArgs;
use crate::commands::{check_adapter_dim, load_params_opt, write_or_stdout};
use crate::config::{digest, manifest_beside, pick, pick_required, Ctx, Manifest};
use crate::table;
use crate::{CmdResult, Failure};

#[derive(Serialize)]
struct Echo {
    pools: String,
    params: Option<String>,
    k_list: Vec<usize>,
    pool_size: usize,
    epsilon: f64,
    gamma: f64,
    modes: Vec<String>,
    quality: Vec<String>,
    out: Option<String>,
}

pub fn run(ctx: &Ctx, args: &EvalArgs) -> CmdResult<i32> {
    let pools_path = pick_required(args.pools.clone(), ctx.file.pools.clone(), "pools")?;
    let params_path = args.params.clone().or_else(|| ctx.file.params.clone());
    let k_list = pick(args.k_list.clone(), ctx.file.k_list.clone(), vec![10, 4]);
    let pool_size = pick(args.pool_size, ctx.file.pool_size, DEFAULT_POOL_SIZE);
    let epsilon = pick(args.epsilon, ctx.file.epsilon, DEFAULT_EPSILON);
    let gamma = pick(args.gamma, ctx.file.gamma, 1.0);
    let out = args.out.clone().or_else(|| ctx.file.out.clone());
    if k_list.is_empty() {
        return Err(Failure::input("--k-list must name at least one cutoff"));
    }

    let pools = read_pools(&pools_path)?;
    if pools.is_empty() {
        return Err(Failure::input(format!(
            "{}: no pools to evaluate",
            pools_path.display()
        )));
    }
    let params = load_params_opt(params_path.as_deref())?;
    check_adapter_dim(params.as_ref(), pools[0].embeddings.dim())?;

    // Full matrix by default; adapter rows need trained parameters.
    let modes: Vec<SelectionMode> = match args.mode.or(ctx.file.mode) {
        Some(m) => vec![m.into()],
        None if params.is_some() => vec![
            SelectionMode::TopK,
            SelectionMode::DppBase,
            SelectionMode::DppAdapter,
        ],
        None => vec![SelectionMode::TopK, SelectionMode::DppBase],
    };
    let qualities: Vec<bool> = match args.quality.or(ctx.file.quality) {
        Some(q) => vec![q.as_bool()],
        None => vec![true, false],
    };

    let mut reports: Vec<MetricsReport> = Vec::new();
    for &k in &k_list {
        for &mode in &modes {
            for &quality in &qualities {
                let cfg = PipelineConfig::default()
                    .with_pool_size(pool_size)
                    .with_select_k(k)
                    .with_epsilon(epsilon)
                    .with_gamma(gamma)
                    .with_quality(quality);
                reports.push(evaluate(&pools, params.as_ref(), &cfg, mode)?);
            }
        }
    }

    print!("{}", overall_table(&reports));
    let hops = by_hop_table(&reports);
    if !hops.is_empty() {
        println!();
        print!("{hops}");
    }
    if let Some(path) = &out {
        let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
        write_or_stdout(&format!("{json}\n"), Some(path))?;
    }

    let echo = Echo {
        pools: pools_path.display().to_string(),
        params: params_path.as_ref().map(|p| p.display().to_string()),
        k_list: k_list.clone(),
        pool_size,
        epsilon,
        gamma,
        modes: modes.iter().map(|m| m.to_string()).collect(),
        quality: qualities
            .iter()
            .map(|&q| if q { "on".into() } else { "off".into() })
            .collect(),
        out: out.as_ref().map(|p| p.display().to_string()),
    };
    let mut manifest = Manifest::new("eval", ctx.seed, echo)
        .input_opt(ctx.config_input.clone())
        .input(digest("pools", &pools_path)?);
    if let Some(p) = &params_path {
        manifest = manifest.input(digest("params", p)?);
    }
    if let Some(p) = &out {
        manifest = manifest.output("report", p);
    }
    manifest.emit(out.as_deref().map(manifest_beside))?;
    Ok(0)
}

fn on_off(q: bool) -> String {
    if q { "on".into() } else { "off".into() }
}

fn overall_table(reports: &[MetricsReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.mode.to_string(),
                r.k.to_string(),
                on_off(r.quality),
                format!("{:.4}", r.overall.recall),
                format!("{:.4}", r.overall.ndcg),
                format!("{:.4}", r.overall.hits),
                r.overall.count.to_string(),
                r.failed.to_string(),
            ]
        })
        .collect();
    table::render(
        &["mode", "k", "quality", "recall", "ndcg", "hits", "pools", "failed"],
        &rows,
    )
}

fn by_hop_table(reports: &[MetricsReport]) -> String {
    let mut rows: Vec<Vec<String>> = Vec::new();
    for r in reports {
        for (hop, g) in &r.by_hop {
            rows.push(vec![
                r.mode.to_string(),
                r.k.to_string(),
                on_off(r.quality),
                hop.clone(),
                format!("{:.4}", g.recall),
                format!("{:.4}", g.ndcg),
                format!("{:.4}", g.hits),
                g.count.to_string(),
            ]);
        }
    }
    if rows.is_empty() {
        return String::new();
    }
    table::render(
        &["mode", "k", "quality", "hop", "recall", "ndcg", "hits", "pools"],
        &rows,
    )
}
