//! `dppsel select`: diverse context subsets, one JSON line per pool.

use serde::Serialize;

use dppsel::io::read_pools;
use dppsel::map_infer::DEFAULT_EPSILON;
use dppsel::pipeline::{
    select_context, PipelineConfig, DEFAULT_POOL_SIZE, DEFAULT_SELECT_K,
};

use crate::args::{OnOff, SelectArgs};
use crate::config::{digest, manifest_beside, pick, pick_required, Ctx, Manifest};
use crate::commands::{check_adapter_dim, load_params_opt, write_or_stdout};
use crate::CmdResult;

#[derive(Serialize)]
struct SelectLine<'a> {
    query_id: &'a str,
    selected_ids: &'a [String],
    logdet: f64,
    kernel_ms: f64,
    select_ms: f64,
}

#[derive(Serialize)]
struct Echo<'a> {
    pools: String,
    params: Option<String>,
    k: usize,
    pool_size: usize,
    epsilon: f64,
    gamma: f64,
    quality: &'a str,
    out: Option<String>,
}

pub fn run(ctx: &Ctx, args: &SelectArgs) -> CmdResult<i32> {
    let pools_path = pick_required(args.pools.clone(), ctx.file.pools.clone(), "pools")?;
    let params_path = args.params.clone().or_else(|| ctx.file.params.clone());
    let k = pick(args.k, ctx.file.k, DEFAULT_SELECT_K);
    let pool_size = pick(args.pool_size, ctx.file.pool_size, DEFAULT_POOL_SIZE);
    let epsilon = pick(args.epsilon, ctx.file.epsilon, DEFAULT_EPSILON);
    let gamma = pick(args.gamma, ctx.file.gamma, 1.0);
    let quality = pick(args.quality, ctx.file.quality, OnOff::On);
    let out = args.out.clone().or_else(|| ctx.file.out.clone());

    let pools = read_pools(&pools_path)?;
    let params = load_params_opt(params_path.as_deref())?;
    if let Some(first) = pools.first() {
        check_adapter_dim(params.as_ref(), first.embeddings.dim())?;
    }

    let cfg = PipelineConfig::default()
        .with_pool_size(pool_size)
        .with_select_k(k)
        .with_epsilon(epsilon)
        .with_gamma(gamma)
        .with_quality(quality.as_bool())
        .with_adapter(params.is_some());

    let mut body = String::new();
    for pool in &pools {
        let o = select_context(pool, params.as_ref(), &cfg)?;
        let line = SelectLine {
            query_id: &pool.query_id,
            selected_ids: &o.selected_ids,
            logdet: o.result.logdet_final,
            kernel_ms: o.kernel_ms,
            select_ms: o.select_ms,
        };
        body.push_str(&serde_json::to_string(&line).expect("line serializes"));
        body.push('\n');
    }
    write_or_stdout(&body, out.as_deref())?;

    let echo = Echo {
        pools: pools_path.display().to_string(),
        params: params_path.as_ref().map(|p| p.display().to_string()),
        k,
        pool_size,
        epsilon,
        gamma,
        quality: if quality.as_bool() { "on" } else { "off" },
        out: out.as_ref().map(|p| p.display().to_string()),
    };
    let mut manifest = Manifest::new("select", ctx.seed, echo)
        .input_opt(ctx.config_input.clone())
        .input(digest("pools", &pools_path)?);
    if let Some(p) = &params_path {
        manifest = manifest.input(digest("params", p)?);
    }
    if let Some(p) = &out {
        manifest = manifest.output("selections", p);
    }
    manifest.emit(out.as_deref().map(manifest_beside))?;
    Ok(0)
}
