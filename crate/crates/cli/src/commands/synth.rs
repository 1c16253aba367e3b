//! `dppsel synth`: generate a synthetic dataset on disk.
//!
//! Writes three files into `--out-dir`: `pools.jsonl` (labeled candidate
//! pools with embedded vectors), `tuples.jsonl` (supervision tuples), and
//! `embeddings.jsonl` (one row per candidate id).

use std::fs;

use serde::Serialize;

use dppsel::io::{tuple_record, write_embeddings, write_pools, write_tuples};
use dppsel::pipeline::{synth_dataset, SynthConfig, DEFAULT_NOISE};

use crate::args::SynthArgs;
use crate::config::{pick, pick_required, Ctx, Manifest};
use crate::{CmdResult, Failure};

#[derive(Serialize)]
struct Echo {
    out_dir: String,
    queries: usize,
    dim: usize,
    k_pos: usize,
    k_cycle: Option<Vec<usize>>,
    pool_size: usize,
    redundancy: f64,
    noise: f64,
}

pub fn run(ctx: &Ctx, args: &SynthArgs) -> CmdResult<i32> {
    let out_dir = pick_required(args.out_dir.clone(), ctx.file.out_dir.clone(), "out-dir")?;
    let queries = pick(args.queries, ctx.file.queries, 200);
    let dim = pick(args.dim, ctx.file.dim, 32);
    let k_pos = pick(args.k_pos, ctx.file.k_pos, 4);
    let pool_size = pick(args.pool_size, ctx.file.pool_size, 20);
    let redundancy = pick(args.redundancy, ctx.file.redundancy, 0.95);
    let noise = pick(args.noise, ctx.file.noise, DEFAULT_NOISE);
    let k_cycle = args.k_cycle.clone().or_else(|| ctx.file.k_cycle.clone());

    if pool_size <= k_pos {
        return Err(Failure::input(format!(
            "--pool-size {pool_size} leaves no distractors for {k_pos} gold items"
        )));
    }
    let mut cfg = SynthConfig::new(queries, dim, k_pos, pool_size - k_pos, redundancy, ctx.seed)
        .with_noise(noise);
    if let Some(cycle) = &k_cycle {
        cfg = cfg.with_k_cycle(cycle.clone());
    }
    let (pools, examples) = synth_dataset(&cfg)?;

    fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::input(format!("{}: {e}", out_dir.display())))?;
    let pools_path = out_dir.join("pools.jsonl");
    let tuples_path = out_dir.join("tuples.jsonl");
    let emb_path = out_dir.join("embeddings.jsonl");

    write_pools(&pools_path, &pools)?;
    let tuples: Vec<_> = pools
        .iter()
        .zip(&examples)
        .map(|(pool, ex)| tuple_record(pool, &ex.negatives))
        .collect();
    write_tuples(&tuples_path, &tuples)?;
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for pool in &pools {
        for (i, id) in pool.ids.iter().enumerate() {
            rows.push((id.clone(), pool.embeddings.row(i).to_vec()));
        }
    }
    write_embeddings(&emb_path, &rows)?;

    println!(
        "wrote {} pools ({} candidates) to {}",
        pools.len(),
        rows.len(),
        out_dir.display()
    );

    let echo = Echo {
        out_dir: out_dir.display().to_string(),
        queries,
        dim,
        k_pos,
        k_cycle,
        pool_size,
        redundancy,
        noise,
    };
    Manifest::new("synth", ctx.seed, echo)
        .input_opt(ctx.config_input.clone())
        .output("pools", &pools_path)
        .output("tuples", &tuples_path)
        .output("embeddings", &emb_path)
        .emit(Some(out_dir.join("manifest.json")))?;
    Ok(0)
}
