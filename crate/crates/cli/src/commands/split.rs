//! `dppsel split`: stratified train/dev/test partition of a dataset.
//!
//! Pools are stratified by hop count. When the matching tuples file is
//! given it is partitioned along the same query split, so supervision and
//! evaluation files never drift apart.

use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use dppsel::io::{read_pools, read_tuples, write_pools, write_tuples, TupleRecord};
use dppsel::pipeline::{stratified_split, CandidatePool};

use crate::args::SplitArgs;
use crate::config::{digest, pick, pick_required, Ctx, Manifest};
use crate::{CmdResult, Failure};

#[derive(Serialize)]
struct Echo {
    pools: String,
    tuples: Option<String>,
    ratio: String,
    out_dir: String,
}

pub fn run(ctx: &Ctx, args: &SplitArgs) -> CmdResult<i32> {
    let pools_path = pick_required(args.pools.clone(), ctx.file.pools.clone(), "pools")?;
    let tuples_path = args.tuples.clone().or_else(|| ctx.file.tuples.clone());
    let ratio_text = pick(args.ratio.clone(), ctx.file.ratio.clone(), "5:1:4".into());
    let out_dir = pick_required(args.out_dir.clone(), ctx.file.out_dir.clone(), "out-dir")?;
    let ratio = parse_ratio(&ratio_text)?;

    let pools = read_pools(&pools_path)?;
    let (train, dev, test) =
        stratified_split(&pools, |p: &CandidatePool| p.hop_count.unwrap_or(0), ratio, ctx.seed)?;

    fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::input(format!("{}: {e}", out_dir.display())))?;
    let mut outputs: Vec<(&'static str, PathBuf)> = Vec::new();
    for (name, split) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let path = out_dir.join(format!("pools.{name}.jsonl"));
        write_pools(&path, split)?;
        outputs.push((pool_role(name), path));
    }

    if let Some(tp) = &tuples_path {
        let tuples = read_tuples(tp)?;
        for (name, split) in [("train", &train), ("dev", &dev), ("test", &test)] {
            let ids: HashSet<&str> = split.iter().map(|p| p.query_id.as_str()).collect();
            let subset: Vec<TupleRecord> = tuples
                .iter()
                .filter(|t| ids.contains(t.query_id.as_str()))
                .cloned()
                .collect();
            let path = out_dir.join(format!("tuples.{name}.jsonl"));
            write_tuples(&path, &subset)?;
            outputs.push((tuple_role(name), path));
        }
        let known: HashSet<&str> = pools.iter().map(|p| p.query_id.as_str()).collect();
        if let Some(orphan) = tuples.iter().find(|t| !known.contains(t.query_id.as_str())) {
            return Err(Failure::input(format!(
                "tuple {} has no pool in {}",
                orphan.query_id,
                pools_path.display()
            )));
        }
    }

    println!("train {}  dev {}  test {}", train.len(), dev.len(), test.len());

    let echo = Echo {
        pools: pools_path.display().to_string(),
        tuples: tuples_path.as_ref().map(|p| p.display().to_string()),
        ratio: ratio_text,
        out_dir: out_dir.display().to_string(),
    };
    let mut manifest = Manifest::new("split", ctx.seed, echo)
        .input_opt(ctx.config_input.clone())
        .input(digest("pools", &pools_path)?);
    if let Some(tp) = &tuples_path {
        manifest = manifest.input(digest("tuples", tp)?);
    }
    for (role, path) in &outputs {
        manifest = manifest.output(role, path);
    }
    manifest.emit(Some(out_dir.join("manifest.json")))?;
    Ok(0)
}

fn pool_role(name: &str) -> &'static str {
    match name {
        "train" => "pools.train",
        "dev" => "pools.dev",
        _ => "pools.test",
    }
}

fn tuple_role(name: &str) -> &'static str {
    match name {
        "train" => "tuples.train",
        "dev" => "tuples.dev",
        _ => "tuples.test",
    }
}

fn parse_ratio(text: &str) -> CmdResult<(usize, usize, usize)> {
    let parts: Vec<&str> = text.split(':').collect();
    let fail = || Failure::input(format!("ratio must look like 5:1:4, got {text:?}"));
    if parts.len() != 3 {
        return Err(fail());
    }
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| fail())?;
    if nums.iter().sum::<usize>() == 0 {
        return Err(fail());
    }
    Ok((nums[0], nums[1], nums[2]))
}
