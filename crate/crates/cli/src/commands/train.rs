//! `dppsel train`: fit the adapter and persist parameters plus loss history.

use std::path::PathBuf;

use serde::Serialize;

use dppsel::adapter::{init_params, save_params};
use dppsel::io::{examples_from_tuples, read_embeddings, read_tuples, write_history_csv};
use dppsel::objective::{train, LossConfig, DEFAULT_MAX_NEG_SUBSETS};

use crate::args::{LossArg, TrainArgs};
use crate::config::{digest, manifest_beside, pick, pick_required, Ctx, Manifest};
use crate::{CmdResult, Failure};

#[derive(Serialize)]
struct Echo {
    tuples: String,
    embeddings: String,
    out: String,
    history: String,
    loss: String,
    epochs: usize,
    batch: usize,
    lr: f64,
    gamma: f64,
    max_neg_subsets: usize,
}

pub fn run(ctx: &Ctx, args: &TrainArgs) -> CmdResult<i32> {
    let tuples_path = pick_required(args.tuples.clone(), ctx.file.tuples.clone(), "tuples")?;
    let emb_path =
        pick_required(args.embeddings.clone(), ctx.file.embeddings.clone(), "embeddings")?;
    let out = pick_required(args.out.clone(), ctx.file.out.clone(), "out")?;
    let history_path: PathBuf = args
        .history
        .clone()
        .or_else(|| ctx.file.history.clone())
        .unwrap_or_else(|| out.with_extension("history.csv"));
    let loss = pick(args.loss, ctx.file.loss, LossArg::Dml);
    let epochs = pick(args.epochs, ctx.file.epochs, 20);
    let batch = pick(args.batch, ctx.file.batch, 8);
    let lr = pick(args.lr, ctx.file.lr, 1e-4);
    let gamma = pick(args.gamma, ctx.file.gamma, 1.0);
    let max_neg_subsets = pick(
        args.max_neg_subsets,
        ctx.file.max_neg_subsets,
        DEFAULT_MAX_NEG_SUBSETS,
    );

    let tuples = read_tuples(&tuples_path)?;
    let table = read_embeddings(&emb_path)?;
    let examples = examples_from_tuples(&tuples, &table)?;
    let d = table.matrix.dim();

    let loss_cfg = LossConfig {
        gamma,
        max_neg_subsets,
        seed: ctx.seed,
        loss_kind: loss.into(),
    };
    let (params, history) =
        train(&examples, init_params(d, ctx.seed), &loss_cfg, epochs, batch, lr, ctx.seed)?;

    save_params(&params, &out)
        .map_err(|e| Failure::input(format!("writing {}: {e}", out.display())))?;
    write_history_csv(&history_path, &history)?;
    if let Some(last) = history.last() {
        eprintln!(
            "trained {} examples, {} epochs: mean loss {:.6}, {} skipped in last epoch",
            examples.len(),
            history.len(),
            last.mean_loss,
            last.skipped
        );
    }

    let echo = Echo {
        tuples: tuples_path.display().to_string(),
        embeddings: emb_path.display().to_string(),
        out: out.display().to_string(),
        history: history_path.display().to_string(),
        loss: format!("{loss:?}").to_lowercase(),
        epochs,
        batch,
        lr,
        gamma,
        max_neg_subsets,
    };
    Manifest::new("train", ctx.seed, echo)
        .input_opt(ctx.config_input.clone())
        .input(digest("tuples", &tuples_path)?)
        .input(digest("embeddings", &emb_path)?)
        .output("params", &out)
        .output("history", &history_path)
        .emit(Some(manifest_beside(&out)))?;
    Ok(0)
}
