//! Command-line entry point: dataset generation, training, evaluation,
//! single-image application, greedy decoding, and oracle runs.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data/format errors.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use seqisp::checkpoint::{load_checkpoint, resume, save_checkpoint};
use seqisp::config::load_config;
use seqisp::image::{load_ppm, save_ppm};
use seqisp::oracle::oracle_best;
use seqisp::pipeline::{apply_pipeline, FullParamVector};
use seqisp::policy::{action_name, EOS_TOKEN};
use seqisp::synth::make_dataset;
use seqisp::trainer::{write_metrics_csv, TrainState};
use seqisp::Result;

#[derive(Parser)]
#[command(name = "seqisp", version, about = "Sequence-level search for modular ISP pipelines")]
struct Cli {
    /// Worker threads for batch forward passes (results are identical for
    /// any thread count)
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as PPM pairs
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the sequence policy and parameter predictor
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory for metrics.csv and checkpoints
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Report greedy-pipeline metrics on the eval set
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the greedy pipeline with predicted parameters on one image
    Apply {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input PPM
        #[arg(long)]
        input: PathBuf,
        /// Output PPM
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the greedy sequence with per-step probabilities
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Optimize every sequence over the configured pool and write the table
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV (columns: sequence,reward)
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            let _ = e.print();
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => gen_data(&config, &out),
        Command::Train { config, out_dir } => train(&config, &out_dir, cli.threads),
        Command::Eval { checkpoint, config } => eval(&checkpoint, &config, cli.threads),
        Command::Apply {
            checkpoint,
            input,
            output,
        } => apply(&checkpoint, &input, &output),
        Command::Decode { checkpoint } => decode(&checkpoint),
        Command::Oracle { config, out } => oracle(&config, &out),
    }
}

fn gen_data(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    std::fs::create_dir_all(out)?;
    let (train, eval) = make_dataset(cfg.data_seed, cfg.n_train, cfg.n_eval, cfg.image_size);
    for (split, set) in [("train", &train), ("eval", &eval)] {
        for (i, (input, target)) in set.iter().enumerate() {
            save_ppm(input, out.join(format!("{split}_{i:04}_input.ppm")))?;
            save_ppm(target, out.join(format!("{split}_{i:04}_target.ppm")))?;
        }
    }
    println!(
        "wrote {} train and {} eval pairs to {}",
        train.len(),
        eval.len(),
        out.display()
    );
    Ok(())
}

fn train(config: &Path, out_dir: &Path, threads: usize) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.threads = threads;
    std::fs::create_dir_all(out_dir)?;
    let (train_set, eval_set) = make_dataset(cfg.data_seed, cfg.n_train, cfg.n_eval, cfg.image_size);
    let mut state = TrainState::new(cfg);
    let rows = state.run(&train_set, &eval_set, |state, row| {
        save_checkpoint(state, out_dir.join(format!("ckpt_{:06}.ckpt", row.iter)))?;
        println!(
            "iter {} tau {:.4} reward {:.6} entropy {:.4} pipeline [{}]",
            row.iter, row.tau, row.mean_reward, row.policy_entropy, row.greedy_pipeline
        );
        Ok(())
    })?;
    std::fs::write(out_dir.join("metrics.csv"), write_metrics_csv(&rows))?;
    save_checkpoint(&state, out_dir.join("final.ckpt"))?;

    let report = state.evaluate(&eval_set)?;
    println!("final pipeline: [{}]", report.sequence.to_text());
    println!("eval_mse: {}", report.mean_mse);
    println!("eval_psnr: {}", report.mean_psnr);
    println!("mean_reward: {}", report.mean_reward);
    Ok(())
}

fn eval(checkpoint: &Path, config: &Path, threads: usize) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.threads = threads;
    let (_, eval_set) = make_dataset(cfg.data_seed, cfg.n_train, cfg.n_eval, cfg.image_size);
    let state = resume(load_checkpoint(checkpoint)?, cfg)?;
    let report = state.evaluate(&eval_set)?;
    println!("pipeline: [{}]", report.sequence.to_text());
    println!("eval_mse: {}", report.mean_mse);
    println!("eval_psnr: {}", report.mean_psnr);
    println!("mean_reward: {}", report.mean_reward);
    Ok(())
}

fn apply(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let img = load_ppm(input)?;
    let sequence = ckpt.policy.greedy_decode(&ckpt.pool);
    let theta = FullParamVector::new(ckpt.predictor.predict(&img))?;
    let (out, _) = apply_pipeline(&img, &sequence, &theta);
    save_ppm(&out, output)?;
    println!("applied [{}] to {}", sequence.to_text(), input.display());
    Ok(())
}

fn decode(checkpoint: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let report = ckpt.policy.decode_report(&ckpt.pool);
    for (step, (probs, action)) in report.iter().enumerate() {
        let mut parts = Vec::new();
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                parts.push(format!("{}={:.4}", action_name(i), p));
            }
        }
        println!("step {}: {} -> {}", step + 1, parts.join(" "), action_name(*action));
    }
    let pipeline: Vec<&str> = report
        .iter()
        .map(|(_, a)| *a)
        .take_while(|&a| a != EOS_TOKEN)
        .map(action_name)
        .collect();
    println!("pipeline: [{}]", pipeline.join(","));
    Ok(())
}

fn oracle(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let (_, eval_set) = make_dataset(cfg.data_seed, cfg.n_train, cfg.n_eval, cfg.image_size);
    let pool = cfg.pool.modules();
    let result = oracle_best(&pool, &eval_set, cfg.task, &cfg.penalty)?;
    let mut csv = String::from("sequence,reward\n");
    for (seq, reward) in &result.table {
        csv.push_str(&format!("\"{}\",{}\n", seq.to_text(), reward));
    }
    std::fs::write(out, csv)?;
    println!(
        "best pipeline: [{}] reward {}",
        result.best_sequence.to_text(),
        result.best_reward
    );
    Ok(())
}
