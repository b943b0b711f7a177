//! Run the encoder-mode ablation on a small corpus and print one result
//! row per variant (the updater and schedule matrices work the same way
//! through the `ablate` subcommand).
//!
//! Run with: cargo run --release --example ablation_matrix

use adasplit::config::ExperimentConfig;
use adasplit::dataio::leave_one_out_split;
use adasplit::eval::{evaluate, EvalOptions, Phase};
use adasplit::synth;
use adasplit::trainer;

fn main() -> adasplit::Result<()> {
    let mut base = ExperimentConfig::default();
    base.epochs = 6;
    base.rl_warmup_epochs = 5;
    base.lr = 0.01;
    base.synth_users = 50;
    base.synth_seq_len = 12;
    base.max_len = 12;

    let (dataset, _) = synth::generate(&base.synthetic_config())?;
    let split = leave_one_out_split(&dataset);

    println!("mode           ndcg5   mrr5    ndcg10  mrr10   mean_h");
    for mode in ["bidirectional", "causal", "zero"] {
        let mut config = base.clone();
        config.set("encoder_mode", mode)?;
        config.validate()?;
        let train_config = config.train_config();
        let outcome = trainer::train(&dataset, &split, &train_config, None)?;
        let test = evaluate(
            &outcome.model,
            &train_config.eval_setup(),
            &dataset,
            &split,
            Phase::Test,
            &EvalOptions::default(),
        )?;
        let r = test.report;
        println!(
            "{mode:<14} {:<7.3} {:<7.3} {:<7.3} {:<7.3} {:.2}",
            r.ndcg5, r.mrr5, r.ndcg10, r.mrr10, r.mean_final_h
        );
    }
    Ok(())
}
