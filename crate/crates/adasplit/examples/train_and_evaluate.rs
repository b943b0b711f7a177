//! Train a small model end to end and evaluate it against the popularity
//! baseline.
//!
//! Uses a quick synthetic corpus so the whole run finishes in seconds;
//! swap in `load_canonical` on a preprocessed directory for real data.
//!
//! Run with: cargo run --release --example train_and_evaluate

use adasplit::config::ExperimentConfig;
use adasplit::dataio::leave_one_out_split;
use adasplit::eval::{evaluate, EvalOptions, Phase};
use adasplit::synth;
use adasplit::trainer;

fn main() -> adasplit::Result<()> {
    let mut config = ExperimentConfig::default();
    config.epochs = 8;
    config.rl_warmup_epochs = 6;
    config.lr = 0.01;
    config.synth_users = 60;
    config.synth_seq_len = 12;
    config.max_len = 12;

    let (dataset, _) = synth::generate(&config.synthetic_config())?;
    let split = leave_one_out_split(&dataset);
    println!("data: {}", dataset.stats);

    let train_config = config.train_config();
    let mut progress = |r: &trainer::EpochRecord| println!("{}", r.to_line());
    let outcome = trainer::train(&dataset, &split, &train_config, Some(&mut progress))?;
    println!("best epoch: {}", outcome.best_epoch);

    let setup = train_config.eval_setup();
    let test = evaluate(&outcome.model, &setup, &dataset, &split, Phase::Test, &EvalOptions::default())?;
    println!("model      {}", test.report.summary());
    println!("popularity {}", test.popularity.summary());

    // persist and reload the checkpoint
    let path = std::env::temp_dir().join("adasplit_example_model.ckpt");
    outcome.model.save(&path)?;
    let reloaded = adasplit::model::Model::load(&path)?;
    let again = evaluate(&reloaded, &setup, &dataset, &split, Phase::Test, &EvalOptions::default())?;
    assert_eq!(again.report, test.report);
    println!("checkpoint round trip ok: {}", path.display());
    Ok(())
}
