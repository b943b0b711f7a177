//! Export an allocation trace: which sub-sequence each history item lands
//! in at prediction time, with the action probabilities per step.
//!
//! Run with: cargo run --release --example episode_trace

use adasplit::config::ExperimentConfig;
use adasplit::dataio::leave_one_out_split;
use adasplit::eval::run_argmax_history;
use adasplit::synth;
use adasplit::trainer;

fn main() -> adasplit::Result<()> {
    let mut config = ExperimentConfig::default();
    config.epochs = 6;
    config.rl_warmup_epochs = 6;
    config.lr = 0.01;
    config.synth_users = 60;
    config.h_max = 4;
    config.warmup_tau = 0.4;
    config.max_len = 20;

    let (dataset, truth) = synth::generate(&config.synthetic_config())?;
    let split = leave_one_out_split(&dataset);
    let train_config = config.train_config();
    let outcome = trainer::train(&dataset, &split, &train_config, None)?;

    let setup = train_config.eval_setup();
    for user in 0..3 {
        let items = &dataset.sequences[user];
        let snapshot = run_argmax_history(&outcome.final_model, &setup, items, user);
        println!("user {user} ({} sub-sequences):", snapshot.num_subseqs());
        for step in &snapshot.trace {
            let probs: Vec<String> = step.probs.iter().map(|p| format!("{p:.2}")).collect();
            println!(
                "  step {:>2} item {:>3} interest {} -> sub-sequence {} (h={}, probs [{}])",
                step.step,
                items[step.step],
                truth.labels[user][step.step],
                snapshot.assignments[step.step],
                step.num_subseqs_after,
                probs.join(", ")
            );
        }
        for (i, members) in snapshot.members.iter().enumerate() {
            let labels: Vec<String> = members
                .iter()
                .map(|&p| truth.labels[user][p].to_string())
                .collect();
            println!("  sub-sequence {i}: positions {members:?} (interests [{}])", labels.join(", "));
        }
    }
    Ok(())
}
