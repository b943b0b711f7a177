//! Watch the allocator learn on planted multi-interest data.
//!
//! Trains on a synthetic corpus and prints, per epoch, the sampled-rollout
//! statistics (mean h, create rate) next to argmax-rollout statistics
//! (mean h, NMI against the planted labels). Useful for judging how the
//! warm-up and the policy-gradient phase shape the partition quality.
//!
//! Run with:
//!   cargo run --release --example synth_dynamics -- [key=value ...]
//! e.g.
//!   cargo run --release --example synth_dynamics -- epochs=12 rl_warmup_epochs=8

use adasplit::autodiff::Adam;
use adasplit::cli::score_partitions;
use adasplit::config::ExperimentConfig;
use adasplit::dataio::{leave_one_out_split, train_samples};
use adasplit::model::{Model, ModelDims};
use adasplit::rng::Rng;
use adasplit::synth;
use adasplit::trainer::{joint_step, EpisodeSample};

fn main() {
    let mut config = ExperimentConfig::default();
    config.epochs = 12;
    config.rl_warmup_epochs = 8;
    config.lr = 0.01;
    config.synth_users = 100;
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments look like key=value");
        config.set(k, v).expect("valid config key");
    }
    config.validate().expect("valid config");

    let synth_config = config.synthetic_config();
    let (dataset, truth) = synth::generate(&synth_config).expect("generate");
    let split = leave_one_out_split(&dataset);
    let mut train_config = config.train_config();
    train_config.encoder.max_len = train_config.encoder.max_len.max(synth_config.seq_len);

    let dims = ModelDims {
        num_users: dataset.num_users(),
        num_items: dataset.num_items(),
        dim: train_config.encoder.dim,
        max_len: train_config.encoder.max_len,
        num_blocks: train_config.encoder.num_blocks,
        encoder_mode: train_config.encoder.mode,
        updater: train_config.allocator.updater,
    };
    let mut model = Model::init(dims, train_config.seed);
    let mut adam = Adam::with_defaults(&model.params, train_config.lr);
    let mut rng = Rng::new(train_config.seed);
    let samples = train_samples(&split);
    println!(
        "{} users, {} items, {} samples/epoch, warm-up {} of {} epochs",
        dataset.num_users(),
        dataset.num_items(),
        samples.len(),
        train_config.rl_warmup_epochs,
        train_config.epochs
    );

    for epoch in 1..=train_config.epochs {
        let mut epoch_config = train_config;
        if epoch <= train_config.rl_warmup_epochs {
            epoch_config.greedy_allocation = true;
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        rng.shuffle(&mut order);
        let mut sum_h = 0.0;
        let mut sum_create = 0.0;
        let mut sum_seq = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(train_config.batch_size) {
            let batch: Vec<EpisodeSample> = chunk
                .iter()
                .map(|&i| {
                    let s = samples[i];
                    let entry = split.entry(s.user).unwrap();
                    EpisodeSample {
                        user: s.user,
                        history: entry.train[..s.prefix_len].to_vec(),
                        target: entry.train[s.prefix_len],
                    }
                })
                .collect();
            let b = joint_step(&mut model, &batch, &epoch_config, &mut adam, &mut rng).expect("step");
            sum_h += b.mean_final_h;
            sum_create += b.create_rate;
            sum_seq += b.l_seq;
            batches += 1.0;
        }
        let (nmi, argmax_h) = score_partitions(&model, &train_config, &dataset, &truth).expect("score");
        let phase = if epoch <= train_config.rl_warmup_epochs { "warmup" } else { "rl    " };
        println!(
            "epoch {epoch:>2} [{phase}]: l_seq {:.3} sampled_h {:.2} create_rate {:.3} | argmax_h {:.2} nmi {:.3}",
            sum_seq / batches,
            sum_h / batches,
            sum_create / batches,
            argmax_h,
            nmi
        );
    }
}
