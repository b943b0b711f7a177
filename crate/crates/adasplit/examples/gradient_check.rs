//! Finite-difference checks of the differentiation engine, from single
//! primitives up to the frozen-action episode losses.
//!
//! Run with: cargo run --release --example gradient_check

use adasplit::autodiff::gradcheck;
use adasplit::autodiff::{Tape, TensorId};
use adasplit::config::ExperimentConfig;
use adasplit::rng::Rng;
use adasplit::trainer::{replay_episode, rl_loss_frozen, rollout_with_target, seq_loss, EpisodeSample, NegSampling};
use adasplit::model::{Model, ModelDims};

fn main() {
    // a composite expression over several primitives
    let shapes = [(2, 3), (3, 3), (1, 3)];
    let build = |t: &mut Tape, l: &[TensorId]| {
        let h = t.matmul(l[0], l[1]);
        let h = t.add(h, l[2]);
        let s = t.softmax(h);
        let n = t.layer_norm(s);
        let sq = t.mul(n, n);
        t.sum(sq)
    };
    let mut rng = Rng::new(7);
    let point: Vec<Vec<f64>> = shapes
        .iter()
        .map(|&(r, c)| (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    match gradcheck::check(
        build,
        &shapes,
        &point,
        gradcheck::DEFAULT_STEP,
        gradcheck::DEFAULT_REL_TOL,
        gradcheck::DEFAULT_ABS_TOL,
    ) {
        Ok(()) => println!("composite expression: gradients match finite differences"),
        Err(m) => println!("composite expression: MISMATCH {m}"),
    }

    // frozen-action episode loss against a numeric probe of one parameter
    let config = ExperimentConfig::default().train_config();
    let model = Model::init(
        ModelDims {
            num_users: 4,
            num_items: 9,
            dim: 4,
            max_len: 8,
            num_blocks: 1,
            encoder_mode: config.encoder.mode,
            updater: config.allocator.updater,
        },
        3,
    );
    let mut small = config;
    small.encoder.dim = 4;
    small.encoder.max_len = 8;
    let sample = EpisodeSample { user: 1, history: vec![0, 5, 3], target: 7 };
    let mut roll_rng = Rng::new(11);
    let base = rollout_with_target(&model, &sample, &small, &mut roll_rng);
    let actions: Vec<usize> = base.trajectory.steps.iter().map(|s| s.action).collect();
    let returns = base.trajectory.returns.clone();

    let loss_at = |m: &Model| -> f64 {
        let mut r = replay_episode(m, &sample, &actions, &small);
        let target = r.target.as_ref().unwrap();
        let mut dummy = Rng::new(0);
        let l_seq = seq_loss(&mut r.tape, m, &r.bound, target.rep_for_scoring, sample.target, NegSampling::Full, &mut dummy);
        let l_rl = rl_loss_frozen(&mut r.tape, &r.trajectory, &returns);
        let scaled = r.tape.scale(l_rl, small.beta);
        let total = r.tape.add(l_seq, scaled);
        r.tape.scalar_value(total)
    };

    let mut r = replay_episode(&model, &sample, &actions, &small);
    let target = r.target.as_ref().unwrap();
    let mut dummy = Rng::new(0);
    let l_seq = seq_loss(&mut r.tape, &model, &r.bound, target.rep_for_scoring, sample.target, NegSampling::Full, &mut dummy);
    let l_rl = rl_loss_frozen(&mut r.tape, &r.trajectory, &returns);
    let scaled = r.tape.scale(l_rl, small.beta);
    let total = r.tape.add(l_seq, scaled);
    r.tape.backward(total);

    let idx = model.params.index_of("policy.w1");
    let leaf = r.bound.get(&model, "policy.w1");
    let analytic = r.tape.grad(leaf)[0];
    let mut probe = model.clone();
    let orig = probe.params.by_index(idx).values[0];
    let h = 1e-4;
    probe.params.by_index_mut(idx).values[0] = orig + h;
    let plus = loss_at(&probe);
    probe.params.by_index_mut(idx).values[0] = orig - h;
    let minus = loss_at(&probe);
    let numeric = (plus - minus) / (2.0 * h);
    println!("policy.w1[0]: analytic {analytic:.8}, finite differences {numeric:.8}");
}
