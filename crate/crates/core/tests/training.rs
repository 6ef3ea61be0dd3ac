use jssp_core::dispatch::masked_softmax;
use jssp_core::expert::Budget;
use jssp_core::training::{generate_demos, train_feedback, train_initial, train_loop, Demo, TrainConfig};
use jssp_core::{Adam, Instance, PolicyNet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> TrainConfig {
    TrainConfig { actors: 4, k: 4, minibatches: 4, expert_iterations: 100, expert_stall: 30, ..TrainConfig::default() }
}

fn demos(net: &PolicyNet, config: &TrainConfig, seed: u64) -> (Vec<Instance>, Vec<Demo>) {
    let instances: Vec<Instance> = (0..2).map(|s| Instance::generate(5, 5, 40 + s)).collect();
    let budget = Budget::seconds(1.0).with_iterations(config.expert_iterations, config.expert_stall);
    let d = generate_demos(&instances, net, config, &budget, seed).unwrap();
    (instances, d)
}

fn log_prob(net: &PolicyNet, demo: &Demo) -> f64 {
    demo.expert
        .steps
        .iter()
        .map(|s| masked_softmax(&net.forward(&s.observation).unwrap(), &s.observation.mask, 1.0)[s.action].ln())
        .sum()
}

#[test]
fn demos_are_consistent() {
    let net = PolicyNet::init(1);
    let config = small_config();
    let (instances, demos) = demos(&net, &config, 9);
    assert_eq!(demos.len(), instances.len() * config.actors);
    for d in &demos {
        assert!(d.improvement > 0.0 && d.improvement <= 1.0);
        assert!(d.prefix_len <= d.actor.steps.len());
        assert_eq!(d.prefix().len(), d.prefix_len);
        assert!(d.expert.makespan <= d.actor.makespan);
    }
}

#[test]
fn no_improvement_leaves_params_unchanged() {
    let mut net = PolicyNet::init(2);
    let config = small_config();
    let (_, mut demos) = demos(&net, &config, 3);
    for d in &mut demos {
        d.improvement = 1.0;
    }
    let before = net.clone();
    let mut adam = Adam::new(net.params().len(), config.lr);
    let stats = train_feedback(&mut net, &mut adam, &demos, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(stats.samples, 0);
    assert_eq!(net, before);
}

#[test]
fn positive_advantage_raises_expert_probability() {
    let mut net = PolicyNet::init(5);
    let config = TrainConfig { k: 1, minibatches: 1, lr: 1e-3, ..small_config() };
    let (_, demos) = demos(&net, &config, 11);
    let mut demo = demos.into_iter().find(|d| !d.expert.steps.is_empty()).unwrap();
    demo.improvement = 0.5;
    let before = log_prob(&net, &demo);
    let mut adam = Adam::new(net.params().len(), config.lr);
    let demos = [demo];
    let stats = train_feedback(&mut net, &mut adam, &demos, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(stats.samples, demos[0].expert.steps.len());
    assert!(log_prob(&net, &demos[0]) > before);
}

#[test]
fn kl_limit_stops_after_one_pass() {
    let mut net = PolicyNet::init(6);
    let config = TrainConfig { k: 20, minibatches: 1, lr: 0.5, beta: 1e-9, ..small_config() };
    let (_, mut demos) = demos(&net, &config, 13);
    demos[0].improvement = 0.5;
    let mut adam = Adam::new(net.params().len(), config.lr);
    let stats = train_feedback(&mut net, &mut adam, &demos, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(stats.samples > 0);
    assert_eq!(stats.applied_iterations, 1);
    assert!(stats.stopped_early);
    assert!(stats.kl > config.beta);
}

#[test]
fn equal_expert_makespans_skip_initial_phase() {
    let mut net = PolicyNet::init(7);
    let config = small_config();
    let (_, mut demos) = demos(&net, &config, 17);
    for d in &mut demos {
        d.expert.makespan = 100;
    }
    let before = net.clone();
    let mut adam = Adam::new(net.params().len(), config.lr);
    let stats = train_initial(&mut net, &mut adam, &demos, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(stats.samples, 0);
    assert_eq!(net, before);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let instances: Vec<Instance> = (0..2).map(|s| Instance::generate(4, 4, 60 + s)).collect();
    let config = TrainConfig { epochs: 2, ..small_config() };
    let straight = tempfile::tempdir().unwrap();
    let full = train_loop(&instances, &config, 21, Some(straight.path()), false).unwrap();

    let split = tempfile::tempdir().unwrap();
    let first = TrainConfig { epochs: 1, ..config.clone() };
    train_loop(&instances, &first, 21, Some(split.path()), false).unwrap();
    let resumed = train_loop(&instances, &config, 21, Some(split.path()), true).unwrap();

    assert_eq!(resumed.net, full.net);
    assert_eq!(resumed.best, full.best);
    assert_eq!(resumed.best_epoch, full.best_epoch);
    let greedy = |rows: &[jssp_core::training::MetricRow]| rows.iter().map(|r| r.greedy_makespan).collect::<Vec<_>>();
    assert_eq!(greedy(&resumed.metrics), greedy(&full.metrics[instances.len()..]));
    let lines = std::fs::read_to_string(split.path().join("metrics.csv")).unwrap().lines().count();
    assert_eq!(lines, 1 + 2 * instances.len());
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let instances = vec![Instance::generate(3, 3, 5)];
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig { epochs: 0, ..small_config() };
    let out = train_loop(&instances, &config, 8, Some(dir.path()), false).unwrap();
    let saved = PolicyNet::load(&dir.path().join("init.net")).unwrap();
    assert_eq!(saved, PolicyNet::init(8));
    assert_eq!(out.best_epoch, None);
    assert!(dir.path().join("metrics.csv").exists());
}
