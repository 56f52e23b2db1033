use mczsl_core::continual::{ReplayPolicy, TrainConfig};
use mczsl_core::data::{synth_dataset, DatasetContainer, SynthSpec};
use mczsl_core::model::{write_checkpoint, ModelParams};
use mczsl_core::optim::MetaSchedule;
use mczsl_core::pipeline::{describe, evaluate_run, prepare, run_protocol, Experiment, PreparedRun, ReplayConfig};
use mczsl_core::protocols::Protocol;
use mczsl_core::Rng;

fn small_data(seed: u64) -> DatasetContainer {
    let spec = SynthSpec {
        n_seen: 8,
        n_unseen: 4,
        feat_dim: 12,
        attr_dim: 6,
        noise_sigma: 0.3,
        samples_per_class: 10,
    };
    synth_dataset(&spec, &mut Rng::seed_from(seed)).unwrap()
}

fn experiment(protocol: Protocol, seed: u64) -> Experiment {
    Experiment {
        protocol,
        seed,
        train: TrainConfig {
            schedule: MetaSchedule {
                epochs: 3,
                ..MetaSchedule::default()
            },
            ..TrainConfig::default()
        },
        ..Experiment::default()
    }
}

fn prepared(exp: &Experiment, data: &DatasetContainer) -> PreparedRun {
    prepare(exp, &describe(data, 4, 2), data).unwrap()
}

fn run_collect(exp: &Experiment, prep: &PreparedRun) -> (Vec<ModelParams<f32>>, Vec<usize>, mczsl_core::protocols::MetricsRecord) {
    let mut params = Vec::new();
    let mut memory = Vec::new();
    let res = run_protocol(exp, prep, |o| {
        params.push(o.params.clone());
        memory.push(o.memory.len());
        Ok(())
    })
    .unwrap();
    (params, memory, res.metrics)
}

#[test]
fn memory_fills_to_min_of_budget_and_samples_seen() {
    let data = small_data(1);
    for (budget, policy) in [(5, ReplayPolicy::Reservoir), (20, ReplayPolicy::Reservoir), (1000, ReplayPolicy::Ring)] {
        let mut exp = experiment(Protocol::FixedContinual, 1);
        exp.replay = ReplayConfig {
            policy,
            budget: Some(budget),
        };
        let prep = prepared(&exp, &data);
        let (_, memory, _) = run_collect(&exp, &prep);
        let mut seen = 0;
        for (task, &len) in prep.plan.tasks.iter().zip(&memory) {
            seen += task.train.len();
            assert_eq!(len, budget.min(seen), "budget {budget}, task {}", task.task);
        }
    }
}

#[test]
fn default_budget_comes_from_the_plan() {
    let data = small_data(2);
    let exp = experiment(Protocol::FixedContinual, 2);
    let prep = prepared(&exp, &data);
    assert_eq!(prep.plan.replay_budget, 2 * data.num_classes());
    let res = run_protocol(&exp, &prep, |_| Ok(())).unwrap();
    assert_eq!(res.memory.capacity(), prep.plan.replay_budget);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let data = small_data(3);
    let dir = tempfile::tempdir().unwrap();
    let bytes = |seed: u64, name: &str| {
        let exp = experiment(Protocol::DynamicContinual, seed);
        let prep = prepared(&exp, &data);
        let res = run_protocol(&exp, &prep, |_| Ok(())).unwrap();
        let path = dir.path().join(name);
        write_checkpoint(&res.params, &path).unwrap();
        (std::fs::read(path).unwrap(), res.memory.to_bytes().unwrap(), res.metrics)
    };
    let a = bytes(5, "a.mczp");
    let b = bytes(5, "b.mczp");
    let c = bytes(6, "c.mczp");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn rescoring_saved_parameters_reproduces_metrics() {
    let data = small_data(4);
    for protocol in [Protocol::FixedContinual, Protocol::DynamicContinual, Protocol::Gzsl] {
        let exp = experiment(protocol, 4);
        let prep = prepared(&exp, &data);
        let (params, _, metrics) = run_collect(&exp, &prep);
        assert_eq!(evaluate_run(&prep, &params).unwrap(), metrics, "{protocol:?}");
    }
}

#[test]
fn metrics_ignore_test_sample_order() {
    let data = small_data(5);
    let exp = experiment(Protocol::DynamicContinual, 5);
    let prep = prepared(&exp, &data);
    let (params, _, metrics) = run_collect(&exp, &prep);

    let mut rng = Rng::seed_from(99);
    let mut shuffled = PreparedRun {
        data: prep.data.clone(),
        plan: prep.plan.clone(),
    };
    for t in &mut shuffled.plan.tasks {
        rng.shuffle(&mut t.test_seen);
        rng.shuffle(&mut t.test_unseen);
    }
    assert_eq!(evaluate_run(&shuffled, &params).unwrap(), metrics);
}

#[test]
fn plain_training_without_meta_learning_reduces_loss() {
    let data = small_data(6);
    let mut exp = experiment(Protocol::Gzsl, 6);
    exp.train.disable_meta = true;
    exp.train.schedule.epochs = 30;
    let prep = prepared(&exp, &data);
    let res = run_protocol(&exp, &prep, |_| Ok(())).unwrap();
    let st = &res.stats[0];
    assert!(st.last_epoch_loss < st.first_epoch_loss, "{st:?}");
}

#[test]
fn meta_training_reduces_loss() {
    let data = small_data(7);
    let mut exp = experiment(Protocol::Gzsl, 7);
    exp.train.schedule.epochs = 30;
    let prep = prepared(&exp, &data);
    let res = run_protocol(&exp, &prep, |_| Ok(())).unwrap();
    let st = &res.stats[0];
    assert!(st.last_epoch_loss < st.first_epoch_loss, "{st:?}");
}
