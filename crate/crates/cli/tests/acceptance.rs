//! Acceptance suite: one PASS/FAIL line per criterion, with its time budget.
//! Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use anneal::dataio::{serialize_cifar10, CIFAR10_PIXELS};
use anneal::micronet::ForwardCache;
use anneal::{
    adam_step, check_halt, cosine_lr, dump_schedule, fd_grad, gen_blobs, log_lr, newton_step, parse_cifar10,
    run_experiment, Activation, AdamConfig, BlobSpec, Cifar10Record, CycleRange, DataError, ExperimentConfig, FdSpec,
    HaltRule, Labels, LandscapeKind, LogBaseRule, Matrix, MlpModel, MlpSpec, Optimizer, OptimizerConfig, OutputHead,
    ParamVector, RestartPolicy, ScheduleKind, ScheduleSpec, Scheduler, SgdConfig, Task, WarmupConfig,
};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn reference_policy() -> RestartPolicy {
    RestartPolicy {
        initial_decay_epochs: 10,
        restart_interval: 10,
        restart_interval_multiplier: 2.0,
        restart_lr: 0.1,
        min_decay_lr: 0.001,
    }
}

fn reference_sgd() -> SgdConfig {
    SgdConfig {
        momentum: 0.9,
        dampening: 0.0,
        weight_decay: 0.0005,
    }
}

fn annealing(kind: ScheduleKind<f64>) -> ScheduleSpec {
    ScheduleSpec::new(kind, reference_policy(), WarmupConfig::none()).unwrap()
}

fn log_kind() -> ScheduleKind<f64> {
    ScheduleKind::LogAnnealing {
        base: LogBaseRule::RangeReciprocal,
    }
}

fn cosine_exactness() -> Outcome {
    let ranges = [(0.001, 0.1), (0.0001, 0.05), (1e-5, 0.9), (0.3, 0.31)];
    let mut midpoints = 0;
    for (lo, hi) in ranges {
        let c = CycleRange::new(lo, hi).unwrap();
        for t in [1usize, 2, 5, 10, 100, 10_000] {
            let top = cosine_lr(&c, 0, t).unwrap();
            let bottom = cosine_lr(&c, t, t).unwrap();
            ensure((top - hi).abs() <= 1e-12, || format!("T={t}: start {top} != {hi}"))?;
            ensure((bottom - lo).abs() <= 1e-12, || format!("T={t}: end {bottom} != {lo}"))?;
            if t % 2 == 0 {
                let mid = cosine_lr(&c, t / 2, t).unwrap();
                let want = lo + 0.5 * (hi - lo);
                ensure(mid == want, || format!("T={t}: midpoint {mid} != {want}"))?;
                midpoints += 1;
            }
        }
    }
    Ok(format!("24 boundary pairs, {midpoints} exact midpoints"))
}

fn log_oracle() -> Outcome {
    let text = include_str!("../../core/tests/data/log_lr_oracle.csv");
    let mut worst = 0.0f64;
    let mut n = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| f[i].parse::<f64>().unwrap();
        let rule = match f[2] {
            "range" => LogBaseRule::RangeReciprocal,
            "min" => LogBaseRule::MinReciprocal,
            _ => LogBaseRule::Explicit(num(2)),
        };
        let c = CycleRange::new(num(0), num(1)).unwrap();
        let got = log_lr(&c, f[3].parse().unwrap(), f[4].parse().unwrap(), &rule).map_err(|e| e.to_string())?;
        let rel = (got - num(5)).abs() / num(5).abs();
        worst = worst.max(rel);
        ensure(rel <= 1e-9, || format!("{line}: got {got}"))?;
        n += 1;
    }
    ensure(n == 10_000, || format!("oracle has {n} rows"))?;
    let spike = log_lr(&reference_policy().cycle(), 1, 10, &LogBaseRule::RangeReciprocal).unwrap();
    ensure(spike > 0.1, || format!("no spike: {spike}"))?;
    Ok(format!("{n} rows, worst rel {worst:.2e}, spike {spike:.6} > 0.1"))
}

fn restart_timeline() -> Outcome {
    // Oracle: walk a countdown, refilling it with the next cycle length.
    let mut oracle = Vec::new();
    let (mut remaining, mut next) = (10usize, 10.0f64);
    for epoch in 0..100 {
        if remaining == 0 {
            oracle.push(epoch);
            remaining = next.round() as usize;
            next *= 2.0;
        }
        remaining -= 1;
    }
    ensure(oracle == [10, 20, 40, 80], || format!("oracle {oracle:?}"))?;
    for kind in [log_kind(), ScheduleKind::CosineAnnealing] {
        let spec = annealing(kind);
        let mut s = Scheduler::new(spec);
        let mut seen = Vec::new();
        for epoch in 0..100 {
            if s.state().restarted {
                seen.push(epoch);
            }
            s.step();
        }
        ensure(seen == oracle, || {
            format!("{}: scheduler restarts {seen:?}", spec.name())
        })?;
        let dump = dump_schedule(&spec, 100);
        let jumps: Vec<usize> = dump.windows(2).filter(|w| w[1].1 > w[0].1).map(|w| w[1].0).collect();
        ensure(jumps == oracle, || format!("{}: dump jumps {jumps:?}", spec.name()))?;
    }
    Ok("restarts at 10, 20, 40, 80 for log and cosine".into())
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn net_fd(model: &mut MlpModel, inputs: &Matrix, labels: &Labels) -> Vec<f64> {
    let loss_at = |m: &MlpModel| {
        let cache: ForwardCache<f64> = m.forward(inputs).unwrap();
        m.loss(&cache, labels).unwrap()
    };
    (0..model.params().len())
        .map(|i| {
            let p = model.params().0[i];
            let h = 1e-6 * p.abs().max(1.0);
            model.params_mut().0[i] = p + h;
            let up = loss_at(model);
            model.params_mut().0[i] = p - h;
            let down = loss_at(model);
            model.params_mut().0[i] = p;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn gradient_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_net = 0.0f64;
    let mut nets = 0;
    for sizes in [vec![2, 16, 2], vec![4, 8, 8, 3]] {
        for head in [OutputHead::SoftmaxWithSparseCe, OutputHead::SigmoidWithCategoricalCe] {
            for (seed, activation) in (0..5u64).zip([Activation::Relu, Activation::leaky()].into_iter().cycle()) {
                let spec = MlpSpec {
                    layer_sizes: sizes.clone(),
                    hidden_activation: activation,
                    output_head: head,
                    init_seed: seed,
                };
                let (dim, classes, rows) = (sizes[0], *sizes.last().unwrap(), 12);
                let x: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                let inputs = Matrix::from_vec(rows, dim, x);
                let ids: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
                let labels = match head {
                    OutputHead::SoftmaxWithSparseCe => Labels::Sparse(ids),
                    OutputHead::SigmoidWithCategoricalCe => {
                        let mut t = Matrix::zeros(rows, classes);
                        for (r, &k) in ids.iter().enumerate() {
                            t[(r, k)] = 1.0;
                        }
                        Labels::Dense(t)
                    }
                };
                let mut model = MlpModel::init(spec).unwrap();
                let cache = model.forward(&inputs).unwrap();
                let analytic = model.backward(&cache, &labels).unwrap();
                let numeric = net_fd(&mut model, &inputs, &labels);
                let rel = rel_err(&analytic, &numeric);
                worst_net = worst_net.max(rel);
                ensure(rel <= 1e-5, || format!("{sizes:?} {head:?} seed {seed}: rel {rel:e}"))?;
                nets += 1;
            }
        }
    }

    let mut worst_land = 0.0f64;
    let kinds = [
        LandscapeKind::Ackley,
        LandscapeKind::Griewank,
        LandscapeKind::Rastrigin,
        LandscapeKind::quadratic(random_spd(&mut rng, 4, 0.5, 50.0)).unwrap(),
    ];
    for kind in &kinds {
        for _ in 0..100 {
            let d = match kind {
                LandscapeKind::Quadratic(_) => 4,
                _ => rng.random_range(1..=6),
            };
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let analytic = kind.grad(&x).unwrap();
            let numeric = fd_grad(kind, &x, FdSpec::default()).unwrap();
            let rel = rel_err(&analytic, &numeric);
            worst_land = worst_land.max(rel);
            ensure(rel <= 1e-6, || format!("{} at {x:?}: rel {rel:e}", kind.name()))?;
        }
    }
    Ok(format!(
        "{nets} nets worst rel {worst_net:.1e}; 4x100 landscape points worst rel {worst_land:.1e}"
    ))
}

/// `Q diag(lambda) Q^T` with eigenvalues log-spaced over `[lo, hi]`
/// (both ends included) and `Q` from Gram-Schmidt on a random matrix.
fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Matrix {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let lambda: Vec<f64> = (0..n)
        .map(|i| {
            let f = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            lo * (hi / lo).powf(f)
        })
        .collect();
    let mut a = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            a[(r, c)] = (0..n).map(|k| q[k][r] * lambda[k] * q[k][c]).sum();
        }
    }
    // Exact symmetry despite rounding in the sums.
    for r in 0..n {
        for c in 0..r {
            a[(r, c)] = a[(c, r)];
        }
    }
    a
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn optimizer_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_newton = 0.0f64;
    let mut worst_sgd = 0.0f64;
    let mut max_steps = 0;
    for trial in 0..20 {
        let n = 2 + trial % 7;
        // Condition number 1000; the top eigenvalue keeps lr 0.1 stable.
        let a = random_spd(&mut rng, n, 0.02, 20.0);
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut x = ParamVector::new(x0.clone());
        let g = a.mul_vec(&x0);
        newton_step(&mut x, &g, &a, 1.0).map_err(|e| e.to_string())?;
        worst_newton = worst_newton.max(norm(x.as_slice()));

        let sgd = SgdConfig {
            momentum: 0.9,
            dampening: 0.0,
            weight_decay: 0.0,
        };
        let mut opt = Optimizer::new(OptimizerConfig::Sgd(sgd), n).unwrap();
        let mut x = ParamVector::new(x0);
        let mut steps = 0;
        while norm(x.as_slice()) > 1e-6 && steps < 1000 {
            let g = a.mul_vec(x.as_slice());
            opt.step(&mut x, &g, 0.1).map_err(|e| e.to_string())?;
            steps += 1;
        }
        worst_sgd = worst_sgd.max(norm(x.as_slice()));
        max_steps = max_steps.max(steps);
    }
    ensure(worst_newton <= 1e-10, || format!("newton |x| {worst_newton:e}"))?;
    ensure(worst_sgd <= 1e-6, || format!("sgd |x| {worst_sgd:e}"))?;

    let mut worst_adam = 0.0f64;
    for _ in 0..1000 {
        let magnitude = 10f64.powf(rng.random_range(-1.7..3.0));
        let g = if rng.random_bool(0.5) { magnitude } else { -magnitude };
        let n = 3;
        let mut x = ParamVector::zeros(n);
        let mut state = anneal::optim::AdamState::new(n);
        adam_step(&mut x, &[g; 3], 0.001, &AdamConfig::default(), &mut state).map_err(|e| e.to_string())?;
        for &v in x.as_slice() {
            let dev = (v.abs() / 0.001 - 1.0).abs();
            worst_adam = worst_adam.max(dev);
            ensure(dev <= 1e-6 && v.signum() == -g.signum(), || {
                format!("adam g={g}: step {v}")
            })?;
        }
    }
    Ok(format!(
        "newton |x| {worst_newton:.1e}; sgd |x| {worst_sgd:.1e} in <= {max_steps} steps; adam dev {worst_adam:.1e}"
    ))
}

fn halt_rule() -> Outcome {
    let rule = HaltRule {
        buffer_epochs: 2,
        loss_threshold: 4.5,
    };
    ensure(!check_halt(&rule, 1, 5.0), || "halted at epoch 1".into())?;
    ensure(check_halt(&rule, 3, 4.6), || "no halt at epoch 3, loss 4.6".into())?;
    ensure(!check_halt(&rule, 3, 4.5), || "halted at the threshold".into())?;
    ensure(!check_halt(&rule, 1, 1e9) && !check_halt(&rule, 2, 1e9), || {
        "halted inside buffer".into()
    })?;
    Ok("3 examples + buffer".into())
}

fn digests(dir: &Path) -> BTreeMap<String, String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let digest = Sha256::digest(fs::read(&path).unwrap());
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            (path.file_name().unwrap().to_string_lossy().into_owned(), hex)
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |out: &str| {
        Command::new(env!("CARGO_BIN_EXE_anneal"))
            .args([
                "compare",
                "--schedules",
                "log,cosine,step,constant",
                "--gamma",
                "0.5",
                "--step-size",
                "10",
                "--initial-decay",
                "10",
                "--interval",
                "10",
                "--mult",
                "2",
                "--restart-lr",
                "0.1",
                "--warmup",
                "2",
                "--per-class",
                "200",
                "--epochs",
                "30",
                "--seed",
                "7",
                "--out-dir",
                out,
            ])
            .current_dir(tmp.path())
            .env_remove("ANNEAL_SEED")
            .output()
            .map_err(|e| e.to_string())
    };
    for out in ["a", "b"] {
        let o = run(out)?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    }
    let (a, b) = (digests(&tmp.path().join("a")), digests(&tmp.path().join("b")));
    let csv = a.keys().filter(|k| k.ends_with(".csv")).count();
    let svg = a.keys().filter(|k| k.ends_with(".svg")).count();
    ensure(csv == 4 && svg == 1, || format!("files {:?}", a.keys()))?;
    ensure(a == b, || "digests differ".into())?;
    Ok(format!("{} files byte-identical", a.len()))
}

fn blob_experiment(schedule: ScheduleSpec, epochs: usize, per_class: usize) -> ExperimentConfig {
    let data = gen_blobs(&BlobSpec {
        classes: 2,
        per_class,
        dim: 2,
        center_separation: 4.0,
        noise_sigma: 1.0,
        seed: 7,
    })
    .unwrap();
    ExperimentConfig {
        task: Task::Mlp {
            spec: MlpSpec {
                layer_sizes: vec![2, 16, 2],
                hidden_activation: Activation::Relu,
                output_head: OutputHead::SoftmaxWithSparseCe,
                init_seed: 7,
            },
            data,
        },
        optimizer: OptimizerConfig::Sgd(reference_sgd()),
        schedule,
        epochs,
        batch_size: 128,
        seed: 7,
        halt: HaltRule::default(),
    }
}

fn training_surrogate() -> Outcome {
    let mut parts = Vec::new();
    for kind in [log_kind(), ScheduleKind::CosineAnnealing] {
        let spec = annealing(kind);
        let r = run_experiment(&blob_experiment(spec, 200, 500)).map_err(|e| e.to_string())?;
        ensure(!r.halted && r.metrics.len() == 200, || {
            format!("{}: stopped early", spec.name())
        })?;
        let first = r.metrics[0].mean_loss;
        let last = r.metrics.last().unwrap();
        let ratio = last.mean_loss / first;
        let acc = last.accuracy.unwrap();
        parts.push(format!("{} ratio {ratio:.3} acc {acc:.3}", spec.name()));
        ensure(ratio <= 0.2 && acc >= 0.95, || parts.join("; "))?;
    }
    Ok(parts.join("; "))
}

fn cifar_parser() -> Outcome {
    let record = |label: u8, salt: u8| {
        let mut pixels = Box::new([0u8; CIFAR10_PIXELS]);
        for (i, p) in pixels.iter_mut().enumerate() {
            *p = (i as u8).wrapping_mul(31).wrapping_add(salt);
        }
        Cifar10Record { label, pixels }
    };
    let fixture = vec![record(3, 0), record(7, 101)];
    let bytes = serialize_cifar10(&fixture);
    ensure(bytes.len() == 2 * 3073, || format!("{} bytes", bytes.len()))?;
    ensure(bytes[0] == 3 && bytes[3073] == 7, || "label bytes misplaced".into())?;
    let parsed = parse_cifar10(&bytes).map_err(|e| e.to_string())?;
    ensure(parsed == fixture, || "records differ after parsing".into())?;
    ensure(serialize_cifar10(&parsed) == bytes, || {
        "bytes differ after round trip".into()
    })?;
    match parse_cifar10(&[0u8; 3072]) {
        Err(DataError::Truncated { offset: 0, .. }) => {}
        other => return Err(format!("3072 bytes gave {other:?}")),
    }
    Ok("2-record round trip; 3072 bytes truncated at offset 0".into())
}

fn schedule_fidelity() -> Outcome {
    let warm = WarmupConfig {
        warmup_epochs: 3,
        warmup_start_lr: 0.001,
    };
    let specs = [
        ScheduleSpec::new(log_kind(), reference_policy(), warm).unwrap(),
        ScheduleSpec::new(ScheduleKind::CosineAnnealing, reference_policy(), warm).unwrap(),
        ScheduleSpec::step_decay(0.05, 0.5, 20).unwrap(),
        ScheduleSpec::constant(0.0001).unwrap(),
    ];
    for spec in specs {
        let r = run_experiment(&blob_experiment(spec, 100, 50)).map_err(|e| e.to_string())?;
        let dump = dump_schedule(&spec, 100);
        ensure(r.metrics.len() == 100, || {
            format!("{}: {} epochs", spec.name(), r.metrics.len())
        })?;
        for (m, &(e, lr)) in r.metrics.iter().zip(&dump) {
            ensure(m.lr_min == lr && m.lr_mean == lr && m.lr_max == lr, || {
                format!(
                    "{} epoch {e}: recorded {:?} vs {lr}",
                    spec.name(),
                    (m.lr_min, m.lr_mean, m.lr_max)
                )
            })?;
        }
    }
    Ok("log, cosine, step, constant x 100 epochs".into())
}

fn main() {
    let criteria: [(&str, Duration, Check); 10] = [
        ("1 cosine exactness", Duration::from_secs(1), cosine_exactness),
        ("2 log oracle equivalence", Duration::from_secs(5), log_oracle),
        ("3 restart timeline", Duration::from_secs(1), restart_timeline),
        ("4 gradient fidelity", Duration::from_secs(30), gradient_fidelity),
        ("5 optimizer contracts", Duration::from_secs(5), optimizer_contracts),
        ("6 halt rule", Duration::from_secs(1), halt_rule),
        ("7 determinism", Duration::from_secs(60), determinism),
        ("8 training surrogate", Duration::from_secs(30), training_surrogate),
        ("9 cifar parser", Duration::from_secs(1), cifar_parser),
        ("10 schedule fidelity", Duration::from_secs(5), schedule_fidelity),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if elapsed <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over budget")),
            Err(e) => ("FAIL", e),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "criterion {name:<26} {status}  ({:.3}s / {}s)  {detail}",
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
