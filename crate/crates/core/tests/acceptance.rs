//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! The process exits 0 after reporting unless `CWNGD_ACCEPTANCE_STRICT=1`,
//! in which case any failed criterion makes it exit 1. The MNIST criterion
//! reads the IDX files from `MNIST_DIR`, falling back to `data/mnist` at the
//! workspace root.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use cwngd::data::{load_mnist_dir, synth_dataset, Dataset, SynthKind};
use cwngd::fim::{component_fim, damped_solve, full_fim_oracle, make_groups, param_offsets, Executor};
use cwngd::network::{
    backprop_per_sample, softmax_cross_entropy_per_sample, Activation, DenseLayer, LayerSpec, Network, PerSampleGrads,
};
use cwngd::optim::{cwngd_updates, CwNgd, CwNgdConfig};
use cwngd::train::{run_training_on, DatasetSpec, MetricsRecord, OptimizerKind, TrainConfig, DEFAULT_ARCH};
use cwngd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn layer_grads(net: &Network, x: &Tensor, y: &Tensor) -> Vec<(usize, PerSampleGrads)> {
    let mut cache = net.forward_prop(x).unwrap();
    let logits = cache.take_output().unwrap();
    let (_, d) = softmax_cross_entropy_per_sample(&logits, y).unwrap();
    backprop_per_sample(net, cache, d).unwrap().map(Result::unwrap).collect()
}

fn gradient_oracle() -> Outcome {
    let arch = "conv:2@3x3,maxpool:2x2,flatten,dense:16:relu,dense:3".parse().unwrap();
    let net = Network::from_arch(&arch, &[8, 8, 1], 11).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&[4, 8, 8, 1], &mut rng, -1.0, 1.0);
    let y = common::cyclic_labels(4, 3, 2, 1);

    let mut analytic = vec![Vec::new(); net.layers().len()];
    for (l, g) in layer_grads(&net, &x, &y) {
        analytic[l] = g.mean().to_flat();
    }
    let analytic: Vec<f64> = net.trainable_layers().flat_map(|l| analytic[l].clone()).collect();

    let h = 1e-5;
    let loss = |n: &Network| common::mean_cross_entropy(&n.predict(&x).unwrap(), &y);
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let fd = (loss(&common::perturbed(&net, k, h)) - loss(&common::perturbed(&net, k, -h))) / (2.0 * h);
        let scale = a.abs().max(fd.abs());
        let rel = if scale < 1e-8 { 0.0 } else { (a - fd).abs() / scale };
        worst = worst.max(rel);
    }
    let msg = format!("{} parameters, max relative error {worst:.2e}", analytic.len());
    if worst <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn small_dense_case(seed: u64) -> (Network, Tensor, Tensor) {
    let net = Network::from_arch(&"dense:4,dense:3".parse().unwrap(), &[2], seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31) + 7);
    let x = random_tensor(&[8, 2], &mut rng, -2.0, 2.0);
    let cls: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
    let y = Tensor::from_fn(&[8, 3], |i| if i % 3 == cls[i / 3] { 1.0 } else { 0.0 });
    (net, x, y)
}

fn exact_extraction() -> Outcome {
    let mut compared = 0usize;
    for seed in 0..20 {
        let (net, x, y) = small_dense_case(seed);
        let full = full_fim_oracle(&net, &x, &y).map_err(|e| e.to_string())?;
        let dim = net.param_count();
        let offsets = param_offsets(&net);
        for (l, grads) in layer_grads(&net, &x, &y) {
            let off = offsets.iter().find(|o| o.0 == l).unwrap().1;
            let map = make_groups(net.layer(l), l).unwrap();
            let blocks = component_fim(&grads, &map).map_err(|e| e.to_string())?;
            let n = map.group_size();
            for (g, idx) in map.groups().iter().enumerate() {
                for i in 0..n {
                    for j in 0..n {
                        let want = full.data()[(off + idx[i]) * dim + off + idx[j]];
                        let got = blocks.block(g)[i * n + j];
                        if got.to_bits() != want.to_bits() {
                            return Err(format!("seed {seed}, layer {l}, group {g}, ({i},{j}): {got:e} vs {want:e}"));
                        }
                        compared += 1;
                    }
                }
            }
        }
    }
    Ok(format!("20 seeds, {compared} block entries bitwise equal"))
}

fn solve_residual() -> Outcome {
    let gamma = 1e-4;
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (net, x, y) = small_dense_case(seed);
        for (l, grads) in layer_grads(&net, &x, &y) {
            let map = make_groups(net.layer(l), l).unwrap();
            let blocks = component_fim(&grads, &map).unwrap();
            let d = grads.mean();
            let u = damped_solve(&blocks, &map, &d, gamma).map_err(|e| e.to_string())?;
            let n = map.group_size();
            for (g, idx) in map.groups().iter().enumerate() {
                let f = blocks.block(g);
                let dg: Vec<f64> = idx.iter().map(|&k| d.get_flat(k)).collect();
                let ug: Vec<f64> = idx.iter().map(|&k| u.get_flat(k)).collect();
                let dmax = dg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for j in 0..n {
                    let r: f64 = (0..n).map(|i| ug[i] * (f[i * n + j] + if i == j { gamma } else { 0.0 })).sum();
                    worst = worst.max((r - dg[j]).abs() / (1.0 + dmax));
                }
            }
        }
    }
    let msg = format!("max |u(F+gI) - d| / (1 + |d|) = {worst:.2e}");
    if worst <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn one_step_least_squares() -> Outcome {
    let (p, n_in) = (20, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&[p, n_in], &mut rng, -1.0, 1.0);
    let targets: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
    let layer = DenseLayer::zeros(n_in, 1, Activation::Identity);
    let mut net = Network::new(&[n_in], vec![LayerSpec::Dense(layer)], 0).unwrap();

    // Squared loss 0.5 (z - t)^2 per sample; its output derivative is z - t.
    let z = net.predict(&x).unwrap();
    let d_out = Tensor::from_fn(&[p, 1], |s| z.data()[s] - targets[s]);
    let opt = CwNgd::new(CwNgdConfig {
        learning_rate: 1.0,
        damping: 1e-12,
    })
    .map_err(|e| e.to_string())?;
    let updates = cwngd_updates(&net, &x, d_out, &opt).map_err(|e| e.to_string())?;
    for (l, u) in &updates {
        net.apply_update(*l, u, -1.0).unwrap();
    }
    let got = net.layer_params(0).unwrap();

    // Normal equations over [x, 1].
    let k = n_in + 1;
    let mut ata = vec![0.0; k * k];
    let mut atb = vec![0.0; k];
    for (s, target) in targets.iter().enumerate().take(p) {
        let row: Vec<f64> = x.sample(s).iter().cloned().chain([1.0]).collect();
        for i in 0..k {
            atb[i] += row[i] * target;
            for j in 0..k {
                ata[i * k + j] += row[i] * row[j];
            }
        }
    }
    let theta = common::solve_dense(&ata, &atb, k);
    let mine: Vec<f64> = got.weights.data().iter().chain(got.bias.data()).cloned().collect();
    let err = mine.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let msg = format!("max parameter error vs least squares {err:.3e}");
    if err <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn first_epoch_reaching(records: &[MetricsRecord], acc: f64) -> Option<usize> {
    records.iter().find(|r| r.train_acc >= acc).map(|r| r.epoch)
}

fn mnist_reproduction() -> Outcome {
    let dir = mnist_dir();
    let (train, test) = load_mnist_dir(&dir).map_err(|e| format!("MNIST not available at {}: {e}", dir.display()))?;
    let (train, test) = (train.take(10_000).unwrap(), test.take(2_000).unwrap());
    let run = |kind: OptimizerKind, seed: u64, train: &Dataset, test: &Dataset| {
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 256,
            seed,
            ..TrainConfig::new(
                kind,
                DatasetSpec::Mnist {
                    dir: dir.clone(),
                    train_limit: Some(10_000),
                    test_limit: Some(2_000),
                },
            )
        };
        let started = Instant::now();
        let out = run_training_on(&cfg, train, test, |r| {
            eprintln!(
                "    {kind} seed {seed} epoch {:>2}: train {:.4} val {:.4} loss {:.4}",
                r.epoch, r.train_acc, r.val_acc, r.train_loss
            )
        });
        eprintln!("    {kind} seed {seed} finished in {:.0} s", started.elapsed().as_secs_f64());
        out
    };

    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for seed in 0..3 {
        let adam = run(OptimizerKind::Adam, seed, &train, &test).map_err(|e| format!("Adam seed {seed}: {e}"))?;
        let ngd = match run(OptimizerKind::CwNgd, seed, &train, &test) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("seed {seed}: CW-NGD run failed ({e})"));
                continue;
            }
        };
        let (a2, n2) = (adam[1].train_acc, ngd[1].train_acc);
        let adam_epochs = first_epoch_reaching(&adam, 0.99).unwrap_or(20);
        let ngd_epochs = first_epoch_reaching(&ngd, 0.99);
        let (av, nv) = (adam.last().unwrap().val_acc, ngd.last().unwrap().val_acc);
        summary.push(format!(
            "seed {seed}: epoch-2 acc {n2:.4}/{a2:.4}, epochs to 99% {}/{adam_epochs}, final val {nv:.4}/{av:.4}",
            ngd_epochs.map_or("never".into(), |e| e.to_string())
        ));
        if n2 <= a2 {
            failures.push(format!("seed {seed}: (a) epoch-2 train accuracy {n2:.4} not above Adam's {a2:.4}"));
        }
        if !ngd_epochs.is_some_and(|e| 2 * e <= adam_epochs) {
            failures.push(format!(
                "seed {seed}: (b) CW-NGD reached 99% at {:?}, Adam at {adam_epochs}",
                ngd_epochs
            ));
        }
        if nv < av - 0.003 {
            failures.push(format!("seed {seed}: (c) final validation {nv:.4} below Adam's {av:.4} - 0.003"));
        }
    }
    let text = format!("CW-NGD/Adam {}", summary.join("; "));
    if failures.is_empty() {
        Ok(text)
    } else {
        Err(format!("{}; {text}", failures.join("; ")))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = DatasetSpec::Synthetic {
        kind: SynthKind::Blobs {
            classes: 3,
            separation: 3.0,
        },
        samples: 120,
    };
    let (train, test) = spec.load(4).map_err(|e| e.to_string())?;
    let csv = |name: &str, threads: usize| -> Result<Vec<u8>, String> {
        let path = dir.path().join(name);
        let cfg = TrainConfig {
            arch: "dense:8:tanh,dense:3".into(),
            epochs: 5,
            batch_size: 16,
            seed: 4,
            threads,
            metrics_out: Some(path.clone()),
            record_timing: false,
            ..TrainConfig::new(OptimizerKind::CwNgd, spec.clone())
        };
        run_training_on(&cfg, &train, &test, |_| {}).map_err(|e| e.to_string())?;
        std::fs::read(&path).map_err(|e| e.to_string())
    };
    let first = csv("a.csv", 1)?;
    if first != csv("b.csv", 1)? {
        return Err("two identical runs wrote different CSV bytes".into());
    }
    if first != csv("c.csv", 4)? {
        return Err("a 4-thread pool changed the CSV".into());
    }

    // Full-size architecture, two steps, serial against pooled block solves.
    let net = Network::from_arch(&DEFAULT_ARCH.parse().unwrap(), &[28, 28, 1], 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_tensor(&[32, 28, 28, 1], &mut rng, 0.0, 1.0);
    let y = common::cyclic_labels(32, 10, 3, 0);
    let step_twice = |exec: Executor| -> Result<Vec<u64>, String> {
        let opt = CwNgd::new(CwNgdConfig::default()).unwrap().with_executor(exec);
        let mut n = net.clone();
        for _ in 0..2 {
            opt.step(&mut n, &x, &y).map_err(|e| e.to_string())?;
        }
        Ok(common::flat_params(&n).iter().map(|v| v.to_bits()).collect())
    };
    let serial = step_twice(Executor::Serial)?;
    let pooled = step_twice(Executor::with_threads(4).map_err(|e| e.to_string())?)?;
    if serial != pooled {
        return Err("pooled block solves changed the weights of the default architecture".into());
    }
    Ok(format!(
        "{} CSV bytes identical across reruns and thread counts; {} weights bitwise equal serial vs pool",
        first.len(),
        serial.len()
    ))
}

fn xor_smoke() -> Outcome {
    let spec = DatasetSpec::Synthetic {
        kind: SynthKind::Xor { noise: 0.0 },
        samples: 4,
    };
    let data = synth_dataset(SynthKind::Xor { noise: 0.0 }, 4, 0).map_err(|e| e.to_string())?;
    let reach = |kind: OptimizerKind, epochs: usize, seed: u64| -> Result<Option<usize>, String> {
        let cfg = TrainConfig {
            arch: "dense:8:tanh,dense:2".into(),
            epochs,
            batch_size: 4,
            seed,
            ..TrainConfig::new(kind, spec.clone())
        };
        let records = run_training_on(&cfg, &data, &data, |_| {}).map_err(|e| e.to_string())?;
        Ok(first_epoch_reaching(&records, 1.0))
    };
    let mut report = Vec::new();
    let mut ok = true;
    for seed in 0..5 {
        let ngd = reach(OptimizerKind::CwNgd, 30, seed).unwrap_or_else(|e| {
            report.push(format!("seed {seed} CW-NGD error: {e}"));
            None
        });
        let adam = reach(OptimizerKind::Adam, 500, seed).unwrap_or_else(|e| {
            report.push(format!("seed {seed} Adam error: {e}"));
            None
        });
        ok &= ngd.is_some() && adam.is_some();
        let show = |v: Option<usize>| v.map_or("never".to_string(), |e| e.to_string());
        report.push(format!("seed {seed}: CW-NGD {} Adam {}", show(ngd), show(adam)));
    }
    let msg = format!("epochs to 100%: {}", report.join(", "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 gradient oracle", gradient_oracle),
        ("2 FIM exact extraction", exact_extraction),
        ("3 solve residual", solve_residual),
        ("4 one-step least squares", one_step_least_squares),
        ("5 scaled MNIST comparison", mnist_reproduction),
        ("6 determinism", determinism),
        ("7 XOR smoke", xor_smoke),
    ];
    let only: Option<Vec<String>> = std::env::var("CWNGD_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        let number = name.split(' ').next().unwrap();
        if only.as_ref().is_some_and(|o| !o.iter().any(|s| s == number)) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("[PASS] criterion {name}: {msg} ({secs:.1} s)"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] criterion {name}: {msg} ({secs:.1} s)");
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var("CWNGD_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
