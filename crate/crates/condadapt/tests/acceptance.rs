//! The acceptance gate: every criterion at its stated tolerance, one
//! PASS/FAIL line each. Oracles here are written independently of the
//! library code they check.

use std::time::{Duration, Instant};

use condadapt::{checkpoint, cli, dataset_io, report};
use condadapt_core::data::{
    augment, clip_label_from_frames, flip_horizontal, synth_generate, Dataset, SynthConfig, DEFAULT_SIGMAS,
};
use condadapt_core::eval::{confusion, metrics, per_scenario_report, roc_auc, Confusion, MetricsReport};
use condadapt_core::labels::scene_one_hots;
use condadapt_core::layers::{conv3d, Conv3dParams};
use condadapt_core::network::{Network, NetworkConfig, ParamGroup};
use condadapt_core::tensor::Tensor;
use condadapt_core::training::{joint_loss, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::main_with(
        std::iter::once("condadapt").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let (code, out, err) = run_cli(&["gradcheck"]);
    let secs = started.elapsed().as_secs_f64();
    ensure(code == 0, || format!("exit {code}: {out}{err}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    let worst = out
        .lines()
        .filter(|l| l.ends_with("\tok") || l.ends_with("\tFAIL"))
        .filter_map(|l| l.split('\t').nth(1)?.parse::<f64>().ok())
        .fold(0.0, f64::max);
    ensure(worst < 1e-4, || format!("max rel. error {worst:e}"))?;
    Ok(format!("max rel. error {worst:.2e} in {secs:.1} s"))
}

/// Direct transcription of the valid strided 3D convolution sum.
fn conv3d_oracle(x: &Tensor, k: &Tensor, b: &Tensor, s: [usize; 3]) -> Tensor {
    let [c_in, d, h, w] = x.dims().try_into().unwrap();
    let [c_out, _, kd, kh, kw] = k.dims().try_into().unwrap();
    let (od, oh, ow) = ((d - kd) / s[0] + 1, (h - kh) / s[1] + 1, (w - kw) / s[2] + 1);
    let xi = |c: usize, z: usize, y: usize, xx: usize| x.data()[((c * d + z) * h + y) * w + xx];
    let ki =
        |o: usize, c: usize, z: usize, y: usize, xx: usize| k.data()[(((o * c_in + c) * kd + z) * kh + y) * kw + xx];
    let mut out = Vec::new();
    for o in 0..c_out {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..c_in {
                        for dz in 0..kd {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    acc += ki(o, c, dz, dy, dx) * xi(c, z * s[0] + dz, y * s[1] + dy, xx * s[2] + dx);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(vec![c_out, od, oh, ow], out).unwrap()
}

/// Plain single-channel-in 2D cross-correlation, unit stride.
fn conv2d_oracle(img: &[Vec<f64>], ker: &[Vec<f64>], bias: f64) -> Vec<Vec<f64>> {
    let (h, w, kh, kw) = (img.len(), img[0].len(), ker.len(), ker[0].len());
    (0..=h - kh)
        .map(|y| {
            (0..=w - kw)
                .map(|x| {
                    bias + (0..kh)
                        .flat_map(|i| (0..kw).map(move |j| (i, j)))
                        .map(|(i, j)| ker[i][j] * img[y + i][x + j])
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

fn convolution_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let dims: [usize; 4] = [
            rng.random_range(1..=3),
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=6),
        ];
        let mut kernel = [0; 3];
        let mut stride = [1; 3];
        for a in 0..3 {
            kernel[a] = rng.random_range(1..=dims[a + 1]);
            let span = dims[a + 1] - kernel[a];
            let options: Vec<usize> = (1..=3).filter(|s| span.is_multiple_of(*s)).collect();
            stride[a] = options[rng.random_range(0..options.len())];
        }
        let out_ch = rng.random_range(1..=3);
        let x = random_tensor(&mut rng, dims.to_vec());
        let k = random_tensor(&mut rng, vec![out_ch, dims[0], kernel[0], kernel[1], kernel[2]]);
        let b = random_tensor(&mut rng, vec![out_ch]);
        let got = conv3d(&x, &Conv3dParams::new(k.clone(), b.clone(), stride).unwrap()).map_err(|e| e.to_string())?;
        let want = conv3d_oracle(&x, &k, &b, stride);
        ensure(got.dims() == want.dims(), || {
            format!("case {case}: extents {:?} vs {:?}", got.dims(), want.dims())
        })?;
        for (g, w) in got.data().iter().zip(want.data()) {
            worst = worst.max((g - w).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("3D max abs error {worst:e}"))?;

    let mut worst2: f64 = 0.0;
    for _ in 0..20 {
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let (kh, kw) = (rng.random_range(1..=h), rng.random_range(1..=w));
        let img: Vec<Vec<f64>> = (0..h)
            .map(|_| (0..w).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ker: Vec<Vec<f64>> = (0..kh)
            .map(|_| (0..kw).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let bias = rng.random_range(-1.0..1.0);
        let x = Tensor::new(vec![1, 1, h, w], img.concat()).unwrap();
        let k = Tensor::new(vec![1, 1, 1, kh, kw], ker.concat()).unwrap();
        let p = Conv3dParams::new(k, Tensor::vector(vec![bias]), [1, 1, 1]).unwrap();
        let got = conv3d(&x, &p).map_err(|e| e.to_string())?;
        let want = conv2d_oracle(&img, &ker, bias).concat();
        ensure(got.len() == want.len(), || "2D extents differ".into())?;
        for (g, w) in got.data().iter().zip(&want) {
            worst2 = worst2.max((g - w).abs());
        }
    }
    ensure(worst2 <= 1e-12, || format!("2D max abs error {worst2:e}"))?;
    Ok(format!(
        "100 3D cases max err {worst:.1e}; 2D cases max err {worst2:.1e}"
    ))
}

fn randomized_network(rng: &mut ChaCha8Rng) -> Network {
    let mut net = Network::new(NetworkConfig::tiny()).unwrap();
    for t in net.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    net
}

/// `beta_m = sum_j W_fu[m][j] * prod_k (W_k x_k)_j + b_m`, then softmax.
fn fusion_oracle(net: &Network, a: &[f64], onehots: &[Tensor; 4]) -> (Vec<f64>, Vec<f64>) {
    let f = &net.params().fusion;
    let matvec = |w: &Tensor, x: &[f64]| -> Vec<f64> {
        let cols = w.dims()[1];
        (0..w.dims()[0])
            .map(|r| (0..cols).map(|c| w.data()[r * cols + c] * x[c]).sum())
            .collect()
    };
    let mut product = matvec(&f.w_fea, a);
    for (w, x) in f.w_scene.iter().zip(onehots) {
        for (p, q) in product.iter_mut().zip(matvec(w, x.data())) {
            *p *= q;
        }
    }
    let beta: Vec<f64> = matvec(&f.w_fu, &product)
        .iter()
        .zip(f.b_fu.data())
        .map(|(z, b)| z + b)
        .collect();
    let top = beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = beta.iter().map(|b| (b - top).exp()).collect();
    let total: f64 = exp.iter().sum();
    (beta, exp.iter().map(|e| e / total).collect())
}

fn fusion_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let flat: usize = NetworkConfig::tiny().representation_shape().unwrap().iter().product();
    let mut worst: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for _ in 0..100 {
        let net = randomized_network(&mut rng);
        let a: Vec<f64> = (0..flat).map(|_| rng.random_range(-1.0..1.0)).collect();
        let idx = [
            rng.random_range(0..5),
            rng.random_range(0..3),
            rng.random_range(0..3),
            rng.random_range(0..2),
        ];
        let onehots = scene_one_hots(idx).unwrap();
        let got = net
            .fuse(&Tensor::vector(a.clone()), &onehots)
            .map_err(|e| e.to_string())?;
        let (beta, v) = fusion_oracle(&net, &a, &onehots);
        for (g, w) in got.beta.data().iter().zip(&beta).chain(got.v.data().iter().zip(&v)) {
            worst = worst.max((g - w).abs());
        }
        worst_sum = worst_sum.max((got.v.data().iter().sum::<f64>() - 1.0).abs());

        // zeroing any one projection collapses the product, leaving b_fu
        for k in 0..5 {
            let mut zeroed = net.clone();
            let f = &mut zeroed.params_mut().fusion;
            let target = if k == 0 { &mut f.w_fea } else { &mut f.w_scene[k - 1] };
            target.data_mut().fill(0.0);
            let out = zeroed
                .fuse(&Tensor::vector(a.clone()), &onehots)
                .map_err(|e| e.to_string())?;
            ensure(out.beta == zeroed.params().fusion.b_fu, || {
                format!("projection {k} zeroed: beta != b_fu")
            })?;
        }
    }
    ensure(worst <= 1e-12, || format!("max abs error vs oracle {worst:e}"))?;
    ensure(worst_sum <= 1e-12, || format!("softmax sum off by {worst_sum:e}"))?;
    Ok(format!(
        "max err {worst:.1e}, max |sum-1| {worst_sum:.1e}, annihilation exact"
    ))
}

fn lambda_endpoints() -> Outcome {
    let data = synth_generate(
        4,
        4,
        &SynthConfig {
            height: 8,
            width: 8,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let batch: Vec<_> = data.clips.iter().collect();
    let net = Network::new(NetworkConfig::tiny()).unwrap();
    let groups: Vec<ParamGroup> = net.params().registry().into_iter().map(|(_, g)| g).collect();
    let bitwise_zero = |t: &Tensor| t.data().iter().all(|v| v.to_bits() == 0);
    let any_nonzero = |t: &Tensor| t.data().iter().any(|&v| v != 0.0);

    for (lambda, silenced, live) in [
        (1.0, "scene heads", "fusion/detector"),
        (0.0, "fusion/detector", "scene heads"),
    ] {
        let cfg = TrainConfig {
            lambda,
            ..TrainConfig::default()
        };
        let (_, grads) = joint_loss(&batch, &net, &cfg).map_err(|e| e.to_string())?;
        let mut live_seen = false;
        for (t, g) in grads.tensors().into_iter().zip(&groups) {
            let in_silenced = match g {
                ParamGroup::Scene(_) => lambda == 1.0,
                ParamGroup::Fusion | ParamGroup::Detector => lambda == 0.0,
                ParamGroup::Representation => false,
            };
            if in_silenced {
                ensure(bitwise_zero(t), || {
                    format!("lambda={lambda}: {silenced} gradient not bitwise zero")
                })?;
            } else if !matches!(g, ParamGroup::Representation) {
                live_seen |= any_nonzero(t);
            }
        }
        ensure(live_seen, || format!("lambda={lambda}: {live} gradients vanished too"))?;
    }
    Ok("lambda=1 silences scene heads, lambda=0 silences fusion and detector".into())
}

fn two_phase_schedule() -> Outcome {
    let data = synth_generate(
        40,
        5,
        &SynthConfig {
            height: 8,
            width: 8,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let mut net = Network::new(NetworkConfig::tiny()).unwrap();
    let late = |g: ParamGroup| matches!(g, ParamGroup::Fusion | ParamGroup::Detector);
    let initial = net.params().checksum_where(late);
    let cfg = TrainConfig {
        phase1_steps: 200,
        epochs: 43,
        ..TrainConfig::default()
    };
    let mut hashes = Vec::new();
    train(&data, &mut net, &cfg, |_, n| {
        hashes.push(n.params().checksum_where(late))
    })
    .map_err(|e| e.to_string())?;
    ensure(hashes.len() > 210, || format!("only {} steps ran", hashes.len()))?;
    if let Some(s) = hashes[..200].iter().position(|&h| h != initial) {
        return Err(format!("fusion/detector hash changed at step {s}"));
    }
    ensure(hashes[210] != initial, || {
        "fusion/detector hash unchanged at step 210".into()
    })?;
    let first = hashes.iter().position(|&h| h != initial).unwrap();
    Ok(format!("constant through step 199, first change at step {first}"))
}

fn overall_and_min_scenario(r: &MetricsReport) -> (f64, f64) {
    let min = r.scenarios.iter().map(|s| s.metrics.accuracy).fold(1.0, f64::min);
    (r.overall.accuracy, min)
}

fn end_to_end_overfit() -> Outcome {
    let started = Instant::now();
    let data = synth_generate(40, 0, &SynthConfig::default()).unwrap();
    let cfg = TrainConfig::default();
    ensure(cfg.epochs <= 200, || {
        format!("default config runs {} epochs", cfg.epochs)
    })?;
    let mut net = Network::new(NetworkConfig::default()).unwrap();
    train(&data, &mut net, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
    let r = per_scenario_report(&data, &net).map_err(|e| e.to_string())?;
    let (acc, min) = overall_and_min_scenario(&r);
    let elapsed = started.elapsed();
    ensure(acc >= 0.95, || format!("train accuracy {acc:.3}"))?;
    ensure(min >= 0.9, || format!("lowest per-scenario accuracy {min:.3}"))?;
    ensure(elapsed <= Duration::from_secs(600), || {
        format!("took {:.0} s", elapsed.as_secs_f64())
    })?;
    Ok(format!(
        "train accuracy {acc:.3}, lowest scenario {min:.3}, {:.0} s",
        elapsed.as_secs_f64()
    ))
}

fn generalization() -> Outcome {
    // one generator seed; the first 200 clips train, the next 50 are held out
    let all = synth_generate(250, 11, &SynthConfig::default()).unwrap();
    let train_set = Dataset::new(all.clips[..200].to_vec(), "train");
    let test_set = Dataset::new(all.clips[200..].to_vec(), "held out");
    let cfg = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    let mut net = Network::new(NetworkConfig::default()).unwrap();
    train(&train_set, &mut net, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
    let r = per_scenario_report(&test_set, &net).map_err(|e| e.to_string())?;
    let auc = r.auc.ok_or("held-out set has a single class")?;
    let acc = r.overall.accuracy;
    ensure(acc >= 0.8 && auc >= 0.85, || {
        format!("held-out accuracy {acc:.3}, AUC {auc:.3}")
    })?;
    Ok(format!("held-out accuracy {acc:.3}, AUC {auc:.3}"))
}

fn temporal_iou() -> Outcome {
    let mut checked = 0;
    for alphabet in 1..=5usize {
        for code in 0..alphabet.pow(5) {
            let mut frames = [0; 5];
            let mut c = code;
            for f in &mut frames {
                *f = c % alphabet;
                c /= alphabet;
            }
            let mut counts = vec![0; alphabet];
            frames.iter().for_each(|&f| counts[f] += 1);
            let want = counts.iter().position(|&n| n >= 3).unwrap_or(frames[2]);
            let got = clip_label_from_frames(frames, alphabet).map_err(|e| e.to_string())?;
            ensure(got == want, || {
                format!("{frames:?} over {alphabet}: got {got}, want {want}")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} tuples agree"))
}

fn metric_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..1000 {
        let c = Confusion {
            tp: rng.random_range(0..50),
            fp: rng.random_range(0..50),
            fn_: rng.random_range(0..50),
            tn: rng.random_range(0..50),
        };
        let m = metrics(&c);
        let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let dr = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f = if p + dr > 0.0 { 2.0 * p * dr / (p + dr) } else { 0.0 };
        let acc = if c.total() > 0 {
            (tp + tn) / (tp + fp + fn_ + tn)
        } else {
            0.0
        };
        for (name, got, want) in [
            ("P", m.precision, p),
            ("DR", m.detection_rate, dr),
            ("F", m.f_measure, f),
            ("acc", m.accuracy, acc),
        ] {
            ensure((got - want).abs() <= 1e-12, || {
                format!("case {case} {c:?}: {name} {got} vs {want}")
            })?;
        }
    }

    let truths: Vec<usize> = (0..200).map(|i| usize::from(i % 3 == 0)).collect();
    let m = metrics(&confusion(&truths, &truths).map_err(|e| e.to_string())?);
    ensure(
        [m.precision, m.detection_rate, m.f_measure, m.accuracy] == [1.0; 4],
        || format!("perfect: {m:?}"),
    )?;
    let scores: Vec<f64> = truths.iter().map(|&t| t as f64 * 0.5 + 0.25).collect();
    let perfect_auc = roc_auc(&scores, &truths).map_err(|e| e.to_string())?.auc;
    ensure(perfect_auc == 1.0, || format!("perfect AUC {perfect_auc}"))?;

    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?.auc;
    ensure((auc - 0.5).abs() <= 0.02, || format!("shuffled AUC {auc}"))?;
    Ok(format!("1000 tables exact, perfect = 1, shuffled AUC {auc:.4}"))
}

fn augmentation() -> Outcome {
    let data = synth_generate(5, 6, &SynthConfig::default()).unwrap();
    for item in &data.clips {
        let out = augment(item, &DEFAULT_SIGMAS).map_err(|e| e.to_string())?;
        ensure(out.len() == 8, || format!("{} outputs", out.len()))?;
        ensure(
            out.iter()
                .all(|o| o.labels == item.labels && o.scenario == item.scenario),
            || "labels changed".into(),
        )?;
        ensure(out.iter().all(|o| o.clip.dims() == item.clip.dims()), || {
            "extents changed".into()
        })?;
        let twice = flip_horizontal(&flip_horizontal(&item.clip));
        ensure(
            twice
                .data()
                .iter()
                .zip(item.clip.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            || "flip is not an involution".into(),
        )?;
    }
    Ok("8 label-preserving outputs per clip, flip involution bitwise".into())
}

fn persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = synth_generate(6, 7, &SynthConfig::default()).unwrap();
    let path = dir.path().join("d.cadd");
    dataset_io::save(&path, &data).map_err(|e| e.to_string())?;
    let back = dataset_io::load(&path).map_err(|e| e.to_string())?;
    ensure(back.clips.len() == data.clips.len(), || "clip count changed".into())?;
    for (a, b) in back.clips.iter().zip(&data.clips) {
        ensure(a.labels == b.labels && a.clip.dims() == b.clip.dims(), || {
            "labels or extents changed".into()
        })?;
        ensure(
            a.clip
                .data()
                .iter()
                .zip(b.clip.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            || "pixels changed".into(),
        )?;
    }
    ensure(
        dataset_io::encode(&back).unwrap() == dataset_io::encode(&data).unwrap(),
        || "dataset re-encoding differs".into(),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let net = randomized_network(&mut rng);
    let path = dir.path().join("n.cack");
    checkpoint::save(&path, &net).map_err(|e| e.to_string())?;
    let loaded = checkpoint::load(&path).map_err(|e| e.to_string())?;
    ensure(loaded.config() == net.config(), || "config changed".into())?;
    for (a, b) in loaded.params().tensors().into_iter().zip(net.params().tensors()) {
        ensure(
            a.dims() == b.dims() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
            || "parameters changed".into(),
        )?;
    }
    ensure(std::fs::read(&path).unwrap() == checkpoint::encode(&loaded), || {
        "checkpoint re-encoding differs".into()
    })?;
    Ok("dataset and checkpoint round trips bitwise exact".into())
}

fn train_and_eval(dir: &std::path::Path) -> Result<(String, String), String> {
    let p = |name: &str| dir.join(name).display().to_string();
    let (data, net, rep) = (p("d.cadd"), p("n.cack"), p("r"));
    let steps = [
        vec!["synth", "--out", &data, "--clips", "12", "--seed", "3"],
        vec![
            "train",
            "--data",
            &data,
            "--out",
            &net,
            "--epochs",
            "12",
            "--phase1-steps",
            "10",
            "--seed",
            "5",
        ],
        vec!["eval", "--data", &data, "--checkpoint", &net, "--report", &rep, "--roc"],
    ];
    for args in &steps {
        let (code, out, err) = run_cli(args);
        ensure(code == 0, || format!("{} exited {code}: {out}{err}", args[0]))?;
    }
    let json = std::fs::read_to_string(p("r.json")).map_err(|e| e.to_string())?;
    let roc = std::fs::read_to_string(p("r.roc.csv")).map_err(|e| e.to_string())?;
    Ok((json, roc))
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = train_and_eval(a.path())?;
    let second = train_and_eval(b.path())?;
    ensure(first == second, || "reports differ between identical runs".into())?;
    let parsed = report::from_json(&first.0).map_err(|e| e.to_string())?;
    Ok(format!("identical reports (accuracy {:.3})", parsed.overall.accuracy))
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 12] = [
        ("gradient correctness", gradient_correctness),
        ("convolution oracle", convolution_oracle),
        ("fusion semantics", fusion_semantics),
        ("lambda endpoints", lambda_endpoints),
        ("two-phase schedule", two_phase_schedule),
        ("end-to-end overfit", end_to_end_overfit),
        ("generalization smoke test", generalization),
        ("temporal-IOU labeling", temporal_iou),
        ("metrics", metric_checks),
        ("augmentation", augmentation),
        ("persistence", persistence),
        ("determinism", determinism),
    ];
    // sequential, so the runtime bounds measure one core
    let results: Vec<Outcome> = criteria
        .iter()
        .map(|(_, f)| std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into())))
        .collect();
    let mut failed = Vec::new();
    for (i, ((name, _), r)) in criteria.iter().zip(&results).enumerate() {
        match r {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL {:>2} {name}: {detail}", i + 1);
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
