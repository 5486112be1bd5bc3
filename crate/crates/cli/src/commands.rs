use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use wsaug::align::{weight_matching, AlignConfig};
use wsaug::augment::{apply_pipeline, hidden_layers_with, relu_scale, rotate, scale, siren_bias, siren_negation, translate};
use wsaug::mixup::{mix_pair, MixupConfig, MixupVariant};
use wsaug::nnrun::forward_batch;
use wsaug::probe::{self, eval_probe, ProbeConfig};
use wsaug::seed::{derive_seed, rng};
use wsaug::signals::sample_grid;
use wsaug::store::{build_dataset, load, save, save_sample, GenerationParams, InrDataset};
use wsaug::verify::{default_tolerance, func_equiv, lmc_barrier};
use wsaug::{apply_permutation, l2_distance, random_permutation, Activation, LabeledSample, MlpSpec, WeightSpaceVector};

use crate::config::{load_pipeline, RunConfig};
use crate::output::{csv_writer, mean_std};
use crate::{Check, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn log_config(cfg: &RunConfig) {
    eprintln!("# resolved config\n{}", cfg.to_toml());
}

fn load_dataset(path: &Path) -> anyhow::Result<InrDataset> {
    load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn sample<'a>(d: &'a InrDataset, i: usize, flag: &str) -> anyhow::Result<&'a LabeledSample> {
    d.samples()
        .get(i)
        .ok_or_else(|| usage(format!("--{flag} {i} is out of range; dataset has {} samples", d.len())))
}

pub fn gen(config: &Path, out: &Path) -> anyhow::Result<bool> {
    let cfg = RunConfig::load(config)?;
    log_config(&cfg);
    let d = build_dataset(&cfg.spec, &cfg.generation_params())?;
    save(&d, out)?;
    println!("saved {} samples to {}", d.len(), out.display());
    Ok(true)
}

pub fn augment(input: &Path, pipeline: &Path, seed: Option<u64>, out: &Path) -> anyhow::Result<bool> {
    let mut p = load_pipeline(pipeline)?;
    if let Some(s) = seed {
        p.seed = s;
    }
    let d = load_dataset(input)?;
    let spec = d.spec().clone();
    p.validate(&spec).map_err(|e| usage(format!("pipeline does not fit the dataset: {e}")))?;
    let augmented = d.map_weights(Some(&p), |_, s| {
        apply_pipeline(&p, &s.v, &spec, derive_seed(s.object_id as u64, &[s.view_id as u64]))
    })?;
    save(&augmented, out)?;
    println!("augmented {} samples into {}", augmented.len(), out.display());
    Ok(true)
}

pub fn align(input: &Path, a: usize, b: usize, max_sweeps: usize, seed: u64) -> anyhow::Result<bool> {
    if max_sweeps == 0 {
        return Err(usage("--max-sweeps must be at least 1"));
    }
    let d = load_dataset(input)?;
    let (s1, s2) = (sample(&d, a, "a")?, sample(&d, b, "b")?);
    let r = weight_matching(&s1.v, &s2.v, max_sweeps, seed)?;
    println!("unaligned_distance {}", l2_distance(&s1.v, &s2.v)?);
    println!("objective {}", r.objective);
    println!("sweeps {}", r.sweeps_used);
    println!("converged {}", r.converged);
    for (l, p) in r.p.perms().iter().enumerate() {
        let ids: Vec<String> = p.as_slice().iter().map(|i| i.to_string()).collect();
        println!("layer {}: {}", l + 1, ids.join(" "));
    }
    Ok(true)
}

pub fn mixup(input: &Path, variant: &str, lambda: f64, a: usize, b: usize, seed: u64, out: &Path) -> anyhow::Result<bool> {
    let variant: MixupVariant = variant.parse().map_err(|e: wsaug::Error| usage(e.to_string()))?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(usage(format!("--lambda must be in [0, 1], got {lambda}")));
    }
    let d = load_dataset(input)?;
    let (s1, s2) = (sample(&d, a, "a")?, sample(&d, b, "b")?);
    let mixed = mix_pair(&MixupConfig::new(variant), s1, s2, lambda, seed, None)?;
    save_sample(&mixed, out)?;
    println!("wrote {} mix of samples {a} and {b} to {}", variant.name(), out.display());
    Ok(true)
}

/// Largest `|g(x) - f(map(x))|` over the grid, via the library forward.
fn mapped_diff(
    g: &WeightSpaceVector,
    f: &WeightSpaceVector,
    spec: &MlpSpec,
    resolution: usize,
    map: impl Fn(f64, f64) -> [f64; 2],
) -> anyhow::Result<f64> {
    let xs = sample_grid(resolution)?;
    let mapped: Vec<f32> = xs
        .chunks(2)
        .flat_map(|p| map(p[0] as f64, p[1] as f64).map(|c| c as f32))
        .collect();
    let a = forward_batch(g, spec, &xs)?;
    let b = forward_batch(f, spec, &mapped)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max))
}

/// `(check name, max diff)` for every transform tried on one sample.
fn sample_checks(v: &WeightSpaceVector, spec: &MlpSpec, check: Check, resolution: usize, seed: u64) -> anyhow::Result<Vec<(&'static str, f64)>> {
    use rand::Rng;
    let mut r = rng(seed);
    let mut out = Vec::new();
    match check {
        Check::Symmetry => {
            let tol = default_tolerance(spec);
            let mut push = |name, g: WeightSpaceVector| -> anyhow::Result<()> {
                out.push((name, func_equiv(v, &g, spec, resolution, tol)?.max_abs_diff));
                Ok(())
            };
            push("permutation", apply_permutation(v, &random_permutation(spec, r.random()))?)?;
            for l in hidden_layers_with(spec, Activation::Sine) {
                let width = spec.dims()[l];
                let k: Vec<i64> = (0..width).map(|_| r.random_range(-2..=2)).collect();
                push("siren_negation", siren_negation(v, spec, l)?)?;
                push("siren_bias", siren_bias(v, spec, l, &k)?)?;
            }
            for l in hidden_layers_with(spec, Activation::Relu) {
                let width = spec.dims()[l];
                let diag: Vec<f32> = (0..width).map(|_| 2f64.powf(r.random_range(-1.0..1.0)) as f32).collect();
                push("relu_scale", relu_scale(v, spec, l, &diag)?)?;
            }
        }
        Check::Geometric => {
            let t = [r.random_range(-0.25f32..0.25), r.random_range(-0.25f32..0.25)];
            let theta = r.random_range(-30.0f64..30.0).to_radians();
            let c = r.random_range(0.8..1.0);
            let (sn, cs) = theta.sin_cos();
            let shift = |x: f64, y: f64| [x + t[0] as f64, y + t[1] as f64];
            out.push(("translate", mapped_diff(&translate(v, &t)?, v, spec, resolution, shift)?));
            let turn = |x: f64, y: f64| [cs * x - sn * y, sn * x + cs * y];
            out.push(("rotate", mapped_diff(&rotate(v, theta)?, v, spec, resolution, turn)?));
            out.push(("scale", mapped_diff(&scale(v, c)?, v, spec, resolution, |x, y| [c * x, c * y])?));
        }
    }
    Ok(out)
}

pub fn verify(input: &Path, check: Check, resolution: usize, seed: u64) -> anyhow::Result<bool> {
    if resolution < 2 {
        return Err(usage("--resolution must be at least 2"));
    }
    let d = load_dataset(input)?;
    let spec = d.spec();
    if spec.input_dim() != 2 {
        return Err(usage(format!("grid checks need 2D input, dataset spec has {}", spec.input_dim())));
    }
    let tol = default_tolerance(spec);
    let per_sample = d
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, s)| sample_checks(&s.v, spec, check, resolution, derive_seed(seed, &[i as u64])))
        .collect::<anyhow::Result<Vec<_>>>()?;
    // name -> (checks run, passed, worst diff), in first-seen order.
    let mut summary: Vec<(&str, usize, usize, f64)> = Vec::new();
    for (name, diff) in per_sample.into_iter().flatten() {
        let pos = match summary.iter().position(|e| e.0 == name) {
            Some(p) => p,
            None => {
                summary.push((name, 0, 0, 0.0));
                summary.len() - 1
            }
        };
        let e = &mut summary[pos];
        e.1 += 1;
        e.2 += usize::from(diff < tol);
        e.3 = e.3.max(diff);
    }
    let mut all = true;
    for (name, runs, passed, worst) in &summary {
        all &= runs == passed;
        println!("{name}: {passed}/{runs} pass, max diff {worst:.3e} (tolerance {tol:e})");
    }
    println!("{}", if all { "all checks passed" } else { "some checks FAILED" });
    Ok(all)
}

pub fn lmc(input: &Path, pairs: usize, aligned: bool, lambdas: usize, seed: u64, out: &Path) -> anyhow::Result<bool> {
    if pairs == 0 {
        return Err(usage("--pairs must be at least 1"));
    }
    if lambdas < 3 {
        return Err(usage("--lambdas must be at least 3"));
    }
    let d = load_dataset(input)?;
    let gen: &GenerationParams = d
        .manifest()
        .generation
        .as_ref()
        .ok_or_else(|| usage("dataset has no generation record, so its target signals are unknown"))?;
    let find = |o: u32, v: u32| d.samples().iter().find(|s| s.object_id == o && s.view_id == v);
    let mut objects: Vec<u32> = d.samples().iter().map(|s| s.object_id).collect();
    objects.sort_unstable();
    objects.dedup();
    let chosen: Vec<(u32, &LabeledSample, &LabeledSample)> = objects
        .into_iter()
        .filter_map(|o| Some((o, find(o, 0)?, find(o, 1)?)))
        .take(pairs)
        .collect();
    if chosen.len() < pairs {
        return Err(usage(format!(
            "--pairs {pairs} requested but only {} objects have views 0 and 1",
            chosen.len()
        )));
    }
    let cfg = AlignConfig { seed, ..AlignConfig::default() };
    let spec = d.spec();
    let rows = chosen
        .par_iter()
        .map(|(o, a, b)| lmc_barrier(&a.v, &b.v, spec, &gen.signal(*o as usize), aligned, lambdas, &cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = csv_writer(out, seed, &["pair", "object", "view_a", "view_b", "aligned", "barrier", "loss_a", "loss_b"])?;
    for (k, ((o, _, _), prof)) in chosen.iter().zip(&rows).enumerate() {
        let loss_a = prof.losses[prof.losses.len() - 1];
        w.write_record([
            k.to_string(),
            o.to_string(),
            "0".to_string(),
            "1".to_string(),
            aligned.to_string(),
            prof.barrier.to_string(),
            loss_a.to_string(),
            prof.losses[0].to_string(),
        ])?;
    }
    w.flush()?;
    let (mean, _) = mean_std(&rows.iter().map(|p| p.barrier).collect::<Vec<_>>());
    println!("mean barrier over {pairs} pairs (aligned={aligned}): {mean:.6}");
    Ok(true)
}

fn check_pair(train: &InrDataset, test: &InrDataset) -> anyhow::Result<()> {
    if train.spec() != test.spec() || train.num_classes() != test.num_classes() {
        return Err(usage("train and test datasets differ in architecture or class count"));
    }
    Ok(())
}

fn accuracy(train: &InrDataset, test: &InrDataset, cfg: &RunConfig, seed: u64) -> anyhow::Result<f64> {
    let probe = ProbeConfig { seed, eval_every: 0, ..cfg.probe.clone() };
    let trained = probe::train_probe(train, None, &cfg.probe_augment(), &probe)?;
    Ok(eval_probe(&trained.model, test)?)
}

pub fn train_probe(train: &Path, test: &Path, aug: Option<&Path>, seeds: usize, out: &Path) -> anyhow::Result<bool> {
    if seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let cfg = match aug {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    log_config(&cfg);
    let (train, test) = (load_dataset(train)?, load_dataset(test)?);
    check_pair(&train, &test)?;
    cfg.augment.validate(train.spec()).map_err(|e| usage(format!("invalid `augment` for this dataset: {e}")))?;
    let base = cfg.probe.seed;
    let accs = (0..seeds as u64)
        .into_par_iter()
        .map(|k| accuracy(&train, &test, &cfg, base + k))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut w = csv_writer(out, base, &["seed", "accuracy"])?;
    for (k, a) in accs.iter().enumerate() {
        w.write_record([(base + k as u64).to_string(), a.to_string()])?;
    }
    let (mean, std) = mean_std(&accs);
    w.write_record(["mean".to_string(), mean.to_string()])?;
    w.write_record(["std".to_string(), std.to_string()])?;
    w.flush()?;
    println!("accuracy over {seeds} seeds: mean {mean:.4}, std {std:.4}");
    Ok(true)
}

pub fn experiment_views(config: Option<&Path>, objects: Option<Vec<usize>>, max_views: Option<usize>, out: &Path) -> anyhow::Result<bool> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = objects {
        cfg.experiment.objects = o;
    }
    if let Some(v) = max_views {
        cfg.experiment.max_views = v;
    }
    let e = cfg.experiment.clone();
    let most = e.objects.iter().copied().max().unwrap_or(0);
    if most == 0 || e.max_views == 0 || e.seeds == 0 {
        return Err(usage("experiment needs positive object counts, max_views and seeds"));
    }
    cfg.generation.objects = most;
    cfg.generation.views = e.max_views;
    cfg.validate()?;
    log_config(&cfg);

    let train = build_dataset(&cfg.spec, &cfg.generation_params())?;
    let test_params = GenerationParams {
        num_objects: e.test_objects,
        views_per_object: 1,
        root_seed: e.test_seed,
        ..cfg.generation_params()
    };
    let test = build_dataset(&cfg.spec, &test_params)?;
    let cells: Vec<(usize, usize, u64)> = e
        .objects
        .iter()
        .flat_map(|&n| (1..=e.max_views).flat_map(move |v| (0..e.seeds as u64).map(move |s| (n, v, s))))
        .collect();
    let base = cfg.probe.seed;
    let results = cells
        .par_iter()
        .map(|&(n, v, s)| {
            let subset = train.filter(|x| (x.object_id as usize) < n && (x.view_id as usize) < v);
            Ok((subset.len(), accuracy(&subset, &test, &cfg, base + s)?))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut w = csv_writer(out, cfg.generation.seed, &["objects", "views", "samples", "seed", "accuracy"])?;
    for ((n, v, s), (len, acc)) in cells.iter().zip(&results) {
        w.write_record([n.to_string(), v.to_string(), len.to_string(), (base + s).to_string(), acc.to_string()])?;
    }
    w.flush()?;
    println!("wrote {} grid cells to {}", cells.len(), out.display());
    Ok(true)
}
