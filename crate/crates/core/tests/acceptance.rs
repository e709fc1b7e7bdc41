//! Acceptance checks. Each test prints one `[PASS]`/`[FAIL]` line (written
//! straight to stdout so it shows even when the harness captures output).

use std::io::Write as _;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{array, Array2, Axis};
use syncat::checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint};
use syncat::dataio::{
    load_dataset, read_manifest, read_semb, read_vec_table, write_manifest, write_semb,
    write_vec_table, DatasetManifest, EmbeddingTensor, LayerSubset, MorphTable, PosiItem, SpanItem,
};
use syncat::dec::{
    dec_fit, dec_grad_check, kmeans_fit, predict_hard, soft_assign, target_distribution,
    transfer_apply, HyperParams, Telemetry,
};
use syncat::eval::{contingency, hungarian_match, m1_accuracy, oracle_select, Contingency};
use syncat::net::{derive_seed, Activation, Network};
use syncat::pipeline::{run_pipeline, RunConfig, RunOptions, SynthSpec};
use syncat::sae::{encode, finetune_end2end, pretrain_layerwise, AutoencoderSpec, TrainConfig, TrainingPairs};
use syncat::{EncoderStack, Matrix, RngState};

fn verdict(name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "acceptance [{tag}] {name}: {detail}").unwrap();
    out.flush().unwrap();
    assert!(pass, "{name}: {detail}");
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

#[test]
fn soft_assignment_and_target_vectors() {
    let start = Instant::now();
    let q = soft_assign(array![[0.0f32]].view(), array![[0.0f32], [1.0]].view(), 1.0).unwrap();
    let q_err = (q[[0, 0]] - 2.0 / 3.0).abs().max((q[[0, 1]] - 1.0 / 3.0).abs());
    let p = target_distribution(array![[0.9f32, 0.1], [0.5, 0.5]].view()).unwrap();
    let want = array![[0.972f32, 0.028], [0.3, 0.7]];
    let p_err = (&p - &want).iter().fold(0f32, |a, v| a.max(v.abs()));
    let elapsed = start.elapsed();
    verdict(
        "soft assignment and target distribution",
        q_err <= 1e-6 && p_err <= 1e-3 && within(elapsed, 1),
        format!("q error {q_err:.1e}, p error {p_err:.1e}, {elapsed:.2?}"),
    );
}

/// A random small stack plus data for the joint objective.
fn random_objective(seed: u64) -> (EncoderStack, Matrix, Matrix, Matrix, Array2<f64>, f64, f64) {
    let mut rng = RngState::new(seed);
    let depth = 1 + rng.below(2);
    let input = 3 + rng.below(4);
    let mut dims = vec![input];
    for _ in 0..depth {
        dims.push(2 + rng.below(3));
    }
    let act = if rng.below(2) == 0 { Activation::Identity } else { Activation::Relu };
    let tied = rng.below(3) == 0;
    let out_dim = if tied || rng.below(2) == 0 { input } else { 2 + rng.below(5) };
    let enc_acts: Vec<Activation> = (0..depth).map(|k| if k + 1 == depth { Activation::Identity } else { act }).collect();
    let dec_acts: Vec<Activation> = (0..depth).map(|k| if k + 1 == depth { Activation::Identity } else { act }).collect();
    let mut enc = Network::random(&dims, &enc_acts, &mut rng).unwrap();
    let mut rev: Vec<usize> = dims.iter().rev().copied().collect();
    *rev.last_mut().unwrap() = out_dim;
    let mut dec = Network::random(&rev, &dec_acts, &mut rng).unwrap();
    for layer in enc.layers_mut().iter_mut().chain(dec.layers_mut()) {
        layer.linear.bias.mapv_inplace(|_| rng.uniform_in(-0.5, 0.5));
    }
    if tied {
        for i in 0..depth {
            dec.layers_mut()[depth - 1 - i].linear.weights = enc.layers()[i].linear.weights.t().to_owned();
        }
    }
    let stack = EncoderStack::new(enc, dec, tied).unwrap();
    let batch = 2 + rng.below(5);
    let m = 2 + rng.below(3);
    let x = Matrix::from_shape_fn((batch, input), |_| rng.uniform_in(-1.0, 1.0));
    let t = if out_dim == input && rng.below(2) == 0 {
        x.clone()
    } else {
        Matrix::from_shape_fn((batch, out_dim), |_| rng.uniform_in(-1.0, 1.0))
    };
    let centers = Matrix::from_shape_fn((m, stack.latent_dim()), |_| rng.uniform_in(-1.0, 1.0));
    let p = Array2::from_shape_fn((batch, m), |_| 0.05 + rng.uniform() as f64);
    let p = &p / &p.sum_axis(Axis(1)).insert_axis(Axis(1));
    let nu = [0.5, 1.0, 2.0, 5.0][rng.below(4)];
    let lambda = [0.0, 0.5, 5.0][rng.below(3)];
    (stack, centers, x, t, p, nu, lambda)
}

#[test]
fn joint_objective_gradients() {
    let start = Instant::now();
    let configs = 24;
    let mut worst = 0f64;
    for seed in 0..configs {
        let (stack, centers, x, t, p, nu, lambda) = random_objective(seed);
        let err = dec_grad_check(&stack, &centers, &x, &t, &p, nu, lambda, 1e-5).unwrap();
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    verdict(
        "joint objective gradient check",
        worst < 1e-4 && within(elapsed, 30),
        format!("{configs} configurations, max relative error {worst:.2e}, {elapsed:.2?}"),
    );
}

/// Synthetic suite: elongated Gaussian clusters in a 10-dim latent space,
/// mapped into 50 dims with isotropic noise.
fn suite_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        k: 5,
        n: 2000,
        latent_dim: 10,
        ambient_dim: 50,
        noise: 0.1,
        spread: 0.8,
        anisotropy: 10.0,
        seed,
        sample_seed: None,
    }
}

struct SeedResult {
    raw_m1: f64,
    sae_m1: f64,
    dec_m1: f64,
    transfer_m1: f64,
    trace: Vec<(usize, f64)>,
    fit_time: Duration,
    transfer_time: Duration,
}

fn m1(pred: &[usize], gold: &[usize]) -> f64 {
    m1_accuracy(&contingency(pred, gold, 0, 0).unwrap()).unwrap()
}

fn run_suite_seed(seed: u64, dir: &Path) -> SeedResult {
    let start = Instant::now();
    let spec = suite_spec(seed);
    let (semb, manifest) = spec.write(dir, &format!("a{seed}")).unwrap();
    let ds = load_dataset(&semb, &manifest, &LayerSubset::All).unwrap();
    let gold = ds.manifest.gold_ids().unwrap();
    let raw = kmeans_fit(ds.matrix.view(), spec.k, derive_seed(seed, 10), 10).unwrap();

    let ae = AutoencoderSpec { input_dim: ds.dim(), hidden_dims: vec![10], ..Default::default() };
    let pairs = TrainingPairs::plain(ds.matrix.clone());
    let pre = TrainConfig { seed: derive_seed(seed, 1), ..Default::default() };
    let fine = TrainConfig { seed: derive_seed(seed, 2), ..Default::default() };
    let (stack, _) = pretrain_layerwise(&ae, &pairs, &pre).unwrap();
    let (stack, _) = finetune_end2end(&stack, &pairs, &fine, ae.corrupt_rate).unwrap();
    let codes = encode(&stack, ds.matrix.view()).unwrap();
    let sae = kmeans_fit(codes.view(), spec.k, derive_seed(seed, 10), 10).unwrap();

    let hp = HyperParams { m: spec.k, seed: derive_seed(seed, 3), ..Default::default() };
    let mut telemetry = Telemetry::default();
    let model = dec_fit(&stack, &pairs, Some(&gold), &hp, &mut telemetry).unwrap();
    let (pred, _) = predict_hard(&model, ds.matrix.view()).unwrap();
    let dec_m1 = m1(&pred, &gold);
    let mut trace: Vec<(usize, f64)> =
        telemetry.records.iter().map(|r| (r.iteration, r.m1.unwrap())).collect();
    trace.push((hp.iterations, dec_m1));
    let fit_time = start.elapsed();

    let start = Instant::now();
    let foreign = SynthSpec { sample_seed: Some(derive_seed(seed, 99)), ..spec };
    let (semb_b, manifest_b) = foreign.write(dir, &format!("b{seed}")).unwrap();
    let ds_b = load_dataset(&semb_b, &manifest_b, &LayerSubset::All).unwrap();
    let (pred_b, _) = transfer_apply(&model, ds_b.matrix.view()).unwrap();
    let transfer_m1 = m1(&pred_b, &ds_b.manifest.gold_ids().unwrap());
    SeedResult {
        raw_m1: m1(&raw.assignments, &gold),
        sae_m1: m1(&sae.assignments, &gold),
        dec_m1,
        transfer_m1,
        trace,
        fit_time,
        transfer_time: start.elapsed(),
    }
}

fn suite() -> &'static [SeedResult] {
    static SUITE: OnceLock<Vec<SeedResult>> = OnceLock::new();
    SUITE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        (0..5).map(|s| run_suite_seed(s, dir.path())).collect()
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn clustering_stage_beats_kmeans_on_blobs() {
    let runs = suite();
    let raw = mean(runs.iter().map(|r| r.raw_m1));
    let dec = mean(runs.iter().map(|r| r.dec_m1));
    let time: Duration = runs.iter().map(|r| r.fit_time).sum();
    verdict(
        "joint clustering >= raw KMeans on synthetic blobs",
        dec >= raw && dec >= 0.90 && within(time, 180),
        format!("mean M1 over 5 seeds: clustering stage {dec:.4}, raw KMeans {raw:.4}; fits took {time:.2?}"),
    );
}

#[test]
fn autoencoder_codes_not_worse_than_kmeans() {
    let runs = suite();
    let raw = mean(runs.iter().map(|r| r.raw_m1));
    let sae = mean(runs.iter().map(|r| r.sae_m1));
    verdict(
        "autoencoder + KMeans >= raw KMeans - 0.02",
        sae >= raw - 0.02,
        format!("mean M1 over 5 seeds: autoencoder codes {sae:.4}, raw KMeans {raw:.4}"),
    );
}

#[test]
fn transfer_to_independent_sample() {
    let runs = suite();
    let scores: Vec<f64> = runs.iter().map(|r| r.transfer_m1).collect();
    let passing = scores.iter().filter(|&&m| m >= 0.8).count();
    let time: Duration = runs.iter().map(|r| r.transfer_time).sum();
    verdict(
        "transfer to an independent sample",
        passing == runs.len() && within(time, 120),
        format!("{passing}/{} seeds with M1 >= 0.8 ({scores:.3?}); transfer took {time:.2?}", runs.len()),
    );
}

#[test]
fn oracle_never_below_last() {
    let runs = suite();
    let mut traces: Vec<Vec<(usize, f64)>> = runs.iter().map(|r| r.trace.clone()).collect();
    let mut rng = RngState::new(17);
    for _ in 0..1000 {
        let len = 1 + rng.below(30);
        traces.push((0..len).map(|i| (i * 100, rng.uniform() as f64)).collect());
    }
    let violations = traces
        .iter()
        .filter(|t| {
            let s = oracle_select(t).unwrap();
            s.best_m1 < s.last_m1 || s.last_m1 != t.last().unwrap().1
        })
        .count();
    verdict(
        "oracle selection >= last",
        violations == 0,
        format!("{} traces ({} from clustering telemetry), {violations} violations", traces.len(), runs.len()),
    );
}

fn brute_force_matching(t: &Contingency) -> u64 {
    let n = t.n_clusters().max(t.n_labels());
    let cell = |c: usize, g: usize| t.counts().get(c).and_then(|r| r.get(g)).copied().unwrap_or(0);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = 0;
    // Heap's algorithm over all n! label orders.
    let mut c = vec![0; n];
    let score = |p: &[usize]| (0..n).map(|i| cell(i, p[i])).sum::<u64>();
    best = best.max(score(&perm));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.max(score(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

#[test]
fn hungarian_matches_exhaustive_search() {
    let start = Instant::now();
    let mut rng = RngState::new(5);
    let mut mismatches = 0;
    for _ in 0..200 {
        let m = 1 + rng.below(6);
        let g = 1 + rng.below(6);
        let counts: Vec<Vec<u64>> = (0..m).map(|_| (0..g).map(|_| rng.below(20) as u64).collect()).collect();
        let t = Contingency::from_counts(counts).unwrap();
        let matching = hungarian_match(&t);
        let mapped: u64 = matching
            .mapping
            .iter()
            .enumerate()
            .filter_map(|(c, l)| l.map(|l| t.counts()[c][l]))
            .sum();
        if matching.matched != brute_force_matching(&t) || mapped != matching.matched {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "Hungarian matching optimality",
        mismatches == 0 && within(elapsed, 10),
        format!("200 random tables up to 6x6, {mismatches} mismatches, {elapsed:.2?}"),
    );
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn m1_invariant_under_relabelling() {
    let mut rng = RngState::new(11);
    let mut checked = 0;
    let mut failures = 0;
    for m in 1..=5 {
        for _ in 0..10 {
            let n = 1 + rng.below(60);
            let g = 1 + rng.below(6);
            let pred: Vec<usize> = (0..n).map(|_| rng.below(m)).collect();
            let gold: Vec<usize> = (0..n).map(|_| rng.below(g)).collect();
            let base = m1_accuracy(&contingency(&pred, &gold, m, g).unwrap()).unwrap();
            for perm in permutations(m) {
                let relabelled: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
                let v = m1_accuracy(&contingency(&relabelled, &gold, m, g).unwrap()).unwrap();
                checked += 1;
                if v.to_bits() != base.to_bits() {
                    failures += 1;
                }
            }
        }
    }
    verdict(
        "M1 permutation invariance",
        failures == 0,
        format!("{checked} relabellings over m = 1..5, {failures} differences"),
    );
}

fn random_word(rng: &mut RngState) -> String {
    let alphabet: Vec<char> = "abcdefgžéßø漢ng".chars().collect();
    (0..1 + rng.below(6)).map(|_| alphabet[rng.below(alphabet.len())]).collect()
}

fn random_f32(rng: &mut RngState) -> f32 {
    loop {
        let v = f32::from_bits(rng.inner_u32());
        if v.is_finite() {
            return v;
        }
    }
}

trait BitsRng {
    fn inner_u32(&mut self) -> u32;
}

impl BitsRng for RngState {
    fn inner_u32(&mut self) -> u32 {
        rand::RngCore::next_u32(self.inner())
    }
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn file_formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RngState::new(23);
    let mut failures = Vec::new();
    let rounds = 40;
    for round in 0..rounds {
        let (n, l, d) = (rng.below(6), 1 + rng.below(4), 1 + rng.below(8));
        let tensor = EmbeddingTensor::new(n, l, d, (0..n * l * d).map(|_| random_f32(&mut rng)).collect()).unwrap();
        let p = dir.path().join("t.semb");
        write_semb(&tensor, &p).unwrap();
        let back = read_semb(&p).unwrap();
        if (back.n_items, back.n_layers, back.dim) != (n, l, d) || bits(back.values()) != bits(tensor.values()) {
            failures.push(format!("semb round {round}"));
        }

        let mut table = MorphTable::new(1 + rng.below(6));
        for _ in 0..rng.below(8) {
            let v = (0..table.dim()).map(|_| random_f32(&mut rng)).collect();
            table.insert(random_word(&mut rng), v).unwrap();
        }
        let p = dir.path().join("t.vec");
        write_vec_table(&table, &p).unwrap();
        let back = read_vec_table(&p).unwrap();
        let same = back.dim() == table.dim()
            && back.len() == table.len()
            && table.iter().all(|(k, v)| back.get(k).map(bits) == Some(bits(v)));
        if !same {
            failures.push(format!("vec round {round}"));
        }

        let labels: Vec<String> = (0..1 + rng.below(4)).map(|i| format!("L{i}")).collect();
        let labelled = rng.below(2) == 0;
        let pick = |rng: &mut RngState| labelled.then(|| labels[rng.below(labels.len())].clone());
        let manifest = if rng.below(2) == 0 {
            let items = (0..rng.below(10))
                .map(|i| PosiItem { sent: i / 3, tok: i % 3, surface: random_word(&mut rng), gold: pick(&mut rng) })
                .collect();
            DatasetManifest::posi(labels.clone(), items).unwrap()
        } else {
            let lengths: Vec<usize> = (0..1 + rng.below(4)).map(|_| 1 + rng.below(5)).collect();
            let spans = (0..rng.below(8))
                .map(|_| {
                    let sent = rng.below(lengths.len());
                    let start = rng.below(lengths[sent]);
                    let end = start + rng.below(lengths[sent] - start);
                    SpanItem { sent, start, end, gold: pick(&mut rng) }
                })
                .collect();
            DatasetManifest::colab(labels.clone(), lengths, spans).unwrap()
        };
        let p = dir.path().join("m.json");
        write_manifest(&manifest, &p).unwrap();
        if read_manifest(&p).unwrap() != manifest {
            failures.push(format!("manifest round {round}"));
        }

        let (stack, centers, ..) = random_objective(1000 + round as u64);
        let centers = centers.mapv(|_| random_f32(&mut rng));
        let ckpt = Checkpoint { stack, centers: (rng.below(2) == 0).then_some(centers) };
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        if encode_checkpoint(&back).unwrap() != bytes || back != ckpt {
            failures.push(format!("checkpoint round {round}"));
        }
    }
    verdict(
        "file format round trips (.semb, .vec, manifest, .sdec)",
        failures.is_empty(),
        format!("{rounds} randomized instances per format, failures: {failures:?}"),
    );
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { n: 400, k: 4, seed: 8, noise: 0.1, ..Default::default() };
    let (semb, manifest) = spec.write(dir.path(), "d").unwrap();
    let mut cfg = RunConfig::new(semb, manifest);
    cfg.autoencoder.hidden_dims = vec![8];
    cfg.pretrain.epochs = 5;
    cfg.finetune.epochs = 5;
    cfg.cluster.iterations = Some(300);
    cfg.seeds = vec![42, 7];
    let run = |name: &str| {
        let out = dir.path().join(name);
        run_pipeline(&cfg, &RunOptions { out: out.clone(), trace: true }).unwrap();
        let files = ["report.json", "seed-42/model.sdec", "seed-42/telemetry.csv", "seed-7/predictions.csv", "seed-7/pretrain-0.csv"];
        files.map(|f| std::fs::read(out.join(f)).unwrap())
    };
    let (a, b) = (run("first"), run("second"));
    let identical = a == b;
    verdict(
        "pipeline determinism",
        identical,
        format!("two runs of the same config (seeds 42 and 7): reports and artifacts byte-identical = {identical}"),
    );
}
