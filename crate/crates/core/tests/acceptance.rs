//! Acceptance criteria. Each test prints one `PASS` or `FAIL` line to the
//! uncaptured standard error stream and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadgraph::extractor::{bind, edgeconv_layer, knn_support, score_pairs, ModelConfig, ModelParams, Scorer, Support, BN_EPS};
use roadgraph::geograph::{dist, project_on_segment, RoadGraph};
use roadgraph::gridenc::{all_pairs, encode_targets};
use roadgraph::inferpipe::{decode_points, sliding_window_infer, sliding_window_scores, sweep_scored, InferConfig};
use roadgraph::metrics::{apls, apls_one_way, complexity_from_total, evaluate_graphs, junction_f1, pixel_f1, EvalReport, MetricConfig};
use roadgraph::synthgen::{generate_road_graph, make_dataset, render_scene, SceneConfig, SceneImage};
use roadgraph::trainer::{train_dir, train_samples, TrainConfig};
use tempfile::TempDir;
use tensornet::gradcheck::check;
use tensornet::{BatchNormState, NormMode, PairInput, Tape, Tensor};

fn report(name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{status} {name}: {detail}");
    assert!(pass, "{name}: {detail}");
}

fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize, side: f64) -> RoadGraph {
    let n = rng.random_range(1..=max_nodes);
    let nodes: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..side), rng.random_range(0.0..side)]).collect();
    let m = rng.random_range(0..=2 * n);
    let edges: Vec<(usize, usize)> = (0..m).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
    RoadGraph::from_raw_edges(nodes, edges)
}

#[test]
fn published_complexity_rows() {
    let start = Instant::now();
    let rows = [
        ("VecRoad", 29620.0, 61042.0, 64.59, 1404.0),
        ("DRM", 6071.0, 11963.0, 21.27, 848.0),
        ("RoadTracer", 8263.0, 17044.0, 45.09, 561.0),
        ("GraphExtractor", 4343.0, 17273.0, 46.93, 461.0),
    ];
    let mut worst: f64 = 0.0;
    for (_, nodes, edges, apls, published) in rows {
        let c = complexity_from_total(nodes + edges, apls);
        worst = worst.max((c.round() - published).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report("published-complexity-rows", worst <= 1.0 && secs < 1.0, &format!("max rounding gap {worst}, {secs:.3}s"));
}

#[test]
fn decode_encode_round_trip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut edges_ok = true;
    for _ in 0..1000 {
        let (w, h) = (32 * rng.random_range(1..=12), 32 * rng.random_range(1..=12));
        let n = rng.random_range(1..=60);
        let nodes: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)]).collect();
        let edges: Vec<(usize, usize)> = (0..2 * n).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
        let g = RoadGraph::from_raw_edges(nodes, edges);
        let t = encode_targets(&g, w, h, 32).unwrap();
        let pts = decode_points(&t.junction, &t.offsets, t.grid_w, 0.5, w, h);
        edges_ok &= pts.len() == t.merged_graph.nodes.len();
        for ((_, p), q) in pts.iter().zip(&t.merged_graph.nodes) {
            for k in 0..2 {
                worst = worst.max((p[k] - q[k]).abs() / q[k].abs().max(1e-300));
            }
        }
        let index_of_cell = |c: usize| pts.iter().position(|p| p.0 == c).unwrap();
        let decoded: std::collections::HashSet<(usize, usize)> = t
            .merged_graph
            .edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (index_of_cell(t.cell_of_node[a]), index_of_cell(t.cell_of_node[b]));
                (x.min(y), x.max(y))
            })
            .collect();
        edges_ok &= decoded == t.merged_graph.edge_set();
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "decode-encode-round-trip",
        worst <= 1e-9 && edges_ok && secs < 10.0,
        &format!("max relative error {worst:e}, edge sets equal: {edges_ok}, {secs:.2}s"),
    );
}

#[test]
fn gradient_suite() {
    const H: f64 = 1e-5;
    const INSTANCES: u64 = 20;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut rand_t = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| rng.random_range(lo..hi));
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut run = |name: &'static str, inputs: Vec<Tensor>, seed: u64, f: &dyn Fn(&mut Tape, &[tensornet::Var]) -> tensornet::Result<tensornet::Var>| {
        let r = check(&inputs, H, seed, f).unwrap().worst();
        match worst.iter_mut().find(|w| w.0 == name) {
            Some(w) => w.1 = w.1.max(r),
            None => worst.push((name, r)),
        }
    };
    for s in 0..INSTANCES {
        let stride = 1 + (s as usize % 2);
        run("conv2d", vec![rand_t(&[2, 6, 5], -1.0, 1.0), rand_t(&[3, 2, 3, 3], -1.0, 1.0), rand_t(&[3], -1.0, 1.0)], s, &move |t, v| {
            t.conv2d(v[0], v[1], v[2], stride, 1)
        });
        run("batchnorm", vec![rand_t(&[6, 4], -2.0, 2.0), rand_t(&[4], 0.5, 1.5), rand_t(&[4], -1.0, 1.0)], s, &|t, v| {
            let mut st = BatchNormState::new(4);
            t.batchnorm(v[0], v[1], v[2], &mut st, NormMode::Train, BN_EPS)
        });
        run("relu", vec![rand_t(&[5, 4], -1.0, 1.0)], s, &|t, v| Ok(t.relu(v[0])));
        run("sigmoid", vec![rand_t(&[5, 4], -3.0, 3.0)], s, &|t, v| Ok(t.sigmoid(v[0])));
        run("linear", vec![rand_t(&[5, 3], -1.0, 1.0), rand_t(&[3, 4], -1.0, 1.0), rand_t(&[4], -1.0, 1.0)], s, &|t, v| {
            t.linear(v[0], v[1], v[2])
        });
        run("bilinear_form", vec![rand_t(&[4, 3], -1.0, 1.0), rand_t(&[3, 3], -1.0, 1.0)], s, &|t, v| {
            t.bilinear_form(v[0], v[1], &[(0, 1), (2, 3), (3, 0), (1, 1)])
        });
        run("max_reduce_segments", vec![rand_t(&[7, 3], -1.0, 1.0)], s, &|t, v| t.max_reduce_segments(v[0], &[0, 2, 3, 7]));
        run("bce_loss", vec![rand_t(&[8], 0.05, 0.95), rand_t(&[8], 0.0, 1.0)], s, &|t, v| t.bce_loss(v[0], v[1], 1e-7));
        run("masked_mse", vec![rand_t(&[3, 2, 2], -0.5, 0.5), rand_t(&[3, 2, 2], -0.5, 0.5)], s, &|t, v| {
            t.masked_mse(v[0], v[1], &[true, false, true, true, false, true])
        });
        run(
            "edgeconv",
            vec![rand_t(&[4, 3], -1.0, 1.0), rand_t(&[6, 5], -1.0, 1.0), rand_t(&[5], -0.5, 0.5), rand_t(&[5], 0.5, 1.5), rand_t(&[5], -0.5, 0.5)],
            s,
            &|t, v| {
                let support = roadgraph::extractor::complete_support(4);
                let msg = t.pair_affine(v[0], v[1], v[2], &support.edges, PairInput::Difference)?;
                let msg = t.relu(msg);
                let agg = t.max_reduce_segments(msg, &support.offsets)?;
                let mut st = BatchNormState::new(5);
                t.batchnorm(agg, v[3], v[4], &mut st, NormMode::Train, BN_EPS)
            },
        );
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    report("gradient-suite", worst.len() == 10 && max < 1e-3 && secs < 60.0, &format!("{INSTANCES} instances each; {detail}; {secs:.1}s"));
}

/// Per-edge loop: message `ReLU(Θᵀ[x_i ‖ x_j − x_i] + b)`, max per
/// receiver, then batch statistics normalization.
fn edgeconv_oracle(x: &[f64], n: usize, d: usize, theta: &[f64], bias: &[f64], gamma: &[f64], beta: &[f64], edges: &[(usize, usize)]) -> Vec<f64> {
    let g = bias.len();
    let mut agg = vec![f64::NEG_INFINITY; n * g];
    for &(i, j) in edges {
        for c in 0..g {
            let mut s = bias[c];
            for k in 0..d {
                s += x[i * d + k] * theta[k * g + c];
                s += (x[j * d + k] - x[i * d + k]) * theta[(d + k) * g + c];
            }
            agg[i * g + c] = agg[i * g + c].max(s.max(0.0));
        }
    }
    let mut out = vec![0.0; n * g];
    for c in 0..g {
        let mean = (0..n).map(|i| agg[i * g + c]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (agg[i * g + c] - mean).powi(2)).sum::<f64>() / n as f64;
        for i in 0..n {
            out[i * g + c] = gamma[c] * (agg[i * g + c] - mean) / (var + BN_EPS).sqrt() + beta[c];
        }
    }
    out
}

fn knn_oracle(x: &[f64], n: usize, d: usize, k: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let mut left: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let d2 = |j: usize| (0..d).map(|c| (x[i * d + c] - x[j * d + c]).powi(2)).sum::<f64>();
            let mut out = Vec::new();
            while out.len() < k.min(n - 1) {
                let mut best = 0;
                for m in 1..left.len() {
                    if d2(left[m]) < d2(left[best]) {
                        best = m;
                    }
                }
                out.push(left.remove(best));
            }
            out
        })
        .collect()
}

/// Shortest left-to-right path sum from `s` to `t` over every simple path.
fn path_oracle(adj: &[Vec<(usize, f64)>], s: usize, t: usize) -> f64 {
    fn walk(adj: &[Vec<(usize, f64)>], u: usize, t: usize, acc: f64, seen: &mut Vec<bool>, best: &mut f64) {
        if u == t {
            *best = best.min(acc);
            return;
        }
        for &(v, w) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                walk(adj, v, t, acc + w, seen, best);
                seen[v] = false;
            }
        }
    }
    let mut seen = vec![false; adj.len()];
    seen[s] = true;
    let mut best = f64::INFINITY;
    walk(adj, s, t, 0.0, &mut seen, &mut best);
    best
}

/// Brute-force one-way APLS: snap every node of `g` to the closest point of
/// `h` (a node unless an edge interior is strictly closer), split `h` at the
/// snapped points, and enumerate all simple paths.
fn apls_oracle_one_way(g: &RoadGraph, h: &RoadGraph, r: f64) -> f64 {
    let mut snaps: Vec<Option<(usize, f64)>> = Vec::new();
    for &p in &g.nodes {
        let mut best: Option<(f64, usize, f64)> = None;
        for (k, &q) in h.nodes.iter().enumerate() {
            let d = dist(p, q);
            if best.is_none() || d < best.unwrap().0 {
                best = Some((d, usize::MAX, k as f64));
            }
        }
        for (e, &(a, b)) in h.edges.iter().enumerate() {
            let (t, d) = project_on_segment(p, h.nodes[a], h.nodes[b]);
            if best.is_none() || d < best.unwrap().0 {
                best = Some(if t <= 0.0 {
                    (d, usize::MAX, a as f64)
                } else if t >= 1.0 {
                    (d, usize::MAX, b as f64)
                } else {
                    (d, e, t)
                });
            }
        }
        snaps.push(best.filter(|b| b.0 <= r).map(|b| (b.1, b.2)));
    }
    let mut pos = h.nodes.clone();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); h.nodes.len()];
    let mut split_ids: Vec<(usize, f64, usize)> = Vec::new();
    for (e, &(a, b)) in h.edges.iter().enumerate() {
        let mut ts: Vec<f64> = snaps.iter().flatten().filter(|s| s.0 == e).map(|s| s.1).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let mut chain = vec![a];
        for t in ts {
            let (pa, pb) = (h.nodes[a], h.nodes[b]);
            pos.push([pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]);
            adj.push(Vec::new());
            split_ids.push((e, t, pos.len() - 1));
            chain.push(pos.len() - 1);
        }
        chain.push(b);
        for w in chain.windows(2) {
            let l = dist(pos[w[0]], pos[w[1]]);
            adj[w[0]].push((w[1], l));
            adj[w[1]].push((w[0], l));
        }
    }
    let node_of = |s: &Option<(usize, f64)>| {
        s.map(|(e, t)| if e == usize::MAX { t as usize } else { split_ids.iter().find(|x| x.0 == e && x.1 == t).unwrap().2 })
    };
    let adj_g = g.adjacency();
    let (mut total, mut count) = (0.0, 0usize);
    for a in 0..g.nodes.len() {
        for b in a + 1..g.nodes.len() {
            let l = path_oracle(&adj_g, a, b);
            if !l.is_finite() {
                continue;
            }
            count += 1;
            let lp = match (node_of(&snaps[a]), node_of(&snaps[b])) {
                (Some(x), Some(y)) => path_oracle(&adj, x, y),
                _ => f64::INFINITY,
            };
            total += if !lp.is_finite() {
                1.0
            } else if l == 0.0 {
                if lp == 0.0 { 0.0 } else { 1.0 }
            } else {
                ((l - lp).abs() / l).min(1.0)
            };
        }
    }
    if count == 0 {
        return if h.edges.is_empty() { 1.0 } else { 0.0 };
    }
    1.0 - total / count as f64
}

#[test]
fn oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut edgeconv_err: f64 = 0.0;
    for round in 0..20 {
        let (n, d, g) = (rng.random_range(1..12), rng.random_range(1..6), rng.random_range(1..7));
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = (0..2 * d * g).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..g).map(|_| rng.random_range(-0.5..0.5)).collect();
        let gamma: Vec<f64> = (0..g).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..g).map(|_| rng.random_range(-0.5..0.5)).collect();
        let support = if round % 2 == 0 { roadgraph::extractor::complete_support(n) } else { knn_support(&x, n, d, 3) };
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::from_vec(vec![n, d], x.clone()).unwrap());
        let layer = roadgraph::extractor::BoundGnn {
            theta: tape.constant(Tensor::from_vec(vec![2 * d, g], theta.clone()).unwrap()),
            bias: tape.constant(Tensor::from_vec(vec![g], bias.clone()).unwrap()),
            gamma: tape.constant(Tensor::from_vec(vec![g], gamma.clone()).unwrap()),
            beta: tape.constant(Tensor::from_vec(vec![g], beta.clone()).unwrap()),
        };
        let mut st = BatchNormState::new(g);
        let mode = if n >= 2 { NormMode::Train } else { NormMode::Eval };
        let out = edgeconv_layer(&mut tape, xv, &support, &layer, &mut st, mode).unwrap();
        if n >= 2 {
            let want = edgeconv_oracle(&x, n, d, &theta, &bias, &gamma, &beta, &support.edges);
            for (a, b) in tape.data(out).iter().zip(&want) {
                edgeconv_err = edgeconv_err.max((a - b).abs());
            }
        }
    }

    let mut knn_ok = true;
    for _ in 0..40 {
        let (n, d, k) = (rng.random_range(1..=50), rng.random_range(1..5), rng.random_range(1..7));
        let x: Vec<f64> = (0..n * d).map(|_| (rng.random_range(-4..4) as f64) * 0.5).collect();
        let s = knn_support(&x, n, d, k);
        let want = knn_oracle(&x, n, d, k);
        for (i, nb) in want.iter().enumerate() {
            let got: Vec<usize> = s.neighbors(i).filter(|&j| j != i || n == 1).collect();
            knn_ok &= if n == 1 { got == vec![0] } else { &got == nb };
        }
    }

    let gt = RoadGraph::new(vec![[0.0, 0.0], [100.0, 0.0], [200.0, 0.0]], vec![(0, 1), (1, 2)]).unwrap();
    let pred = RoadGraph::new(vec![[0.0, 0.0], [100.0, 0.0]], vec![(0, 1)]).unwrap();
    let one_way = apls_one_way(&gt, &pred, 10.0);
    let hand = (one_way - 1.0 / 3.0).abs() < 1e-15 && one_way == apls_oracle_one_way(&gt, &pred, 10.0);
    let hand = hand && (apls(&pred, &gt, 10.0) - 2.0 / 3.0).abs() < 1e-15;
    let mut apls_ok = true;
    for _ in 0..300 {
        let (a, b) = (random_graph(&mut rng, 5, 64.0), random_graph(&mut rng, 5, 64.0));
        let r = rng.random_range(2.0..30.0);
        apls_ok &= apls_one_way(&a, &b, r) == apls_oracle_one_way(&a, &b, r);
        apls_ok &= apls_one_way(&b, &a, r) == apls_oracle_one_way(&b, &a, r);
    }
    report(
        "oracle-equivalence",
        edgeconv_err <= 1e-9 && knn_ok && hand && apls_ok,
        &format!("edgeconv max error {edgeconv_err:.1e}, knn exact: {knn_ok}, apls exact: {apls_ok}, hand-traced 2/3: {hand}"),
    );
}

#[test]
fn metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    let empty = RoadGraph::default();
    let mut bad = Vec::new();
    let mut made = 0;
    while made < 100 {
        let g = random_graph(&mut rng, 40, 256.0);
        if g.edges.is_empty() || g.degrees().iter().all(|&d| d == 2) {
            continue;
        }
        made += 1;
        let same = [pixel_f1(&g, &g, 256, 256, 1.0, 4.0).f1, junction_f1(&g, &g, 8.0).f1, apls(&g, &g, 8.0)];
        let vs_empty = [
            pixel_f1(&g, &empty, 256, 256, 1.0, 4.0).f1,
            pixel_f1(&empty, &g, 256, 256, 1.0, 4.0).f1,
            junction_f1(&g, &empty, 8.0).f1,
            junction_f1(&empty, &g, 8.0).f1,
            apls(&g, &empty, 8.0),
            apls(&empty, &g, 8.0),
        ];
        if same.iter().any(|&v| v != 1.0) || vs_empty.iter().any(|&v| v != 0.0) {
            bad.push(format!("{same:?} {vs_empty:?}"));
        }
    }
    report("metric-identities", bad.is_empty(), &format!("{made} graphs, {} violations {:?}", bad.len(), bad.first()));
}

const TRAIN_SCENES: usize = 256;
const TEST_SCENES: usize = 64;
const TEST_SEED_BASE: u64 = 1_000_000;
const E2E_SEEDS: [u64; 3] = [0, 1, 2];

struct TrainedRun {
    params: ModelParams,
    report: EvalReport,
    train_time: Duration,
}

struct EndToEnd {
    runs: Vec<TrainedRun>,
    test: Vec<(String, SceneImage, RoadGraph)>,
}

fn scene_config(seed: u64) -> SceneConfig {
    SceneConfig { seed, ..Default::default() }
}

fn held_out() -> Vec<(String, SceneImage, RoadGraph)> {
    (0..TEST_SCENES)
        .map(|i| {
            let cfg = scene_config(TEST_SEED_BASE + i as u64);
            let g = generate_road_graph(&cfg).unwrap();
            (format!("test_{i:03}"), render_scene(&g, &cfg), g)
        })
        .collect()
}

fn evaluate_model(params: &ModelParams, test: &[(String, SceneImage, RoadGraph)]) -> EvalReport {
    let cfg = InferConfig::default();
    let scenes: Vec<(String, RoadGraph, RoadGraph)> = test
        .iter()
        .map(|(n, img, gt)| (n.clone(), sliding_window_infer(img, params, &cfg, 1).unwrap(), gt.clone()))
        .collect();
    evaluate_graphs(&scenes, &MetricConfig::default(), 1).unwrap()
}

/// Trains the default model once per seed; shared by the tests that need a
/// trained network.
fn end_to_end() -> &'static EndToEnd {
    static CELL: OnceLock<EndToEnd> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        make_dataset(&scene_config(0), TRAIN_SCENES, dir.path(), 1).unwrap();
        let test = held_out();
        let runs = E2E_SEEDS
            .iter()
            .map(|&seed| {
                let cfg = TrainConfig { seed, ..Default::default() };
                let start = Instant::now();
                let (params, _) = train_dir(dir.path(), &cfg, &ModelConfig::default(), |_, _| Ok(())).unwrap();
                let train_time = start.elapsed();
                let report = evaluate_model(&params, &test);
                TrainedRun { params, report, train_time }
            })
            .collect();
        EndToEnd { runs, test }
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn end_to_end_training() {
    let e2e = end_to_end();
    let pick = |f: fn(&EvalReport) -> f64| median(e2e.runs.iter().map(|r| f(&r.report)).collect());
    let p = pick(|r| r.macro_avg.pixel.f1);
    let j = pick(|r| r.macro_avg.junction.f1);
    let a = pick(|r| r.macro_avg.apls);
    let longest = e2e.runs.iter().map(|r| r.train_time.as_secs_f64()).fold(0.0, f64::max);
    let per_seed: Vec<String> = e2e
        .runs
        .iter()
        .map(|r| format!("({:.3}, {:.3}, {:.3})", r.report.macro_avg.pixel.f1, r.report.macro_avg.junction.f1, r.report.macro_avg.apls))
        .collect();
    report(
        "end-to-end-training",
        p >= 0.80 && j >= 0.55 && a >= 0.60 && longest <= 3600.0,
        &format!("median P-F1 {p:.3}, J-F1 {j:.3}, APLS {a:.3}; per seed {}; longest training {longest:.0}s", per_seed.join(" ")),
    );
}

#[test]
fn threshold_sweep_monotone() {
    let e2e = end_to_end();
    let cfg = InferConfig::default();
    let scored: Vec<_> = e2e
        .test
        .iter()
        .map(|(n, img, gt)| (n.clone(), sliding_window_scores(img, &e2e.runs[0].params, &cfg, 1).unwrap(), gt.clone()))
        .collect();
    let thresholds: Vec<f64> = (0..=5).map(|k| k as f64 / 10.0).collect();
    let rows = sweep_scored(&scored, &thresholds, &MetricConfig::default(), 1).unwrap();
    let edges: Vec<f64> = rows.iter().map(|r| r.edges).collect();
    let recall: Vec<f64> = rows.iter().map(|r| r.edge_recall).collect();
    let mono = |v: &[f64]| v.windows(2).all(|w| w[0] >= w[1]);
    report(
        "threshold-sweep",
        rows.len() == 6 && mono(&edges) && mono(&recall),
        &format!("edges {edges:.1?}, edge recall {recall:.3?}"),
    );
}

#[test]
fn ablation_harness() {
    let train: Vec<(SceneImage, RoadGraph)> = (0..16)
        .map(|i| {
            let cfg = scene_config(500 + i);
            let g = generate_road_graph(&cfg).unwrap();
            (render_scene(&g, &cfg), g)
        })
        .collect();
    let test: Vec<(String, SceneImage, RoadGraph)> = held_out().into_iter().take(8).collect();
    let mut summaries = Vec::new();
    let mut ok = true;
    let mut names: Option<Vec<String>> = None;
    for support in [Support::Complete, Support::KnnStatic, Support::KnnDynamic] {
        for scorer in [Scorer::Bilinear, Scorer::Mlp] {
            let model = ModelConfig { support, scorer, ..Default::default() };
            let cfg = TrainConfig { epochs: 5, ..Default::default() };
            match train_samples(&train, &cfg, &model) {
                Ok((params, log)) => {
                    let r = evaluate_model(&params, &test);
                    let these: Vec<String> = r.scenes.iter().map(|s| s.scene.clone()).collect();
                    ok &= log.records.len() == 5 && names.get_or_insert_with(|| these.clone()) == &these;
                    let m = &r.macro_avg;
                    ok &= [m.pixel.f1, m.junction.f1, m.apls].iter().all(|v| (0.0..=1.0).contains(v));
                    summaries.push(format!("{support:?}/{scorer:?} P {:.2} J {:.2} A {:.2}", m.pixel.f1, m.junction.f1, m.apls));
                }
                Err(e) => {
                    ok = false;
                    summaries.push(format!("{support:?}/{scorer:?} error {e}"));
                }
            }
        }
    }
    report("ablation-harness", ok && summaries.len() == 6, &summaries.join("; "));
}

#[test]
fn sliding_window_determinism() {
    let e2e = end_to_end();
    let cfg = SceneConfig {
        width: 1024,
        height: 1024,
        seed: 4242,
        ..Default::default()
    };
    let g = generate_road_graph(&cfg).unwrap();
    let img = render_scene(&g, &cfg);
    let params = &e2e.runs[0].params;
    let icfg = InferConfig::default();
    let base = sliding_window_infer(&img, params, &icfg, 1).unwrap();
    let again = sliding_window_infer(&img, params, &icfg, 1).unwrap();
    let mut same = base.to_json() == again.to_json();
    for jobs in [2, 4] {
        same &= sliding_window_infer(&img, params, &icfg, jobs).unwrap().to_json() == base.to_json();
    }
    report(
        "sliding-window-determinism",
        same && !base.nodes.is_empty(),
        &format!("{} nodes, {} edges, identical across runs and jobs 1/2/4: {same}", base.nodes.len(), base.edges.len()),
    );
}

#[test]
fn edge_probability_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let mut total = 0usize;
    let mut mismatches = 0usize;
    for scorer in [Scorer::Mlp, Scorer::Bilinear] {
        let model = ModelConfig { scorer, ..Default::default() };
        let params = ModelParams::init(&model, 8).unwrap();
        let d = model.gnn_dim;
        let n = 400;
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params, false);
        let x = tape.constant(Tensor::from_fn(&[n, d], |_| rng.random_range(-3.0..3.0)));
        let pairs: Vec<(usize, usize)> = all_pairs(n).into_iter().take(50_000).collect();
        let flipped: Vec<(usize, usize)> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        let p = score_pairs(&mut tape, &bound.scorer, x, &pairs).unwrap();
        let q = score_pairs(&mut tape, &bound.scorer, x, &flipped).unwrap();
        mismatches += tape.data(p).iter().zip(tape.data(q)).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
        total += pairs.len();
    }
    report("edge-symmetry", total >= 100_000 && mismatches == 0, &format!("{total} pairs, {mismatches} mismatches"));
}
