use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use roadgraph::extractor::{ModelConfig, ModelParams, Scorer, Support};
use roadgraph::geograph::{load_graph, save_graph};
use roadgraph::gridenc::{encode_targets, ratio_analysis};
use roadgraph::inferpipe::{sliding_window_infer, sweep_csv, threshold_sweep, InferConfig};
use roadgraph::metrics::{evaluate, MetricConfig};
use roadgraph::synthgen::{list_scenes, make_dataset, SceneConfig, SceneImage};
use roadgraph::trainer::{checkpoint_path, train_dir, LossWeights, OffsetMask, TrainConfig};
use roadgraph::{Error, Result, STRIDE};
use tensornet::io::RawArray;

/// Road graph extraction from overhead imagery.
#[derive(Parser, Debug)]
#[command(name = "roadgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset of scene images and road graphs.
    Gen(GenArgs),
    /// Encode a road graph into grid targets.
    Encode(EncodeArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Extract a road graph from an image (or every image in a directory).
    Infer(InferArgs),
    /// Score predicted graphs against ground truth.
    Eval(EvalArgs),
    /// Points per occupied cell at several resize ratios.
    Ratio(RatioArgs),
    /// Evaluate a model over a range of edge thresholds.
    Sweep(SweepArgs),
}

/// Every subcommand accepts `--config FILE` with `key=value` lines; the
/// lines act as flags placed before the command line ones.
#[derive(Args, Debug)]
struct ConfigArg {
    /// Plain-text file of key=value lines; command-line flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Scene width and height in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64.0)]
    spacing: f64,
    #[arg(long, default_value_t = 10.0)]
    jitter: f64,
    /// Probability of dropping each lattice road.
    #[arg(long, default_value_t = 0.25)]
    drop: f64,
    #[arg(long, default_value_t = 0.0)]
    curve: f64,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 6.0)]
    road_width: f64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    /// JSON summary of the targets.
    #[arg(long)]
    out: PathBuf,
    /// Optional raw array with channels (junction, u, v).
    #[arg(long)]
    raw: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 128)]
    n_in: usize,
    #[arg(long, default_value_t = 64)]
    n_feat: usize,
    #[arg(long, default_value_t = 3)]
    gnn_layers: usize,
    #[arg(long, default_value_t = 64)]
    gnn_dim: usize,
    /// complete, knn_static or knn_dynamic.
    #[arg(long, default_value = "complete")]
    support: Support,
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// mlp or bilinear.
    #[arg(long, default_value = "mlp")]
    scorer: Scorer,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    raw_features: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    embed_coords: bool,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            n_in: self.n_in,
            n_feat: self.n_feat,
            gnn_layers: self.gnn_layers,
            gnn_dim: self.gnn_dim,
            support: self.support,
            k: self.k,
            scorer: self.scorer,
            use_raw_features: self.raw_features,
            embed_coords: self.embed_coords,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for the checkpoint and the training log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    train_jthr: f64,
    #[arg(long, default_value_t = 256)]
    crop: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    flips: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    w_jun: f64,
    #[arg(long, default_value_t = 1.0)]
    w_off: f64,
    #[arg(long, default_value_t = 1.0)]
    w_edge: f64,
    /// ground_truth or predicted.
    #[arg(long, default_value = "ground_truth")]
    offset_mask: OffsetMask,
    #[arg(long, default_value_t = 10)]
    checkpoint_every: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug, Clone)]
struct WindowArgs {
    #[arg(long, default_value_t = 256)]
    window: usize,
    /// Tile spacing in pixels [default: window / 2].
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value_t = 16.0)]
    merge_radius: f64,
    #[arg(long, default_value_t = 0.5)]
    jthr: f64,
    #[arg(long, default_value_t = 0.5)]
    ethr: f64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl WindowArgs {
    fn config(&self) -> InferConfig {
        InferConfig {
            j_thr: self.jthr,
            edge_thr: self.ethr,
            window: self.window,
            overlap_stride: self.stride.unwrap_or(self.window / 2),
            merge_radius: self.merge_radius,
        }
    }
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Checkpoint file.
    #[arg(long)]
    model: PathBuf,
    /// An image file, or a directory of them.
    #[arg(long)]
    image: PathBuf,
    /// Graph file, or a directory when --image is a directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args, Debug, Clone)]
struct MetricArgs {
    #[arg(long, default_value_t = 1.0)]
    line_width: f64,
    #[arg(long, default_value_t = 4.0)]
    buffer: f64,
    #[arg(long, default_value_t = 8.0)]
    match_radius: f64,
    #[arg(long, default_value_t = 8.0)]
    snap_radius: f64,
}

impl MetricArgs {
    fn config(&self) -> MetricConfig {
        MetricConfig {
            line_width: self.line_width,
            buffer: self.buffer,
            match_radius: self.match_radius,
            snap_radius: self.snap_radius,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// CSV report path; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    metrics: MetricArgs,
}

#[derive(Args, Debug)]
struct RatioArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    cfg: ConfigArg,
    /// Comma-separated resize ratios.
    #[arg(long, default_value = "0.25,0.5,1,2", value_delimiter = ',')]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = STRIDE)]
    stride: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated edge thresholds.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5", value_delimiter = ',')]
    thresholds: Vec<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    metrics: MetricArgs,
}

/// Inserts the `--key value` pairs of every `--config` file right after the
/// subcommand name.
fn expand_config(argv: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let mut files = Vec::new();
    let mut it = argv.iter().skip(2);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            if let Some(v) = it.next() {
                files.push(PathBuf::from(v));
            }
        } else if let Some(v) = s.strip_prefix("--config=") {
            files.push(PathBuf::from(v));
        }
    }
    if files.is_empty() || argv.len() < 2 {
        return Ok(argv);
    }
    let mut extra = Vec::new();
    for path in files {
        let text = fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), n + 1))?;
            extra.push(OsString::from(format!("--{}", k.trim().replace('_', "-"))));
            extra.push(OsString::from(v.trim()));
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(report: Option<&Path>, text: &str) -> Result<()> {
    match report {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let cfg = SceneConfig {
        width: a.size,
        height: a.size,
        lattice_spacing: a.spacing,
        jitter: a.jitter,
        drop_prob: a.drop,
        curve_amplitude: a.curve,
        noise_level: a.noise,
        road_width: a.road_width,
        seed: a.seed,
    };
    make_dataset(&cfg, a.count, &a.out, a.jobs)?;
    eprintln!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}

fn encode(a: EncodeArgs) -> Result<()> {
    let graph = load_graph(&a.graph)?;
    let t = encode_targets(&graph, a.width, a.height, STRIDE)?;
    let summary = serde_json::json!({
        "grid_h": t.grid_h,
        "grid_w": t.grid_w,
        "stride": t.stride,
        "junction": t.junction,
        "offsets": t.offsets,
        "cell_of_node": t.cell_of_node,
        "merged_graph": serde_json::from_str::<serde_json::Value>(&t.merged_graph.to_json()).expect("graph json"),
    });
    write_text(&a.out, &format!("{summary}\n"))?;
    if let Some(raw) = a.raw {
        let data = (0..t.cells())
            .map(|c| t.junction[c] as f32)
            .chain((0..t.cells()).map(|c| t.offsets[2 * c] as f32))
            .chain((0..t.cells()).map(|c| t.offsets[2 * c + 1] as f32))
            .collect();
        let arr = RawArray {
            width: t.grid_w as u32,
            height: t.grid_h as u32,
            channels: 3,
            data,
        };
        arr.save(&raw).map_err(|e| Error::io(&raw, e))?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        train_jthr: a.train_jthr,
        crop: a.crop,
        flips: a.flips,
        seed: a.seed,
        weights: LossWeights {
            junction: a.w_jun,
            offset: a.w_off,
            edge: a.w_edge,
        },
        offset_mask: a.offset_mask,
        checkpoint_every: a.checkpoint_every,
        checkpoint_dir: Some(a.out.clone()),
    };
    let log_path = a.out.join("train_log.csv");
    let (_, log) = train_dir(&a.data, &cfg, &a.model.config(), |r, _| {
        eprintln!(
            "epoch {:>4}  jun {:.4}  off {:.4}  edge {:.4}  total {:.4}  {:.1}s",
            r.epoch, r.l_jun, r.l_off, r.l_edge, r.l_total, r.seconds
        );
        Ok(())
    })?;
    write_text(&log_path, &log.to_csv())?;
    eprintln!("checkpoint {}", checkpoint_path(&a.out).display());
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let params = ModelParams::load(&a.model)?;
    let cfg = a.window.config();
    if a.image.is_dir() {
        let mut images: Vec<PathBuf> = fs::read_dir(&a.image)
            .map_err(|e| Error::io(&a.image, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "img"))
            .collect();
        images.sort();
        fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        for path in images {
            let image = SceneImage::load(&path)?;
            let g = sliding_window_infer(&image, &params, &cfg, a.window.jobs)?;
            save_graph(&g, a.out.join(path.with_extension("json").file_name().expect("file name")))?;
        }
        return Ok(());
    }
    let image = SceneImage::load(&a.image)?;
    let g = sliding_window_infer(&image, &params, &cfg, a.window.jobs)?;
    save_graph(&g, &a.out)
}

fn eval(a: EvalArgs) -> Result<()> {
    let report = evaluate(&a.pred, &a.gt, &a.metrics.config(), a.jobs)?;
    emit(a.report.as_deref(), &report.to_csv())
}

fn ratio(a: RatioArgs) -> Result<()> {
    let scenes = list_scenes(&a.data)?;
    let mut graphs = Vec::with_capacity(scenes.len());
    let mut dims = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let g = load_graph(&s.graph)?;
        let (w, h) = match g.size {
            Some((w, h)) => (w as usize, h as usize),
            None => {
                let img = SceneImage::load(&s.image)?;
                (img.width, img.height)
            }
        };
        graphs.push(g);
        dims.push((w, h));
    }
    let rows = ratio_analysis(&graphs, &dims, a.stride, &a.ratios)?;
    let mut out = String::from("ratio,points_per_cell\n");
    for (r, v) in rows {
        out.push_str(&format!("{r},{v:.6}\n"));
    }
    emit(a.report.as_deref(), &out)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let params = ModelParams::load(&a.model)?;
    let rows = threshold_sweep(&a.data, &params, &a.window.config(), &a.thresholds, &a.metrics.config(), a.window.jobs)?;
    emit(a.report.as_deref(), &sweep_csv(&rows))
}

fn run(argv: Vec<OsString>) -> ExitCode {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let command = Cli::command().args_override_self(true).mut_subcommands(|s| s.args_override_self(true));
    let cli = match command.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Encode(a) => encode(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Ratio(a) => ratio(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    run(std::env::args_os().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    fn parse(v: Vec<OsString>) -> Cli {
        let command = Cli::command().args_override_self(true).mut_subcommands(|s| s.args_override_self(true));
        Cli::from_arg_matches(&command.try_get_matches_from(v).unwrap()).unwrap()
    }

    #[test]
    fn argv_without_config_is_untouched() {
        let argv = os(&["roadgraph", "gen", "--count", "3"]);
        assert_eq!(expand_config(argv.clone()).unwrap(), argv);
    }

    #[test]
    fn config_lines_go_before_explicit_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "\n# comment\nbatch_size = 8\nlr=0.01\n").unwrap();
        let p = path.to_str().unwrap();
        let got = expand_config(os(&["roadgraph", "train", "--config", p, "--lr", "0.5"])).unwrap();
        assert_eq!(got, os(&["roadgraph", "train", "--batch-size", "8", "--lr", "0.01", "--config", p, "--lr", "0.5"]));
        let got = expand_config(os(&["roadgraph", "train", &format!("--config={p}")])).unwrap();
        assert_eq!(got[2..4], os(&["--batch-size", "8"])[..]);
    }

    #[test]
    fn later_flag_wins() {
        let mut v = os(&["roadgraph", "train", "--data", "d", "--out", "o", "--lr", "0.01", "--lr", "0.2", "--flips", "false"]);
        let Command::Train(a) = parse(v.clone()).command else { panic!("not train") };
        assert_eq!(a.lr, 0.2);
        assert!(!a.flips);
        v.truncate(6);
        let Command::Train(a) = parse(v).command else { panic!("not train") };
        assert_eq!(a.lr, 1e-3);
        assert!(a.flips);
    }

    #[test]
    fn missing_or_malformed_config_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        assert!(expand_config(os(&["roadgraph", "gen", "--config", path.to_str().unwrap()])).is_err());
        fs::write(&path, "count 3\n").unwrap();
        let err = expand_config(os(&["roadgraph", "gen", "--config", path.to_str().unwrap()])).unwrap_err();
        assert!(err.contains(":1:"));
    }
}
