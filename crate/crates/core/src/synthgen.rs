//! Procedural overhead scenes: a jittered street lattice with random edge
//! deletion, drawn as bright anti-aliased strokes over a noise texture.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tensornet::io::RawArray;
use tensornet::Tensor;

use crate::error::{Error, Result};
use crate::geograph::{point_segment_distance, save_graph, RoadGraph};
use crate::STRIDE;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub lattice_spacing: f64,
    pub jitter: f64,
    pub drop_prob: f64,
    pub curve_amplitude: f64,
    pub noise_level: f64,
    pub road_width: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            lattice_spacing: 64.0,
            jitter: 10.0,
            drop_prob: 0.25,
            curve_amplitude: 0.0,
            noise_level: 0.2,
            road_width: 6.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 || self.width % STRIDE != 0 || self.height % STRIDE != 0 {
            return fail(format!("scene size {}x{} must be a positive multiple of {STRIDE}", self.width, self.height));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return fail(format!("drop_prob {} must lie in [0, 1)", self.drop_prob));
        }
        if !(self.jitter >= 0.0 && self.lattice_spacing > 2.0 * self.jitter) {
            return fail(format!(
                "lattice_spacing {} must exceed twice the jitter {}",
                self.lattice_spacing, self.jitter
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return fail(format!("noise_level {} must lie in [0, 1]", self.noise_level));
        }
        if !(self.road_width > 0.0) || !(self.curve_amplitude >= 0.0) {
            return fail("road_width must be positive and curve_amplitude non-negative".into());
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Planar RGB image, values in `[0, 1]`, layout `[channel][row][column]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SceneImage {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; 3 * width * height],
        }
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn luminance(&self, x: usize, y: usize) -> f64 {
        (self.at(0, x, y) + self.at(1, x, y) + self.at(2, x, y)) / 3.0
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(vec![3, self.height, self.width], self.data.clone()).expect("image buffer length")
    }

    /// Copies the `w × h` window with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> SceneImage {
        let mut data = Vec::with_capacity(3 * w * h);
        for c in 0..3 {
            for y in y0..y0 + h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            }
        }
        SceneImage { width: w, height: h, data }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw = RawArray {
            width: self.width as u32,
            height: self.height as u32,
            channels: 3,
            data: self.data.iter().map(|&v| v as f32).collect(),
        };
        raw.save(path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SceneImage> {
        let path = path.as_ref();
        let raw = RawArray::load(path).map_err(|e| Error::io(path, e))?;
        if raw.channels != 3 {
            return Err(Error::Invalid(format!("{}: expected 3 channels, found {}", path.display(), raw.channels)));
        }
        Ok(SceneImage {
            width: raw.width as usize,
            height: raw.height as usize,
            data: raw.data.iter().map(|&v| v as f64).collect(),
        })
    }
}

fn snap_to_cell_center(c: f64) -> f64 {
    let s = STRIDE as f64;
    (c / s).floor() * s + s / 2.0
}

/// Lattice origin along one axis: the lattice is centered on the canvas and
/// its first line is moved onto a cell center.
fn lattice_axis(extent: usize, spacing: f64) -> Vec<f64> {
    let n = (extent as f64 / spacing).floor() as usize;
    if n == 0 {
        return Vec::new();
    }
    let origin = snap_to_cell_center((extent as f64 - (n - 1) as f64 * spacing) / 2.0);
    (0..n).map(|k| origin + k as f64 * spacing).collect()
}

/// Generates the road graph of one scene. Deterministic in `config.seed`.
///
/// Lattice nodes left with exactly two collinear roads are dissolved into a
/// single straight edge, so every remaining node is an intersection, a turn
/// or a dead end.
pub fn generate_road_graph(config: &SceneConfig) -> Result<RoadGraph> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let xs = lattice_axis(config.width, config.lattice_spacing);
    let ys = lattice_axis(config.height, config.lattice_spacing);
    let (nx, ny) = (xs.len(), ys.len());
    let max_x = (config.width - 1) as f64;
    let max_y = (config.height - 1) as f64;

    let mut pos = Vec::with_capacity(nx * ny);
    for &y in &ys {
        for &x in &xs {
            let (dx, dy) = if config.jitter > 0.0 {
                (rng.random_range(-config.jitter..=config.jitter), rng.random_range(-config.jitter..=config.jitter))
            } else {
                (0.0, 0.0)
            };
            pos.push([(x + dx).clamp(0.0, max_x), (y + dy).clamp(0.0, max_y)]);
        }
    }

    // Neighbor sets over lattice indices; a lattice edge survives with
    // probability 1 - drop_prob.
    let id = |r: usize, c: usize| r * nx + c;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    let link = |a: usize, b: usize, adj: &mut Vec<Vec<usize>>| {
        adj[a].push(b);
        adj[b].push(a);
    };
    for r in 0..ny {
        for c in 0..nx {
            if c + 1 < nx && rng.random::<f64>() >= config.drop_prob {
                link(id(r, c), id(r, c + 1), &mut adj);
            }
            if r + 1 < ny && rng.random::<f64>() >= config.drop_prob {
                link(id(r, c), id(r + 1, c), &mut adj);
            }
        }
    }

    for v in 0..nx * ny {
        if adj[v].len() != 2 {
            continue;
        }
        let (a, b) = (adj[v][0], adj[v][1]);
        let same_row = a / nx == v / nx && b / nx == v / nx;
        let same_col = a % nx == v % nx && b % nx == v % nx;
        if same_row || same_col {
            adj[v].clear();
            for (p, q) in [(a, b), (b, a)] {
                let slot = adj[p].iter().position(|&u| u == v).expect("symmetric adjacency");
                adj[p][slot] = q;
            }
        }
    }

    let mut index = vec![usize::MAX; nx * ny];
    let mut nodes = Vec::new();
    for v in 0..nx * ny {
        if !adj[v].is_empty() {
            index[v] = nodes.len();
            nodes.push(pos[v]);
        }
    }
    let mut edges = Vec::new();
    for (v, nbrs) in adj.iter().enumerate() {
        for &u in nbrs {
            if v < u {
                edges.push((index[v], index[u]));
            }
        }
    }

    if config.curve_amplitude > 0.0 {
        let mut curved = Vec::with_capacity(2 * edges.len());
        for &(a, b) in &edges {
            let (p, q) = (nodes[a], nodes[b]);
            let len = (q[0] - p[0]).hypot(q[1] - p[1]);
            let off = rng.random_range(-config.curve_amplitude..=config.curve_amplitude);
            let (nxp, nyp) = (-(q[1] - p[1]) / len, (q[0] - p[0]) / len);
            let mid = [
                ((p[0] + q[0]) / 2.0 + off * nxp).clamp(0.0, max_x),
                ((p[1] + q[1]) / 2.0 + off * nyp).clamp(0.0, max_y),
            ];
            let m = nodes.len();
            nodes.push(mid);
            curved.push((a, m));
            curved.push((m, b));
        }
        edges = curved;
    }

    Ok(RoadGraph {
        nodes,
        edges,
        size: Some((config.width as u32, config.height as u32)),
    })
}

/// Per-scene colors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Palette {
    pub tint: [f64; 3],
    pub road: [f64; 3],
}

fn render_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn draw_palette(rng: &mut ChaCha8Rng) -> Palette {
    let tint = [rng.random_range(0.8..1.2), rng.random_range(0.8..1.2), rng.random_range(0.8..1.2)];
    let tone = rng.random_range(0.8..0.95);
    let road = [0, 1, 2].map(|_| (tone + rng.random_range(-0.03..0.03f64)).min(1.0));
    Palette { tint, road }
}

pub fn palette(config: &SceneConfig) -> Palette {
    draw_palette(&mut render_rng(config.seed))
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
fn value_noise(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: usize) -> Vec<f64> {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let gy = y / cell;
        let ty = smooth((y % cell) as f64 / cell as f64);
        for x in 0..width {
            let gx = x / cell;
            let tx = smooth((x % cell) as f64 / cell as f64);
            let g = |i: usize, j: usize| grid[j * gw + i];
            let top = g(gx, gy) * (1.0 - tx) + g(gx + 1, gy) * tx;
            let bottom = g(gx, gy + 1) * (1.0 - tx) + g(gx + 1, gy + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Fraction of each pixel covered by a road stroke: `clamp(w/2 + 0.5 − d, 0, 1)`
/// where `d` is the distance from the pixel center to the nearest edge.
pub fn road_coverage(graph: &RoadGraph, width: usize, height: usize, road_width: f64) -> Vec<f64> {
    let mut cov = vec![0.0f64; width * height];
    let reach = road_width / 2.0 + 0.5;
    for &(i, j) in &graph.edges {
        let (a, b) = (graph.nodes[i], graph.nodes[j]);
        let x0 = (a[0].min(b[0]) - reach).floor().max(0.0) as usize;
        let y0 = (a[1].min(b[1]) - reach).floor().max(0.0) as usize;
        let x1 = ((a[0].max(b[0]) + reach).ceil().max(0.0) as usize).min(width - 1);
        let y1 = ((a[1].max(b[1]) + reach).ceil().max(0.0) as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = point_segment_distance([x as f64, y as f64], a, b);
                let c = (reach - d).clamp(0.0, 1.0);
                let slot = &mut cov[y * width + x];
                *slot = slot.max(c);
            }
        }
    }
    cov
}

/// Renders a scene. Deterministic in `config.seed`; the background does not
/// depend on the graph.
pub fn render_scene(graph: &RoadGraph, config: &SceneConfig) -> SceneImage {
    let (w, h) = (config.width, config.height);
    let mut rng = render_rng(config.seed);
    let pal = draw_palette(&mut rng);
    let coarse = value_noise(&mut rng, w, h, 32);
    let fine = value_noise(&mut rng, w, h, 8);
    let cov = road_coverage(graph, w, h, config.road_width);
    let amp = 0.25 * config.noise_level;
    let mut img = SceneImage::filled(w, h, 0.0);
    for p in 0..w * h {
        let base = 0.15 + 0.2 * coarse[p] + 0.1 * fine[p];
        for c in 0..3 {
            let bg = (base * pal.tint[c]).min(1.0);
            let jitter = if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };
            let v = bg * (1.0 - cov[p]) + pal.road[c] * cov[p] + jitter;
            img.data[c * w * h + p] = v.clamp(0.0, 1.0);
        }
    }
    img
}

pub fn scene_stem(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Writes `count` scenes `scene_NNNN.img` / `scene_NNNN.json`, scene `i`
/// generated with seed `config.seed + i`. Up to `jobs` scenes are produced
/// concurrently; the files do not depend on `jobs`.
pub fn make_dataset(config: &SceneConfig, count: usize, out_dir: impl AsRef<Path>, jobs: usize) -> Result<()> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write_one = |i: usize| -> Result<()> {
        let cfg = config.with_seed(config.seed.wrapping_add(i as u64));
        let graph = generate_road_graph(&cfg)?;
        let image = render_scene(&graph, &cfg);
        let stem = scene_stem(i);
        image.save(out_dir.join(format!("{stem}.img")))?;
        save_graph(&graph, out_dir.join(format!("{stem}.json")))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(e.to_string()))?;
    pool.install(|| (0..count).into_par_iter().try_for_each(write_one))
}

/// One scene on disk.
#[derive(Clone, Debug)]
pub struct ScenePaths {
    pub name: String,
    pub image: PathBuf,
    pub graph: PathBuf,
}

/// All `*.img` files in `dir` that have a `.json` sibling, sorted by name.
pub fn list_scenes(dir: impl AsRef<Path>) -> Result<Vec<ScenePaths>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "img") {
            let graph = path.with_extension("json");
            if graph.exists() {
                let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                out.push(ScenePaths { name, image: path, graph });
            }
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}
