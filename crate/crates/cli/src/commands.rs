//! Subcommand implementations.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayletdf::features::{FeatureMode, PerPointFeatures};
use rayletdf::field::{train, FieldModel, TrainingView};
use rayletdf::fusion::{TriangleMesh, TsdfVolume};
use rayletdf::io::cameras::{camera_to_json, read_camera, Manifest, ViewEntry};
use rayletdf::io::checkpoint::{parse_checkpoint, parse_features, write_checkpoint, write_features, write_volume};
use rayletdf::io::obj::parse_obj;
use rayletdf::io::pfm::{normals_to_pfm, read_depth_pfm, write_depth_pfm, write_pfm};
use rayletdf::io::ply::{mesh_from_ply, read_ply, write_gaussian_ply, write_mesh_ply, write_points_ply, PlyFormat};
use rayletdf::metrics::{mesh_metrics, ray_metrics_with_threshold, scale_align, MeshMetrics, RayMetrics};
use rayletdf::render::{render_distance, render_normals, DepthMap};
use rayletdf::scene::{Camera, Vec3};
use rayletdf::scene_model::SceneModel;
use rayletdf::synth::{AnalyticScene, Orbit};
use rayletdf::Error;

use crate::config::{Align, Encoding, RunConfig, SceneKind, CONFIG_FILE};
use crate::{BenchArgs, Cli, Command, EvalDepthArgs, EvalMeshArgs, FuseArgs, RenderArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.rldfw";
pub const FEATURES_FILE: &str = "features.rldff";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 1.
    Usage(String),
    /// Unreadable or inconsistent data; exit code 2.
    Data(Error),
    /// A check the command performs did not hold; exit code 2.
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Check(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Check(m) => f.write_str(m),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required<'a>(value: &'a Option<String>, flag: &str) -> Result<&'a str> {
    value.as_deref().ok_or_else(|| usage(format!("missing --{flag}")))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Attaches the failing path to I/O and parse errors.
fn at_path<T>(path: &Path, r: rayletdf::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => CliError::Data(Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display())))),
        e => CliError::Check(format!("{}: {e}", path.display())),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    at_path(path, std::fs::read(path).map_err(Error::from))
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    at_path(path, std::fs::write(path, data).map_err(Error::from))
}

/// Creates `dir` and records the run configuration in it.
fn output_dir(cfg: &RunConfig, dir: &str) -> Result<PathBuf> {
    let dir = PathBuf::from(dir);
    std::fs::create_dir_all(&dir)?;
    cfg.write_into(&dir)?;
    Ok(dir)
}

pub fn run(cli: Cli) -> Result<()> {
    let has_config = cli.config.is_some();
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::read(p).map_err(|e| usage(format!("cannot load config {}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot size thread pool: {e}")))?;
    }
    cfg.train.seed = cfg.seed;
    match cli.command {
        Command::Synth(a) => synth(cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Render(a) => render(cfg, a, has_config),
        Command::EvalDepth(a) => eval_depth(cfg, a),
        Command::Fuse(a) => fuse(cfg, a),
        Command::EvalMesh(a) => eval_mesh(cfg, a),
        Command::IntersectBench(a) => bench(cfg, a),
    }
}

fn analytic_scene(kind: SceneKind) -> AnalyticScene {
    match kind {
        SceneKind::SphereInBox => AnalyticScene::sphere_in_box(),
        SceneKind::Sphere => AnalyticScene::sphere(Vec3::zeros(), 0.5),
        SceneKind::Plane => AnalyticScene::plane(0.0, 2.0),
        SceneKind::Box => AnalyticScene::box_room(Vec3::new(-2.0, -2.0, -1.5), Vec3::new(2.0, 2.0, 1.5)),
    }
}

/// Writes `sub/NNN.json` and `sub/NNN.pfm` per view plus `sub.json`.
fn write_views(dir: &Path, sub: &str, cameras: &[Camera], maps: &[DepthMap]) -> Result<()> {
    std::fs::create_dir_all(dir.join(sub))?;
    let mut manifest = Manifest::default();
    for (i, (cam, map)) in cameras.iter().zip(maps).enumerate() {
        let camera = format!("{sub}/{i:03}.json");
        let distance = format!("{sub}/{i:03}.pfm");
        write(&dir.join(&camera), camera_to_json(cam))?;
        at_path(&dir.join(&distance), write_depth_pfm(dir.join(&distance), map))?;
        manifest.views.push(ViewEntry {
            camera,
            distance: Some(distance),
        });
    }
    write(&dir.join(format!("{sub}.json")), serde_json::to_string_pretty(&manifest).map_err(Error::from)?)
}

fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<()> {
    cfg.command = "synth".into();
    let s = &mut cfg.synth;
    set(&mut s.scene, a.scene);
    set(&mut s.encoding, a.encoding);
    set(&mut s.points, a.points);
    set(&mut s.views, a.views);
    set(&mut s.test_views, a.test_views);
    set(&mut s.width, a.width);
    set(&mut s.height, a.height);
    set(&mut s.fov_y, a.fov_y);
    set(&mut s.orbit_radius, a.orbit_radius);
    set(&mut s.orbit_height, a.orbit_height);
    if a.out.is_some() {
        cfg.paths.out = a.out;
    }
    let s = cfg.synth;
    if s.points < 2 || s.views == 0 || s.width == 0 || s.height == 0 {
        return Err(usage("synth needs at least 2 points, 1 view and a non-empty image"));
    }
    let dir = output_dir(&cfg, required(&cfg.paths.out, "out")?)?;

    let scene = analytic_scene(s.scene);
    let c = scene.centroid();
    let orbit = Orbit {
        target: [c.x, c.y, c.z],
        radius: s.orbit_radius,
        height: s.orbit_height,
        start_azimuth: 0.0,
        width: s.width,
        image_height: s.height,
        fov_y: s.fov_y,
    };
    let ply = match s.encoding {
        Encoding::Points => write_points_ply(&scene.sample_points(s.points, cfg.seed)?, PlyFormat::BinaryLittleEndian),
        Encoding::Gaussians => write_gaussian_ply(&scene.make_gaussians(s.points, cfg.seed)?),
    };
    write(&dir.join("scene.ply"), ply)?;
    let cams = orbit.cameras(s.views)?;
    write_views(&dir, "train", &cams, &scene.render_oracle_views(&cams))?;
    if s.test_views > 0 {
        let cams = orbit.random_cameras(s.test_views, s.height_jitter, cfg.seed.wrapping_add(1))?;
        write_views(&dir, "test", &cams, &scene.render_oracle_views(&cams))?;
    }
    log::info!("wrote {} points, {} training and {} test views to {}", s.points, s.views, s.test_views, dir.display());
    Ok(())
}

fn load_scene(path: &str) -> Result<SceneModel> {
    let p = Path::new(path);
    let input = at_path(p, read_ply(p))?;
    Ok(SceneModel::from_input(input)?)
}

/// Cameras and (when present) distance maps of a manifest.
fn load_views(path: &str) -> Result<Vec<(Camera, Option<DepthMap>)>> {
    let p = Path::new(path);
    let manifest = at_path(p, Manifest::read(p))?;
    let base = p.parent().unwrap_or(Path::new("."));
    manifest
        .resolve(base)
        .into_iter()
        .map(|(cam, dist)| {
            let camera = at_path(&cam, read_camera(&cam))?;
            let map = match dist {
                Some(d) => {
                    let map = at_path(&d, read_depth_pfm(&d))?;
                    if (map.width, map.height) != (camera.width, camera.height) {
                        return Err(CliError::Check(format!("{}: size does not match its camera", d.display())));
                    }
                    Some(map)
                }
                None => None,
            };
            Ok((camera, map))
        })
        .collect()
}

fn supervised(path: &str) -> Result<Vec<(Camera, DepthMap)>> {
    load_views(path)?
        .into_iter()
        .enumerate()
        .map(|(i, (c, d))| d.map(|d| (c, d)).ok_or_else(|| CliError::Check(format!("{path}: view {i} has no distance map"))))
        .collect()
}

fn train_cmd(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    cfg.command = "train".into();
    for (slot, v) in [
        (&mut cfg.paths.scene, a.scene),
        (&mut cfg.paths.manifest, a.manifest),
        (&mut cfg.paths.out, a.out),
    ] {
        if v.is_some() {
            *slot = v;
        }
    }
    if a.features.is_some() {
        cfg.paths.features = a.features;
        cfg.train.feature_mode = FeatureMode::Loaded;
    }
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    if a.max_steps.is_some() {
        t.max_steps = a.max_steps;
    }
    set(&mut t.batch_rays, a.batch_rays);
    if a.max_rays_per_view.is_some() {
        t.max_rays_per_view = a.max_rays_per_view;
    }
    set(&mut t.optimizer.learning_rate, a.lr);
    set(&mut t.hidden, a.hidden);
    set(&mut t.hidden_layers, a.hidden_layers);
    set(&mut t.features.k, a.k);
    set(&mut t.features.channels, a.channels);
    set(&mut t.feature_mode, a.feature_mode);
    set(&mut t.features.include_opacity, a.include_opacity);
    set(&mut t.features.pe_frequencies, a.pe_frequencies);
    set(&mut t.blend.mode, a.blend);
    set(&mut t.blend.t_train, a.t_train);
    set(&mut t.blend.t_test, a.t_test);
    set(&mut t.tile_px, a.tile_px);

    let scene = load_scene(required(&cfg.paths.scene, "scene")?)?;
    let loaded = match cfg.train.feature_mode {
        FeatureMode::Loaded => {
            let path = Path::new(required(&cfg.paths.features, "features")?);
            let (rows, channels, values) = at_path(path, parse_features(&read(path)?))?;
            if a.channels.is_none() {
                cfg.train.features.channels = channels;
            }
            Some(PerPointFeatures::new(FeatureMode::Loaded, rows, channels, values)?)
        }
        _ => None,
    };
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    let views: Vec<TrainingView> = supervised(required(&cfg.paths.manifest, "manifest")?)?
        .into_iter()
        .map(|(camera, distance)| TrainingView { camera, distance })
        .collect();
    let dir = output_dir(&cfg, required(&cfg.paths.out, "out")?)?;

    let start = Instant::now();
    let outcome = train(&scene, &views, &cfg.train, loaded.as_ref())?;
    let model = &outcome.model;
    let layout = &model.layout;
    write(
        &dir.join(CHECKPOINT_FILE),
        write_checkpoint(&model.mlp, layout.features.channels, layout.features.k, layout.blend.mode),
    )?;
    if model.features.mode != FeatureMode::None {
        let f = &model.features;
        write(&dir.join(FEATURES_FILE), write_features(f.rows, f.channels, &f.values))?;
    }
    let mut csv = String::from("step,loss\n");
    for (step, loss) in &outcome.loss_trace {
        csv.push_str(&format!("{step},{loss}\n"));
    }
    write(&dir.join("loss.csv"), csv)?;
    log::info!(
        "trained {} steps on {} rays ({} discarded) in {:.1}s, final loss {:.5}",
        outcome.loss_trace.len(),
        outcome.rays,
        outcome.discarded,
        start.elapsed().as_secs_f64(),
        outcome.loss_trace.last().map_or(f64::NAN, |l| l.1)
    );
    Ok(())
}

/// Loads a training output directory against `scene`.
fn load_model(dir: &Path, model_cfg: &RunConfig, scene: &SceneModel) -> Result<FieldModel> {
    let layout = model_cfg.train.layout();
    let path = dir.join(CHECKPOINT_FILE);
    let ckpt = at_path(&path, parse_checkpoint(&read(&path)?))?;
    if *ckpt.mlp.shape() != layout.shape()
        || ckpt.channels as usize != layout.features.channels
        || ckpt.k as usize != layout.features.k
        || ckpt.blend != layout.blend.mode
    {
        return Err(CliError::Check(format!("{}: checkpoint header disagrees with {CONFIG_FILE}", path.display())));
    }
    let features = match model_cfg.train.feature_mode {
        FeatureMode::None => PerPointFeatures::none(scene.len()),
        mode => {
            let path = dir.join(FEATURES_FILE);
            let (rows, channels, values) = at_path(&path, parse_features(&read(&path)?))?;
            PerPointFeatures::new(mode, rows, channels, values)?
        }
    };
    Ok(FieldModel::new(layout, ckpt.mlp, features)?)
}

fn render(mut cfg: RunConfig, a: RenderArgs, has_config: bool) -> Result<()> {
    cfg.command = "render".into();
    for (slot, v) in [
        (&mut cfg.paths.model, a.model),
        (&mut cfg.paths.scene, a.scene),
        (&mut cfg.paths.out, a.out),
    ] {
        if v.is_some() {
            *slot = v;
        }
    }
    if a.camera.is_some() || a.manifest.is_some() {
        cfg.paths.camera = a.camera;
        cfg.paths.manifest = a.manifest;
    }
    cfg.render.normals |= a.normals;
    let model_dir = PathBuf::from(required(&cfg.paths.model, "model")?);
    let model_cfg = at_path(&model_dir.join(CONFIG_FILE), RunConfig::read(&model_dir.join(CONFIG_FILE)))?;
    let t_test = a.t_test.unwrap_or(if has_config {
        cfg.train.blend.t_test
    } else {
        model_cfg.train.blend.t_test
    });
    cfg.train = model_cfg.train;
    cfg.train.blend.t_test = t_test;
    if cfg.paths.scene.is_none() {
        cfg.paths.scene = model_cfg.paths.scene.clone();
    }
    if t_test == 0 {
        return Err(usage("--t-test must be at least 1"));
    }

    let views: Vec<(String, Camera)> = match (&cfg.paths.camera, &cfg.paths.manifest) {
        (Some(c), _) => {
            let p = Path::new(c);
            let stem = p.file_stem().map_or("view".into(), |s| s.to_string_lossy().into_owned());
            vec![(stem, at_path(p, read_camera(p))?)]
        }
        (None, Some(m)) => load_views(m)?
            .into_iter()
            .enumerate()
            .map(|(i, (c, _))| (format!("{i:03}"), c))
            .collect(),
        (None, None) => return Err(usage("render needs --camera or --manifest")),
    };
    let scene = load_scene(required(&cfg.paths.scene, "scene")?)?;
    let model = load_model(&model_dir, &model_cfg, &scene)?;
    let field = model.bind(&scene)?;
    let dir = output_dir(&cfg, required(&cfg.paths.out, "out")?)?;

    let mut manifest = Manifest::default();
    for (name, camera) in &views {
        let map = render_distance(&scene, &field, camera, t_test)?;
        let cam_file = format!("{name}.json");
        let dist_file = format!("{name}_distance.pfm");
        write(&dir.join(&cam_file), camera_to_json(camera))?;
        at_path(&dir.join(&dist_file), write_depth_pfm(dir.join(&dist_file), &map))?;
        if cfg.render.normals {
            let normals = render_normals(&scene, &field, camera, t_test)?;
            write(&dir.join(format!("{name}_normals.pfm")), write_pfm(&normals_to_pfm(&normals)))?;
        }
        log::info!("{name}: {} of {} pixels valid", map.valid_count(), map.len());
        manifest.views.push(ViewEntry {
            camera: cam_file,
            distance: Some(dist_file),
        });
    }
    write(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).map_err(Error::from)?)
}

fn eval_depth(mut cfg: RunConfig, a: EvalDepthArgs) -> Result<()> {
    cfg.command = "eval-depth".into();
    if !a.pred.is_empty() || !a.gt.is_empty() {
        cfg.paths.pred = a.pred;
        cfg.paths.gt = a.gt;
    }
    if a.out.is_some() {
        cfg.paths.out = a.out;
    }
    set(&mut cfg.eval.align, a.align);
    set(&mut cfg.eval.delta_threshold, a.delta_threshold);
    if cfg.paths.pred.is_empty() || cfg.paths.pred.len() != cfg.paths.gt.len() {
        return Err(usage("eval-depth needs matching numbers of --pred and --gt maps"));
    }
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    for (p, g) in cfg.paths.pred.iter().zip(&cfg.paths.gt) {
        let pm = at_path(Path::new(p), read_depth_pfm(p))?;
        let gm = at_path(Path::new(g), read_depth_pfm(g))?;
        let (mut pv, gv) = at_path(Path::new(p), pm.paired_with(&gm))?;
        if cfg.eval.align == Align::MedianMad {
            pv = at_path(Path::new(p), scale_align(&pv, &gv))?;
        }
        pred.extend(pv);
        gt.extend(gv);
    }
    let m = ray_metrics_with_threshold(&pred, &gt, cfg.eval.delta_threshold)?;
    let csv = format!("{}\n{}\n", RayMetrics::CSV_HEADER, m.csv_row());
    print!("{csv}");
    if let Some(out) = &cfg.paths.out {
        let dir = output_dir(&cfg, out)?;
        write(&dir.join("depth_metrics.csv"), csv)?;
    }
    Ok(())
}

fn fuse(mut cfg: RunConfig, a: FuseArgs) -> Result<()> {
    cfg.command = "fuse".into();
    if a.manifest.is_some() {
        cfg.paths.manifest = a.manifest;
    }
    if a.out.is_some() {
        cfg.paths.out = a.out;
    }
    set(&mut cfg.fuse.voxel, a.voxel);
    if a.truncation.is_some() {
        cfg.fuse.truncation = a.truncation;
    }
    if let Some(b) = a.bounds {
        cfg.fuse.bounds = Some(b.try_into().map_err(|_| usage("--bounds takes six values"))?);
    }
    let voxel = cfg.fuse.voxel;
    let trunc = cfg.fuse.truncation.unwrap_or(4.0 * voxel);
    if !(voxel > 0.0 && trunc > 0.0) {
        return Err(usage("voxel size and truncation must be positive"));
    }
    let views = supervised(required(&cfg.paths.manifest, "manifest")?)?;
    let (min, max) = match cfg.fuse.bounds {
        Some(b) => (Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5])),
        None => observed_bounds(&views, trunc + voxel).ok_or_else(|| CliError::Check("no valid pixels to fuse".into()))?,
    };
    let dir = output_dir(&cfg, required(&cfg.paths.out, "out")?)?;
    let covering = TsdfVolume::covering(min, max, voxel)?;
    let mut volume = TsdfVolume::with_truncation(covering.origin, voxel, covering.dims, trunc)?;
    for (camera, map) in &views {
        volume.integrate(map, camera)?;
    }
    let mesh = volume.extract_mesh();
    log::info!(
        "fused {} views into {:?} voxels: {} vertices, {} triangles",
        views.len(),
        volume.dims,
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    write(&dir.join("mesh.ply"), write_mesh_ply(&mesh))?;
    write(&dir.join("volume.rldfv"), write_volume(&volume))
}

/// Bounding box of every back-projected valid pixel, padded by `pad`.
fn observed_bounds(views: &[(Camera, DepthMap)], pad: f64) -> Option<(Vec3, Vec3)> {
    let mut bounds: Option<(Vec3, Vec3)> = None;
    for (camera, map) in views {
        for (x, y) in camera.pixels() {
            if let Some(d) = map.get(x, y) {
                let p = camera.pixel_ray(x, y).at(d);
                bounds = Some(match bounds {
                    Some((lo, hi)) => (lo.inf(&p), hi.sup(&p)),
                    None => (p, p),
                });
            }
        }
    }
    bounds.map(|(lo, hi)| (lo.add_scalar(-pad), hi.add_scalar(pad)))
}

fn read_mesh(path: &str) -> Result<TriangleMesh> {
    let p = Path::new(path);
    let data = read(p)?;
    let is_obj = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj"));
    at_path(p, if is_obj { parse_obj(&data) } else { mesh_from_ply(&data) })
}

fn eval_mesh(mut cfg: RunConfig, a: EvalMeshArgs) -> Result<()> {
    cfg.command = "eval-mesh".into();
    if a.pred.is_some() {
        cfg.paths.pred = a.pred.into_iter().collect();
    }
    if a.gt.is_some() {
        cfg.paths.gt = a.gt.into_iter().collect();
    }
    if a.out.is_some() {
        cfg.paths.out = a.out;
    }
    set(&mut cfg.eval.mesh_samples, a.samples);
    set(&mut cfg.eval.mesh_threshold, a.threshold);
    let [pred, gt] = [&cfg.paths.pred, &cfg.paths.gt].map(|v| (v.len() == 1).then(|| v[0].clone()));
    let pred = read_mesh(required(&pred, "pred")?)?;
    let gt = read_mesh(required(&gt, "gt")?)?;
    let m = mesh_metrics(&pred, &gt, cfg.eval.mesh_samples, cfg.eval.mesh_threshold, cfg.seed)?;
    let csv = format!("{}\n{}\n", MeshMetrics::CSV_HEADER, m.csv_row());
    print!("{csv}");
    if let Some(out) = &cfg.paths.out {
        let dir = output_dir(&cfg, out)?;
        write(&dir.join("mesh_metrics.csv"), csv)?;
    }
    Ok(())
}

fn bench(mut cfg: RunConfig, a: BenchArgs) -> Result<()> {
    cfg.command = "intersect-bench".into();
    let b = &mut cfg.bench;
    set(&mut b.scenes, a.scenes);
    set(&mut b.points, a.points);
    set(&mut b.rays, a.rays);
    set(&mut b.t_values, a.t);
    set(&mut b.encoding, a.encoding);
    if a.out.is_some() {
        cfg.paths.out = a.out;
    }
    let b = cfg.bench.clone();
    if b.scenes == 0 || b.points < 2 || b.rays == 0 || b.t_values.is_empty() || b.t_values.contains(&0) {
        return Err(usage("bench needs scenes, rays and every T at least 1, and at least 2 points"));
    }
    let s = cfg.synth;
    let analytic = analytic_scene(s.scene);
    let c = analytic.centroid();
    let orbit = Orbit {
        target: [c.x, c.y, c.z],
        radius: s.orbit_radius,
        height: s.orbit_height,
        start_azimuth: 0.0,
        width: s.width,
        image_height: s.height,
        fov_y: s.fov_y,
    };
    let mut csv = String::from("scene,t,rays,mismatches,tiled_rays_per_s,exhaustive_rays_per_s\n");
    let mut mismatches = 0;
    for i in 0..b.scenes {
        let seed = cfg.seed.wrapping_add(i as u64);
        let scene = match b.encoding {
            Encoding::Points => SceneModel::from_points(analytic.sample_points(b.points, seed)?)?,
            Encoding::Gaussians => SceneModel::from_gaussians(analytic.make_gaussians(b.points, seed)?)?,
        };
        let camera = orbit.random_cameras(1, s.height_jitter, seed)?[0];
        let n = camera.pixel_count();
        // A fixed odd stride visits distinct pixels spread over the image.
        let pixels: Vec<(u32, u32)> = (0..b.rays)
            .map(|r| {
                let idx = (r * 7919) % n;
                ((idx % camera.width as usize) as u32, (idx / camera.width as usize) as u32)
            })
            .collect();
        for &t in &b.t_values {
            let start = Instant::now();
            let tiles = scene.tile_index(&camera, cfg.train.tile_px);
            let tiled: Vec<_> = pixels
                .iter()
                .map(|&(x, y)| tiles.candidates_for_pixel(scene.primitives(), x, y, t))
                .collect();
            let tiled_s = start.elapsed().as_secs_f64();
            let start = Instant::now();
            let exhaustive: Vec<_> = pixels
                .iter()
                .map(|&(x, y)| scene.primitives().candidates(&camera.pixel_ray(x, y), t))
                .collect();
            let exhaustive_s = start.elapsed().as_secs_f64();
            let bad = tiled.iter().zip(&exhaustive).filter(|(a, b)| a != b).count();
            mismatches += bad;
            csv.push_str(&format!(
                "{i},{t},{},{bad},{:.1},{:.1}\n",
                b.rays,
                b.rays as f64 / tiled_s,
                b.rays as f64 / exhaustive_s
            ));
        }
    }
    print!("{csv}");
    if let Some(out) = &cfg.paths.out {
        let dir = output_dir(&cfg, out)?;
        write(&dir.join("bench.csv"), &csv)?;
    }
    if mismatches > 0 {
        return Err(CliError::Check(format!("{mismatches} rays differ from the exhaustive scan")));
    }
    Ok(())
}
