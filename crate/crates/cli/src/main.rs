use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use facefit::fitter::{fit_multi, FitRecord, MultiFitRecord};
use facefit::image::{degrade, read_maps, write_maps, DEFAULT_VALID_EPS};
use facefit::landmarks::{
    predict_landmarks, select_landmark_vertices, write_predictions, LandmarkMap, ObservationSet, SelectionMode,
};
use facefit::model::{generate_synthetic_model, read_p2fm, write_obj, write_p2fm};
use facefit::raster::render;
use facefit::tracker::{
    evaluate, read_detections, read_landmarks_3d, read_tracks, track, write_ced_csv, write_detections, TrackOptions,
};
use facefit::{fit_image, Camera, Coefficients, CorrespondenceMaps, FitOptions, MorphableModel, PinholeCamera};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "facefit",
    version,
    about = "Morphable-model fitting from PNCC and offset images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic morphable model.
    GenModel(GenModelArgs),
    /// Render PNCC and offset images with a truth record.
    Render(RenderArgs),
    /// Fit camera and coefficients to one pair of maps.
    Fit(FitArgs),
    /// Fit one shape and per-image expressions to several pairs of maps.
    FitMulti(FitMultiArgs),
    /// Choose a mesh vertex for each annotated landmark.
    LandmarksTrain(LandmarksTrainArgs),
    /// Predict landmarks from a fit.
    LandmarksApply(LandmarksApplyArgs),
    /// Track landmarks through a sequence of maps.
    Track(TrackArgs),
    /// Score tracked landmarks against annotations.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenModelArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Target vertex count; the mesh is the nearest square grid.
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(3..))]
    vertices: u64,
    #[arg(long = "shape", default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    shape_count: u64,
    #[arg(long = "expr", default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    expr_count: u64,
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the mean mesh as OBJ.
    #[arg(long)]
    obj: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON file with `alpha` and `beta` arrays (a fit record works).
    #[arg(long, conflicts_with = "random")]
    coeffs: Option<PathBuf>,
    /// Sample coefficients from the model prior with this seed.
    #[arg(long)]
    random: Option<u64>,
    /// Sample yaw and pitch with this seed.
    #[arg(long, conflicts_with_all = ["yaw", "pitch"])]
    random_pose: Option<u64>,
    /// Largest sampled |yaw| in radians.
    #[arg(long, default_value_t = 0.6)]
    max_yaw: f64,
    /// Largest sampled |pitch| in radians.
    #[arg(long, default_value_t = 0.3)]
    max_pitch: f64,
    #[arg(long, allow_hyphen_values = true)]
    yaw: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pitch: Option<f64>,
    /// Camera distance from the model origin, model units.
    #[arg(long, default_value_t = 700.0)]
    distance: f64,
    /// Focal length in pixels; defaults to a face spanning about 60% of the image.
    #[arg(long)]
    focal: Option<f64>,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    /// Gaussian noise on both maps, in their own units.
    #[arg(long, default_value_t = 0.0)]
    noise: f32,
    /// Fraction of valid pixels knocked out.
    #[arg(long, default_value_t = 0.0)]
    holes: f32,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Output prefix for `.pncc.pfm`, `.offset.pfm` and `.truth.json`.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SolveFlags {
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long)]
    affine_only: bool,
    #[arg(long, default_value_t = 500)]
    subsample_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// PNCC-space match threshold; defaults to twice the median mesh edge.
    #[arg(long)]
    tau_match: Option<f64>,
    /// PNCC norm below which a pixel is background.
    #[arg(long, default_value_t = DEFAULT_VALID_EPS)]
    valid_eps: f32,
}

impl SolveFlags {
    fn options(&self) -> FitOptions {
        FitOptions {
            lambda: self.lambda,
            affine_only: self.affine_only,
            subsample_n: self.subsample_n,
            seed: self.seed,
            tau_match: self.tau_match,
            ..FitOptions::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Prefix of the `.pncc.pfm` / `.offset.pfm` pair.
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    solve: SolveFlags,
    /// Truth record to report coefficient errors against.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct FitMultiArgs {
    #[arg(long, num_args = 1.., required = true)]
    maps: Vec<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    solve: SolveFlags,
    /// Truth records, one per map prefix, to report errors against.
    #[arg(long, num_args = 1..)]
    truth: Vec<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct LandmarksTrainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Fit records; observation frame `k` refers to the `k`-th file.
    #[arg(long, num_args = 1.., required = true)]
    fits: Vec<PathBuf>,
    /// Lines of `frame name u v visible`.
    #[arg(long)]
    observations: PathBuf,
    /// Landmark names spanning the interocular distance.
    #[arg(long, num_args = 2, value_names = ["LEFT", "RIGHT"])]
    interocular: Option<Vec<String>>,
    /// Average only over frames where the landmark is visible.
    #[arg(long)]
    visible_only: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct LandmarksApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    model: PathBuf,
    /// Map prefixes in frame order.
    #[arg(long, num_args = 1.., required = true)]
    frames: Vec<PathBuf>,
    /// Lines of `frame x y w h`; frames may repeat or be missing.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    #[command(flatten)]
    solve: SolveFlags,
    /// Crop margin on each side, as a fraction of the box size.
    #[arg(long, default_value_t = facefit::tracker::DEFAULT_CROP_MARGIN)]
    crop_margin: f64,
    /// Odd moving-average window; 1 disables smoothing.
    #[arg(long, default_value_t = facefit::tracker::DEFAULT_SMOOTHING_WINDOW)]
    window: usize,
    /// Also write the resolved per-frame boxes.
    #[arg(long)]
    boxes_out: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Output of `track`.
    #[arg(long)]
    tracks: PathBuf,
    /// Landmark map naming the landmarks and the interocular pair.
    #[arg(long)]
    landmarks: PathBuf,
    /// Lines of `frame name u v visible`.
    #[arg(long)]
    truth_2d: PathBuf,
    /// Lines of `frame name x y z`.
    #[arg(long)]
    truth_3d: Option<PathBuf>,
    #[arg(long)]
    ced_2d: Option<PathBuf>,
    #[arg(long)]
    ced_3d: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenModel(a) => gen_model(a),
        Command::Render(a) => render_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::FitMulti(a) => fit_multi_cmd(a),
        Command::LandmarksTrain(a) => landmarks_train(a),
        Command::LandmarksApply(a) => landmarks_apply(a),
        Command::Track(a) => track_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).with_context(|| format!("cannot parse {}", path.display()))
}

fn load_model(path: &Path) -> Result<MorphableModel> {
    read_p2fm(open(path)?).with_context(|| format!("model: cannot read {}", path.display()))
}

fn load_maps(prefix: &Path, valid_eps: f32) -> Result<CorrespondenceMaps> {
    read_maps(prefix, valid_eps).with_context(|| format!("image: cannot read maps {}", prefix.display()))
}

fn truth_path(prefix: &Path) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

fn check_dims(model: &MorphableModel, coeffs: &Coefficients, source: &Path) -> Result<()> {
    if coeffs.alpha.len() != model.shape_count() || coeffs.beta.len() != model.expr_count() {
        bail!(
            "cli: {}: coefficient dimensions ({}, {}) do not match the model ({}, {})",
            source.display(),
            coeffs.alpha.len(),
            coeffs.beta.len(),
            model.shape_count(),
            model.expr_count()
        );
    }
    Ok(())
}

fn relative_error(estimate: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

fn gen_model(a: GenModelArgs) -> Result<()> {
    let model = generate_synthetic_model(
        a.seed,
        a.vertices as usize,
        a.shape_count as usize,
        a.expr_count as usize,
    )
    .context("model")?;
    let mut w = create(&a.out)?;
    write_p2fm(&model, &mut w).context("model")?;
    w.flush()?;
    if let Some(obj) = &a.obj {
        let mut w = create(obj)?;
        write_obj(model.mean_vertices(), model.topology(), &mut w)?;
    }
    println!(
        "wrote {} vertices, {} triangles, K_s={}, K_e={}",
        model.vertex_count(),
        model.topology().triangles().len(),
        model.shape_count(),
        model.expr_count()
    );
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let coeffs = match (&a.coeffs, a.random) {
        (Some(path), _) => {
            let c: Coefficients = read_json(path)?;
            check_dims(&model, &c, path)?;
            c
        }
        (None, Some(seed)) => Coefficients::sample(&model, &mut ChaCha8Rng::seed_from_u64(seed)),
        (None, None) => Coefficients::zeros(model.shape_count(), model.expr_count()),
    };
    let (yaw, pitch) = match a.random_pose {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let yaw = if a.max_yaw > 0.0 {
                rng.random_range(-a.max_yaw..=a.max_yaw)
            } else {
                0.0
            };
            let pitch = if a.max_pitch > 0.0 {
                rng.random_range(-a.max_pitch..=a.max_pitch)
            } else {
                0.0
            };
            (yaw, pitch)
        }
        None => (a.yaw.unwrap_or(0.0), a.pitch.unwrap_or(0.0)),
    };
    let focal = a
        .focal
        .unwrap_or_else(|| 0.6 * a.width.min(a.height) as f64 * a.distance / model.diameter());
    let camera = PinholeCamera::facing(yaw, pitch, a.distance, focal, a.width, a.height).context("camera")?;
    let mut maps = render(&model, &coeffs, &camera).context("raster")?;
    if a.noise > 0.0 || a.holes > 0.0 {
        maps = degrade(&maps, a.noise, a.holes, a.noise_seed).context("image")?;
    }
    write_maps(&maps, &a.out).context("image")?;
    let truth = FitRecord::from(&facefit::FitResult {
        camera: Camera::Pinhole(camera),
        image_size: (a.width, a.height),
        coeffs,
        constraint_count: 0,
        residual_rms: 0.0,
        diagnostics: Default::default(),
    });
    write_json(&truth_path(&a.out), &truth)?;
    println!(
        "rendered {}x{} at yaw {yaw:.4} pitch {pitch:.4}: {} valid pixels",
        a.width,
        a.height,
        maps.valid_indices().len()
    );
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let truth: Option<FitRecord> = a.truth.as_deref().map(read_json).transpose()?;
    if let (Some(t), Some(path)) = (&truth, &a.truth) {
        check_dims(
            &model,
            &Coefficients {
                alpha: t.alpha.clone(),
                beta: t.beta.clone(),
            },
            path,
        )?;
    }
    let maps = load_maps(&a.maps, a.solve.valid_eps)?;
    let fit = fit_image(&maps, &model, &a.solve.options())?;
    write_json(&a.out, &FitRecord::from(&fit))?;
    println!(
        "constraints {} residual_rms {:.6e} camera_rmse {:.6e}",
        fit.constraint_count, fit.residual_rms, fit.diagnostics.camera_rmse
    );
    if let Some(t) = truth {
        println!(
            "alpha_error {:.6e} beta_error {:.6e}",
            relative_error(&fit.coeffs.alpha, &t.alpha),
            relative_error(&fit.coeffs.beta, &t.beta)
        );
    }
    Ok(())
}

fn fit_multi_cmd(a: FitMultiArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    if !a.truth.is_empty() && a.truth.len() != a.maps.len() {
        bail!("cli: {} truth records for {} map prefixes", a.truth.len(), a.maps.len());
    }
    let truths = a
        .truth
        .iter()
        .map(|p| {
            let t: FitRecord = read_json(p)?;
            check_dims(
                &model,
                &Coefficients {
                    alpha: t.alpha.clone(),
                    beta: t.beta.clone(),
                },
                p,
            )?;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let maps = a
        .maps
        .iter()
        .map(|p| load_maps(p, a.solve.valid_eps))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_multi(&maps, &model, &a.solve.options())?;
    write_json(&a.out, &MultiFitRecord::from(&fit))?;
    println!("images {} residual_rms {:.6e}", maps.len(), fit.residual_rms);
    if let Some(first) = truths.first() {
        println!(
            "alpha_error {:.6e}",
            relative_error(&fit.coefficients.alpha, &first.alpha)
        );
        for (n, t) in truths.iter().enumerate() {
            println!(
                "beta_error[{n}] {:.6e}",
                relative_error(&fit.coefficients.betas[n], &t.beta)
            );
        }
    }
    Ok(())
}

fn landmarks_train(a: LandmarksTrainArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let records = a
        .fits
        .iter()
        .map(|p| {
            let r: FitRecord = read_json(p)?;
            r.to_fit_result().with_context(|| format!("camera: {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let obs = ObservationSet::read(open(&a.observations)?).context("landmarks")?;
    let mut fits = Vec::with_capacity(obs.frames.len());
    for o in &obs.frames {
        let fit = records.get(o.frame).with_context(|| {
            format!(
                "landmarks: observation frame {} but only {} fits given",
                o.frame,
                records.len()
            )
        })?;
        fits.push(fit.clone());
    }
    let mode = if a.visible_only {
        SelectionMode::VisibleOnly
    } else {
        SelectionMode::AllFrames
    };
    let mut map = select_landmark_vertices(&fits, &obs.frames, &obs.names, &model, mode).context("landmarks")?;
    if let Some(pair) = &a.interocular {
        map = map.with_interocular(&pair[0], &pair[1]).context("landmarks")?;
    }
    let mut w = create(&a.out)?;
    map.write(&mut w)?;
    w.flush()?;
    println!("selected {} landmarks from {} frames", map.len(), fits.len());
    Ok(())
}

fn load_landmark_map(path: &Path, model: Option<&MorphableModel>) -> Result<LandmarkMap> {
    let map = LandmarkMap::read(open(path)?).with_context(|| format!("landmarks: {}", path.display()))?;
    if let Some(m) = model {
        map.check_vertices(m.vertex_count()).context("landmarks")?;
    }
    Ok(map)
}

fn landmarks_apply(a: LandmarksApplyArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let map = load_landmark_map(&a.landmarks, Some(&model))?;
    let record: FitRecord = read_json(&a.fit)?;
    let fit = record.to_fit_result().context("camera")?;
    let predictions = predict_landmarks(&fit, &map, &model).context("landmarks")?;
    let mut w = create(&a.out)?;
    write_predictions(&mut w, &map, &predictions)?;
    w.flush()?;
    Ok(())
}

fn track_cmd(a: TrackArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let map = load_landmark_map(&a.landmarks, Some(&model))?;
    let frames = a
        .frames
        .iter()
        .map(|p| load_maps(p, a.solve.valid_eps))
        .collect::<Result<Vec<_>>>()?;
    let detections = read_detections(open(&a.detections)?, Some(frames.len())).context("tracker")?;
    let options = TrackOptions {
        fit: a.solve.options(),
        crop_margin: a.crop_margin,
        window: a.window,
    };
    let seq = track(&frames, &detections, &model, &map, &options).context("tracker")?;
    for (f, failure) in seq.failures.iter().enumerate() {
        if let Some(msg) = failure {
            log::warn!("frame {f} interpolated: {msg}");
        }
    }
    let mut w = create(&a.out)?;
    seq.write_landmarks(&mut w, &map)?;
    w.flush()?;
    if let Some(path) = &a.boxes_out {
        let boxes: Vec<Vec<_>> = seq.boxes.iter().map(|b| vec![*b]).collect();
        let mut w = create(path)?;
        write_detections(&mut w, &boxes)?;
        w.flush()?;
    }
    let failed = seq.failures.iter().filter(|f| f.is_some()).count();
    println!("tracked {} frames, {failed} interpolated", seq.frame_count());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let map = load_landmark_map(&a.landmarks, None)?;
    let interocular = map
        .interocular()
        .context("eval: the landmark map has no `@interocular` pair")?;
    let tracks = read_tracks(open(&a.tracks)?, map.names()).context("tracker")?;
    let truth = ObservationSet::read(open(&a.truth_2d)?)
        .and_then(|o| o.reordered(map.names()))
        .context("landmarks")?;
    let truth_3d = a
        .truth_3d
        .as_deref()
        .map(|p| read_landmarks_3d(open(p)?, map.names()).context("tracker"))
        .transpose()?;
    let report = evaluate(
        &tracks.points_2d,
        &tracks.points_3d,
        &truth.frames,
        truth_3d.as_deref(),
        interocular,
    )
    .context("tracker")?;
    let mut w = create(&a.out)?;
    report.write_table(&mut w)?;
    w.flush()?;
    if let Some(path) = &a.ced_2d {
        let mut w = create(path)?;
        write_ced_csv(&mut w, &report.ced_2d)?;
        w.flush()?;
    }
    if let (Some(path), Some(curve)) = (&a.ced_3d, &report.ced_3d) {
        let mut w = create(path)?;
        write_ced_csv(&mut w, curve)?;
        w.flush()?;
    }
    match report.mean_2d() {
        Some(m) => println!("mean normalized 2D error {m:.6}"),
        None => println!("no frame had a usable interocular distance"),
    }
    if let Some(m) = report.mean_3d() {
        println!("mean 3D error {m:.6}");
    }
    Ok(())
}
