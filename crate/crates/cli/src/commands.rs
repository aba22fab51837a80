use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gaussblend::anim::gba::{load_avatar, save_avatar};
use gaussblend::anim::{read_frames, BlendshapeAvatar, RuntimeAvatar};
use gaussblend::bench::{run_bench, Stage};
use gaussblend::dataset::{write_synthetic, Dataset, SCENARIO_FILE};
use gaussblend::eval::self_reenact_eval;
use gaussblend::init::InitConfig;
use gaussblend::math::Vec3;
use gaussblend::mesh::io::load_mesh_model;
use gaussblend::render::image::{save_png, write_npy};
use gaussblend::render::{render_reference, render_tiled};
use gaussblend::synth::{generate_synthetic, initial_avatar, SyntheticScenario};
use gaussblend::train::{save_checkpoint, write_log, LogRow, TrainConfig, Trainer};

use crate::{usage, BenchArgs, EvalArgs, InitArgs, RenderArgs, Renderer, SynthArgs, TrainArgs};

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| gaussblend::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let v = serde_json::from_str(&text).map_err(gaussblend::Error::from)?;
    Ok(v)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut s: SyntheticScenario = match &a.spec {
        Some(p) => read_json(p).with_context(|| format!("reading scenario {}", p.display()))?,
        None => SyntheticScenario::default(),
    };
    if let Some(f) = a.frames {
        s.frame_count = f;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    s.validate()?;
    let data = generate_synthetic(&s)?;
    create_dir(&a.out)?;
    write_synthetic(&a.out, &s, &data)?;
    println!(
        "wrote {}: {} frames at {}x{}, K={} J={} N={} mouth={}",
        a.out.display(),
        data.frames.len(),
        s.width,
        s.height,
        data.model.blendshape_count(),
        data.model.joint_count(),
        data.ground_truth.len(),
        data.ground_truth.mouth_len()
    );
    Ok(())
}

pub fn init(a: InitArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => InitConfig::load(p)?,
        None => InitConfig::default(),
    };
    let model = load_mesh_model(&a.model)?;
    let avatar = initial_avatar(&model, &cfg)?;
    save_avatar(&avatar, &a.out)?;
    println!(
        "wrote {}: N={} mouth={} K={} SH degree {}",
        a.out.display(),
        avatar.len(),
        avatar.mouth_len(),
        avatar.blendshape_count(),
        avatar.sh_degree()
    );
    Ok(())
}

fn init_config_for(a: &TrainArgs) -> Result<InitConfig> {
    if let Some(p) = &a.init_config {
        return Ok(InitConfig::load(p)?);
    }
    let scenario = a.dataset.join(SCENARIO_FILE);
    if scenario.exists() {
        let s: SyntheticScenario = read_json(&scenario)?;
        return Ok(s.init);
    }
    Ok(InitConfig::default())
}

fn read_log(path: &Path, upto: usize) -> Result<Vec<LogRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for row in r.deserialize::<LogRow>() {
        let row = row.with_context(|| format!("malformed metrics log {}", path.display()))?;
        if row.iteration <= upto {
            rows.push(row);
        }
    }
    Ok(rows)
}

fn metrics_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".metrics.csv");
    PathBuf::from(s)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(n) = a.iterations {
        cfg.optimizer.iterations = n;
    }
    cfg.validate()?;
    let ds = Dataset::open(&a.dataset)?;
    let f = ds.frames.len();
    if cfg.holdout_frames >= f {
        return Err(usage(format!(
            "dataset has {f} frames; holdout_frames = {} leaves none to train on",
            cfg.holdout_frames
        )));
    }
    let split = f - cfg.holdout_frames;
    let train = ds.load_targets(0..split)?;
    let heldout = ds.load_targets(split..f)?;
    let metrics = a.metrics.clone().unwrap_or_else(|| metrics_path(&a.out));

    let mut t = match &a.resume {
        Some(p) => Trainer::resume(&ds.model, p, cfg)?,
        None => {
            let avatar: BlendshapeAvatar = match &a.init {
                Some(p) => load_avatar(p)?,
                None => initial_avatar(&ds.model, &init_config_for(&a)?)?,
            };
            Trainer::new(&ds.model, avatar, cfg)?
        }
    };
    let mut rows = if a.resume.is_some() {
        read_log(&metrics, t.iteration)?
    } else {
        Vec::new()
    };
    let every = t.cfg.checkpoint_interval;
    let total = t.cfg.optimizer.iterations;
    let out = a.out.clone();
    t.run(&train, &heldout, Some(&out), |row| {
        rows.push(row.clone());
        if row.iteration == total || (every > 0 && row.iteration % every == 0) {
            write_log(&metrics, &rows)?;
        }
        if let Some(p) = row.heldout_psnr {
            log::info!("iteration {}: loss {:.5}, held-out PSNR {p:.2} dB", row.iteration, row.total);
        }
        Ok(())
    })?;
    save_checkpoint(&t, &out)?;
    write_log(&metrics, &rows)?;
    let last = rows.last();
    println!(
        "trained {} iterations: N={} final loss {} held-out PSNR {}; wrote {} and {}",
        t.iteration,
        t.avatar.len(),
        last.map_or("-".into(), |r| format!("{:.5}", r.total)),
        rows.iter()
            .rev()
            .find_map(|r| r.heldout_psnr)
            .map_or("-".into(), |p| format!("{p:.2} dB")),
        out.display(),
        metrics.display()
    );
    Ok(())
}

pub fn render(a: RenderArgs) -> Result<()> {
    if ![8, 16, 32].contains(&a.tile_size) {
        return Err(usage("--tile-size must be 8, 16 or 32"));
    }
    let avatar = load_avatar(&a.avatar)?;
    let frames = read_frames(&a.frames)?;
    for (i, f) in frames.iter().enumerate() {
        f.validate(avatar.blendshape_count(), avatar.joint_count())
            .with_context(|| format!("frame {i}"))?;
    }
    create_dir(&a.out)?;
    for (i, f) in frames.iter().enumerate() {
        let g = avatar.synthesize_frame(f)?;
        let r = match a.renderer {
            Renderer::Tiled => render_tiled(&g, &f.camera, [0.0; 3], a.tile_size)?,
            Renderer::Reference => render_reference(&g, &f.camera, [0.0; 3])?,
        };
        save_png(&a.out.join(format!("{i:06}.png")), r.width, r.height, &r.color)?;
        if a.npy {
            write_npy(
                &a.out.join(format!("{i:06}.npy")),
                &[r.height as u64, r.width as u64, 3],
                &r.color,
            )?;
        }
    }
    println!("rendered {} frames into {}", frames.len(), a.out.display());
    Ok(())
}

/// Center and radius of the neutral Gaussians' bounding box.
pub fn avatar_bounds(a: &BlendshapeAvatar) -> (Vec3, f64) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for i in 0..a.len() {
        let p = Vec3::from(a.b0.position(i));
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    if a.is_empty() {
        return (Vec3::zeros(), 1.0);
    }
    ((lo + hi) * 0.5, (0.5 * (hi - lo).norm()).max(1e-6))
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let stage: Stage = a.stage.parse().map_err(|e: gaussblend::Error| usage(e.to_string()))?;
    if a.frames == 0 {
        return Err(usage("--frames must be at least 1"));
    }
    let (rt, center, radius) = match &a.avatar {
        Some(p) => {
            let av = load_avatar(p)?;
            let (c, r) = avatar_bounds(&av);
            (RuntimeAvatar::from_avatar(&av), c, r)
        }
        None => (
            RuntimeAvatar::random(a.gaussians, a.blendshapes, 3, a.sh_degree, a.seed)?,
            Vec3::zeros(),
            0.1,
        ),
    };
    let report = run_bench(&rt, a.frames, stage, a.seed, (a.width, a.height), center, 3.0 * radius)?;
    print!("{}", report.summary());
    println!("reference figure for comparison: 370 updates/s for 70k Gaussians on a GPU");
    if let Some(p) = &a.json {
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    if a.holdout == 0 {
        return Err(usage("--holdout must be at least 1; an empty evaluation has no report"));
    }
    let avatar = load_avatar(&a.avatar)?;
    let ds = Dataset::open(&a.dataset)?;
    let f = ds.frames.len();
    if a.holdout > f {
        return Err(usage(format!("--holdout {} exceeds the {f} frames of the dataset", a.holdout)));
    }
    let frames = ds.load_targets(f - a.holdout..f)?;
    let report = self_reenact_eval(&avatar, &frames, [0.0; 3], a.tile_size)?;
    let json = a.out.with_extension("json");
    let csv = a.out.with_extension("csv");
    std::fs::write(&json, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", json.display()))?;
    std::fs::write(&csv, report.to_csv()?).with_context(|| format!("writing {}", csv.display()))?;
    println!(
        "{} frames: mean PSNR {:.3} dB, mean SSIM {:.5}; wrote {} and {}",
        report.frame_count,
        report.mean_psnr,
        report.mean_ssim,
        json.display(),
        csv.display()
    );
    Ok(())
}
