use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};

use robustsplat::camera::read_cameras;
use robustsplat::eval::ViewRecord;
use robustsplat::grad::{check_fixture, check_gradients};
use robustsplat::optim::{self, write_loss_csv};
use robustsplat::robust::{absorb_color_into_sh, mean_color_params, read_params, write_params, ParamsSidecar};
use robustsplat::synth::{perturb_scene, write_scene};
use robustsplat::{
    blurriness, generate_dataset, generate_scene, orbit_cameras, psnr, read_ply, render_mc_oracle, select_test_views,
    ssim, ColorParams, ConflictMode, Dataset, ImageBuffer, Mechanisms, PerImageParams, Scene,
};

use crate::config::Config;
use crate::{AdaptArgs, CheckArgs, EvalArgs, ExportArgs, FitArgs, ModeArg, Reference, RenderArgs, SynthArgs};

/// A command failure, split by exit code: bad input (1) or a failure while running (2).
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invalid(e) | Failure::Runtime(e) => e,
        }
    }
}

trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

type CmdResult = Result<(), Failure>;

pub fn parse_mechanisms(s: &str) -> Result<Mechanisms, String> {
    match s.trim() {
        "all" => return Ok(Mechanisms::ALL),
        "none" => return Ok(Mechanisms::NONE),
        _ => {}
    }
    let mut m = Mechanisms::NONE;
    for part in s.split(',').map(str::trim) {
        match part {
            "pose" => m.pose = true,
            "blur" | "motion_blur" => m.motion_blur = true,
            "defocus" => m.defocus = true,
            "color" => m.color = true,
            other => return Err(format!("unknown mechanism `{other}` (expected all, none, pose, blur, defocus, color)")),
        }
    }
    Ok(m)
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    let cfg = Config::load(path).invalid()?;
    cfg.validate().invalid()?;
    Ok(cfg)
}

fn load_scene(path: &Path) -> Result<Scene, Failure> {
    read_ply(path).with_context(|| format!("reading scene {}", path.display())).invalid()
}

fn load_dataset(dir: &Path) -> Result<Dataset, Failure> {
    Dataset::read(dir).with_context(|| format!("reading dataset {}", dir.display())).invalid()
}

fn load_sidecar(path: &Path) -> Result<ParamsSidecar, Failure> {
    read_params(path).with_context(|| format!("reading params {}", path.display())).invalid()
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).runtime()
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display())).runtime()
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let mut cfg = Config::load(a.config.config.as_deref()).invalid()?;
    if let Some(seed) = a.seed {
        cfg.synth.seed = seed;
        cfg.corruption.seed = seed;
    }
    if let Some(n) = a.primitives {
        cfg.synth.primitives = n;
    }
    if let Some(n) = a.views {
        cfg.synth.views = n;
    }
    if let Some(n) = a.size {
        cfg.synth.width = n;
        cfg.synth.height = n;
    }
    cfg.validate().invalid()?;
    let s = cfg.synth;
    let truth = generate_scene(s.primitives, s.extent, s.sh_degree, s.seed);
    let cams = orbit_cameras(s.views, s.extent, 0.0, s.width, s.height);
    let dataset = generate_dataset(&truth, &cams, &cfg.corruption, &cfg.render);
    create_dir(&a.out)?;
    dataset.write(&a.out).runtime()?;
    write_scene(&a.out, "truth.ply", &truth).runtime()?;
    let init = perturb_scene(&truth, s.init_noise * s.extent, s.seed.wrapping_add(1));
    write_scene(&a.out, "init.ply", &init).runtime()?;
    println!("wrote {} views of {} primitives to {}", s.views, s.primitives, a.out.display());
    Ok(())
}

pub fn fit(a: FitArgs) -> CmdResult {
    let mut cfg = load_config(a.config.config.as_deref())?;
    if let Some(n) = a.iterations {
        cfg.fit.iterations = n;
    }
    if let Some(seed) = a.seed {
        cfg.fit.seed = seed;
    }
    if let Some(m) = a.mechanisms {
        cfg.fit.mechanisms = m;
    }
    cfg.validate().invalid()?;
    let data = load_dataset(&a.data)?;
    let init_path = a.init.unwrap_or_else(|| a.data.join("init.ply"));
    let init = load_scene(&init_path)?;
    let cams = data.pinhole_cameras();
    let train: Vec<usize> = (0..cams.len()).filter(|i| a.holdout_every == 0 || i % a.holdout_every != 0).collect();
    if train.is_empty() {
        return Err(Failure::Invalid(anyhow!("--holdout-every {} leaves no training views", a.holdout_every)));
    }
    let train_cams: Vec<_> = train.iter().map(|&i| cams[i].clone()).collect();
    let train_images: Vec<_> = train.iter().map(|&i| data.images[i].clone()).collect();
    let result = optim::fit(&init, &train_cams, &train_images, &cfg.fit, &cfg.render).map_err(|e| match e {
        optim::FitError::Metric(_) => Failure::Runtime(e.into()),
        _ => Failure::Invalid(e.into()),
    })?;
    create_dir(&a.out)?;
    robustsplat::write_ply(&result.scene, a.out.join("scene.ply")).runtime()?;
    let sidecar: ParamsSidecar = train.iter().map(|&i| data.cameras[i].id.clone()).zip(result.params.iter().copied()).collect();
    write_params(a.out.join("params.json"), &sidecar).runtime()?;
    write_loss_csv(a.out.join("loss.csv"), &result.losses).runtime()?;
    let last = result.losses.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "fit {} steps on {} views: final loss {last:.6}, {} primitives, wrote {}",
        cfg.fit.iterations,
        train.len(),
        result.scene.len(),
        a.out.display()
    );
    Ok(())
}

pub fn render(a: RenderArgs) -> CmdResult {
    let cfg = load_config(a.config.config.as_deref())?;
    let scene = load_scene(&a.scene)?;
    let records = read_cameras(&a.cameras).with_context(|| format!("reading cameras {}", a.cameras.display())).invalid()?;
    let sidecar = match &a.params {
        Some(p) => load_sidecar(p)?,
        None => ParamsSidecar::new(),
    };
    if a.mc_oracle == Some(0) {
        return Err(Failure::Invalid(anyhow!("--mc-oracle needs at least 1 sample")));
    }
    let selected: Vec<_> = records.iter().filter(|r| a.view.as_ref().is_none_or(|v| *v == r.id)).collect();
    if selected.is_empty() {
        return Err(Failure::Invalid(anyhow!("no camera with id {}", a.view.unwrap_or_default())));
    }
    create_dir(&a.out)?;
    for rec in selected {
        let cam = rec.to_camera().invalid()?;
        let params = sidecar.get(&rec.id).copied().unwrap_or_else(PerImageParams::identity);
        let img = match a.mc_oracle {
            Some(n) => render_mc_oracle(&scene, &cam, &params, &cfg.render, n, a.seed),
            None => robustsplat::render(&scene, &cam, &params, &cfg.render),
        };
        img.write_png(a.out.join(format!("{}.png", rec.id))).runtime()?;
        if a.npy {
            img.write_npy(a.out.join(format!("{}.npy", rec.id))).runtime()?;
        }
    }
    Ok(())
}

fn reference_images(data: &Dataset, which: Reference) -> &[ImageBuffer] {
    match which {
        Reference::Images => &data.images,
        Reference::Sharp => &data.sharp,
    }
}

fn indices_of(data: &Dataset, ids: &[String]) -> Result<Vec<usize>, Failure> {
    if ids.is_empty() {
        return Ok((0..data.cameras.len()).collect());
    }
    let index = robustsplat::synth::index_by_id(&data.cameras);
    ids.iter().map(|id| index.get(id).copied().ok_or_else(|| Failure::Invalid(anyhow!("no view with id {id}")))).collect()
}

pub fn adapt(a: AdaptArgs) -> CmdResult {
    let mut cfg = load_config(a.config.config.as_deref())?;
    if let Some(n) = a.steps {
        cfg.adapt.steps = n;
    }
    cfg.validate().invalid()?;
    let scene = load_scene(&a.scene)?;
    let data = load_dataset(&a.data)?;
    let start = match &a.train_params {
        Some(p) => {
            let colors: Vec<ColorParams> = load_sidecar(p)?.values().map(|v| v.color).collect();
            mean_color_params(&colors)
        }
        None => ColorParams::identity(),
    };
    let targets = reference_images(&data, a.target);
    let cams = data.pinhole_cameras();
    let mut out = ParamsSidecar::new();
    println!("{:<12} {:>12} {:>12}", "view", "psnr_before", "psnr_after");
    for i in indices_of(&data, &a.views)? {
        let r = optim::test_time_adapt(&scene, &cams[i], &targets[i], &start, &cfg.adapt, &cfg.render).runtime()?;
        println!("{:<12} {:>12.3} {:>12.3}", data.cameras[i].id, r.psnr_before, r.psnr_after);
        out.insert(data.cameras[i].id.clone(), r.params);
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_params(&a.out, &out).runtime()
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let mut cfg = load_config(a.config.config.as_deref())?;
    let rule = &mut cfg.selection;
    if let Some(k) = a.k {
        rule.k = k;
    }
    if let Some(d) = a.min_dist {
        rule.min_dist = d;
    }
    if let Some(ang) = a.min_angle {
        rule.min_angle = ang;
    }
    if let Some(m) = a.conflict_mode {
        rule.mode = match m {
            ModeArg::Conjunctive => ConflictMode::Conjunctive,
            ModeArg::Disjunctive => ConflictMode::Disjunctive,
        };
    }
    cfg.validate().invalid()?;
    let scene = load_scene(&a.scene)?;
    let data = load_dataset(&a.data)?;
    let sidecar = match &a.params {
        Some(p) => load_sidecar(p)?,
        None => ParamsSidecar::new(),
    };
    let cams = data.pinhole_cameras();
    let refs = reference_images(&data, a.reference);
    let views: Vec<ViewRecord> = data
        .cameras
        .iter()
        .zip(&cams)
        .zip(&data.images)
        .map(|((rec, cam), img)| ViewRecord {
            id: rec.id.clone(),
            center: cam.center(),
            axis: cam.optical_axis(),
            score: blurriness(img),
            selected: false,
        })
        .collect();
    let chosen: std::collections::BTreeSet<String> = select_test_views(&views, &cfg.selection).into_iter().map(|v| v.id).collect();
    let mut csv = String::from("id,psnr,ssim,blurriness,selected\n");
    let (mut sum_psnr, mut sum_ssim) = (0.0, 0.0);
    for (i, v) in views.iter().enumerate() {
        let params = sidecar.get(&v.id).copied().unwrap_or_else(PerImageParams::identity);
        let img = robustsplat::render(&scene, &cams[i], &params, &cfg.render);
        let p = psnr(&img, &refs[i]).runtime()?;
        let s = ssim(&img, &refs[i]).runtime()?;
        let selected = chosen.contains(&v.id);
        if selected {
            sum_psnr += p;
            sum_ssim += s;
        }
        writeln!(csv, "{},{p:.6},{s:.6},{:.6},{selected}", v.id, v.score).expect("writing to a String");
    }
    match &a.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    let n = chosen.len().max(1) as f64;
    eprintln!("{} test views selected: mean psnr {:.3} dB, mean ssim {:.4}", chosen.len(), sum_psnr / n, sum_ssim / n);
    Ok(())
}

pub fn check(a: CheckArgs) -> CmdResult {
    if a.primitives == 0 || a.size < 2 {
        return Err(Failure::Invalid(anyhow!("--primitives must be at least 1 and --size at least 2")));
    }
    let (mut scene, cam, params) = check_fixture(a.primitives, a.size, a.seed);
    if let Some(path) = &a.scene {
        scene = load_scene(path)?;
    }
    let report = check_gradients(&scene, &cam, &params, &robustsplat::RenderOptions::default(), a.adjoint_seed);
    print!("{report}");
    if report.passed() {
        println!("gradient check passed");
        Ok(())
    } else {
        Err(Failure::Invalid(anyhow!("gradient check failed")))
    }
}

pub fn export(a: ExportArgs) -> CmdResult {
    let mut scene = load_scene(&a.scene)?;
    let sidecar = load_sidecar(&a.params)?;
    let color = match &a.view {
        Some(id) => sidecar.get(id).ok_or_else(|| Failure::Invalid(anyhow!("no params for view {id}")))?.color,
        None => {
            if sidecar.is_empty() {
                return Err(Failure::Invalid(anyhow!("params file has no entries")));
            }
            mean_color_params(&sidecar.values().map(|p| p.color).collect::<Vec<_>>())
        }
    };
    for p in &mut scene.primitives {
        p.sh = absorb_color_into_sh(&p.sh, &color);
    }
    robustsplat::write_ply(&scene, &a.out).runtime()?;
    println!("wrote {} primitives with absorbed color to {}", scene.len(), a.out.display());
    Ok(())
}
