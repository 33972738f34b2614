use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use maesil::masking::{mask_statistics, MaskRatios};
use maesil::metrics::{reports_csv, MetricReport};
use maesil::model::{reconstruct_with, BaselineAE, MaesilModel, ModelSpec, PastePolicy, TokenPredictor};
use maesil::training::{
    load_checkpoint, loss_csv, save_checkpoint, to_checkpoint, train as run_training, SuperpatchSet,
};
use maesil::volume_io::{
    fit_to_grid, load_cached, read_nifti_windowed, read_raw_windowed, save_cached, write_slice_pgm, Axis, Endian,
    FitPolicy, RawDtype, Volume,
};

use crate::config::{resolve, Overrides, RunConfig};
use crate::{ConfigArgs, Usage};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let nums: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
    match nums {
        Ok(v) if v.len() == 1 => Ok([v[0]; 3]),
        Ok(v) if v.len() == 3 => Ok([v[0], v[1], v[2]]),
        _ => Err(format!("expected N or X,Y,Z, got {s:?}")),
    }
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected LO,HI, got {s:?}"))?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Auto,
    Nifti,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fit {
    Crop,
    Pad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Paste {
    PredMaskedOnly,
    PredEverywhere,
}

impl From<Paste> for PastePolicy {
    fn from(p: Paste) -> Self {
        match p {
            Paste::PredMaskedOnly => PastePolicy::PredMaskedOnly,
            Paste::PredEverywhere => PastePolicy::PredEverywhere,
        }
    }
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// NIfTI-1 (.nii / .hdr) or headerless raw volumes.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Cache directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Superpatch edge to fit to; defaults to the configured model's.
    #[arg(long)]
    pub superpatch: Option<usize>,
    /// HU window mapped to [0, 1].
    #[arg(long, value_parser = parse_window, default_value = "-1000,1000")]
    pub window: (f64, f64),
    #[arg(long, value_enum, default_value = "crop")]
    pub fit: Fit,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: InputFormat,
    /// Raw inputs only: X,Y,Z.
    #[arg(long, value_parser = parse_triple)]
    pub dims: Option<[usize; 3]>,
    /// Raw inputs only: u8, i16 or f32.
    #[arg(long, default_value = "i16")]
    pub dtype: String,
    /// Raw inputs only: le or be.
    #[arg(long, default_value = "le")]
    pub endian: String,
}

fn stem_of(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for ext in [".nii", ".hdr", ".img", ".raw", ".json"] {
        if let Some(s) = name.strip_suffix(ext) {
            return s.to_string();
        }
    }
    name
}

fn unique_stem(stem: String, taken: &mut BTreeSet<String>) -> String {
    let mut s = stem.clone();
    let mut i = 1;
    while !taken.insert(s.clone()) {
        s = format!("{stem}-{i}");
        i += 1;
    }
    s
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let edge = match a.superpatch {
        Some(e) => e,
        None => {
            resolve(
                a.cfg.config.as_deref(),
                &Overrides {
                    preset: a.cfg.preset.clone(),
                    ..Overrides::default()
                },
            )?
            .model
            .superpatch_edge
        }
    };
    if edge == 0 {
        return Err(usage("--superpatch must be positive"));
    }
    if a.window.1.partial_cmp(&a.window.0) != Some(std::cmp::Ordering::Greater) {
        return Err(usage(format!("window {:?} is empty", a.window)));
    }
    let dtype: RawDtype = a.dtype.parse().map_err(|e: maesil::Error| usage(e.to_string()))?;
    let endian: Endian = a.endian.parse().map_err(|e: maesil::Error| usage(e.to_string()))?;
    let policy = match a.fit {
        Fit::Crop => FitPolicy::CropCenter,
        Fit::Pad => FitPolicy::PadZero,
    };
    let is_raw = |path: &Path| match a.format {
        InputFormat::Raw => true,
        InputFormat::Nifti => false,
        InputFormat::Auto => path.extension().is_some_and(|e| e == "raw"),
    };
    if a.dims.is_none() && a.paths.iter().any(|p| is_raw(p)) {
        return Err(usage("raw inputs need --dims X,Y,Z"));
    }
    let mut taken = BTreeSet::new();
    let mut failed = 0usize;
    for path in &a.paths {
        let loaded = match a.dims.filter(|_| is_raw(path)) {
            Some(d) => read_raw_windowed(path, d, dtype, endian, a.window),
            None => read_nifti_windowed(path, a.window),
        };
        let result = loaded
            .and_then(|v| fit_to_grid(&v, edge, policy))
            .and_then(|v| save_cached(&v, &a.out, &unique_stem(stem_of(path), &mut taken)));
        match result {
            Ok(sidecar) => println!("{} -> {}", path.display(), sidecar.display()),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} inputs failed", a.paths.len());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct MaskStatsArgs {
    /// Ratio preset; explicit ratios override it.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub plane_ratio: Option<f64>,
    #[arg(long)]
    pub axis_ratio: Option<f64>,
    /// Token grid, N or X,Y,Z.
    #[arg(long, value_parser = parse_triple, default_value = "16")]
    pub grid: [usize; 3],
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 1000)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn mask_stats(a: MaskStatsArgs) -> Result<()> {
    let base = match &a.preset {
        Some(p) => MaskRatios::from_preset(p).ok_or_else(|| usage(format!("unknown preset {p:?}")))?,
        None if a.plane_ratio.is_some() || a.axis_ratio.is_some() => MaskRatios { plane: 0.0, axis: 0.0 },
        None => MaskRatios::PAPER_STAGES,
    };
    let ratios = MaskRatios {
        plane: a.plane_ratio.unwrap_or(base.plane),
        axis: a.axis_ratio.unwrap_or(base.axis),
    };
    ratios.validate().map_err(|e| usage(e.to_string()))?;
    if a.grid.contains(&0) {
        return Err(usage("grid dimensions must be positive"));
    }
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let stats = mask_statistics(a.grid, ratios.plane, ratios.axis, &seeds)?;
    let csv = stats.to_csv();
    match &a.out {
        Some(p) => {
            write_file(p, csv.as_bytes())?;
            println!("effective_ratio {:.6}", stats.effective_ratio);
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Overrides `train.run_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `train.steps`.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Cached sidecars or directories, appended to `data.inputs`.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
}

/// Expand sidecar directories, checking existence up front.
fn collect_sidecars(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.extension().is_some_and(|e| e == "json"))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(usage(format!("input {} does not exist", p.display())));
        }
    }
    if out.is_empty() {
        return Err(usage("no input volumes given (data.inputs or --data)"));
    }
    Ok(out)
}

fn load_volume(path: &Path) -> Result<Volume> {
    let v = if path.extension().is_some_and(|e| e == "json") {
        load_cached(path)
    } else {
        maesil::volume_io::read_nifti(path)
    };
    v.with_context(|| format!("loading {}", path.display()))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg: RunConfig = resolve(
        a.cfg.config.as_deref(),
        &Overrides {
            preset: a.cfg.preset.clone(),
            seed: a.seed,
            out: a.out.clone(),
            steps: a.steps,
        },
    )?;
    cfg.data.inputs.extend(a.data.iter().cloned());
    let sidecars = collect_sidecars(&cfg.data.inputs)?;
    let volumes = sidecars.iter().map(|p| load_volume(p)).collect::<Result<Vec<_>>>()?;
    let set = SuperpatchSet::from_volumes(&volumes, cfg.model.superpatch_edge, cfg.model.patch_edge)
        .context("tokenizing training volumes")?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let resolved = serde_json::to_string_pretty(&cfg)?;
    write_file(&cfg.out_dir.join("config.json"), resolved.as_bytes())?;

    let model = MaesilModel::<f32>::new(cfg.model.clone())?;
    println!(
        "training {} parameters on {} superpatches for {} steps",
        model.params().num_scalars(),
        set.len(),
        cfg.train.steps
    );
    let out = run_training(model, &set, &cfg.train)?;
    save_checkpoint(
        &to_checkpoint(&out.model, &out.optimizer, Some(cfg.train.clone())),
        cfg.out_dir.join("model.msil"),
    )?;
    write_file(
        &cfg.out_dir.join("loss.csv"),
        loss_csv(&out.losses, cfg.train.log_every).as_bytes(),
    )?;
    let last = out.losses.last().map(|l| l.1).unwrap_or(f64::NAN);
    println!("final loss {last:.6} after {} steps", cfg.train.steps);

    if let Some(bcfg) = &cfg.baseline {
        let ae = BaselineAE::<f32>::new(bcfg.clone())?;
        let out = run_training(ae, &set, &cfg.train).context("baseline autoencoder")?;
        save_checkpoint(
            &to_checkpoint(&out.model, &out.optimizer, Some(cfg.train.clone())),
            cfg.out_dir.join("baseline_ae.msil"),
        )?;
        write_file(
            &cfg.out_dir.join("baseline_loss.csv"),
            loss_csv(&out.losses, cfg.train.log_every).as_bytes(),
        )?;
        let last = out.losses.last().map(|l| l.1).unwrap_or(f64::NAN);
        println!("baseline final loss {last:.6}");
    }
    Ok(())
}

fn load_maesil(path: &Path) -> Result<MaesilModel<f32>> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    match ck.config.model {
        ModelSpec::Maesil(cfg) => MaesilModel::from_params(cfg, ck.params)
            .with_context(|| format!("{}: parameters do not match config", path.display())),
        ModelSpec::BaselineAe(_) => Err(anyhow!(
            "{} holds a baseline autoencoder, not a masked model",
            path.display()
        )),
    }
}

fn load_baseline(path: &Path) -> Result<BaselineAE<f32>> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    match ck.config.model {
        ModelSpec::BaselineAe(cfg) => BaselineAE::from_params(cfg, ck.params)
            .with_context(|| format!("{}: parameters do not match config", path.display())),
        ModelSpec::Maesil(_) => Err(anyhow!(
            "{} holds a masked model, not a baseline autoencoder",
            path.display()
        )),
    }
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Cached sidecar (.json) or NIfTI file fitted to the superpatch grid.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for recon.raw / recon.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Mask seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "pred-masked-only")]
    pub paste: Paste,
    /// Write center-slice PGMs of input and reconstruction along each axis.
    #[arg(long)]
    pub slices: Option<PathBuf>,
}

pub fn reconstruct(a: ReconstructArgs) -> Result<()> {
    if !a.checkpoint.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    if !a.input.is_file() {
        return Err(usage(format!("input {} does not exist", a.input.display())));
    }
    let model = load_maesil(&a.checkpoint)?;
    let vol = load_volume(&a.input)?;
    let cfg = model.config();
    let r = reconstruct_with(&model, &vol, cfg.superpatch_edge, cfg.mask, a.seed, a.paste.into())
        .with_context(|| format!("reconstructing {}", a.input.display()))?;
    let sidecar = save_cached(&r.volume, &a.out, "recon")?;
    let masked = r.masked.iter().filter(|&&m| m).count();
    println!(
        "wrote {} ({} of {} voxels masked)",
        sidecar.display(),
        masked,
        r.masked.len()
    );
    if let Some(dir) = &a.slices {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let [dx, dy, dz] = vol.dims();
        for (name, axis, idx) in [
            ("axial", Axis::Z, dz / 2),
            ("coronal", Axis::Y, dy / 2),
            ("sagittal", Axis::X, dx / 2),
        ] {
            write_slice_pgm(&vol, axis, idx, dir.join(format!("input_{name}.pgm")))?;
            write_slice_pgm(&r.volume, axis, idx, dir.join(format!("recon_{name}.pgm")))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Ae,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Cached sidecars, NIfTI files or directories of sidecars.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "pred-masked-only")]
    pub paste: Paste,
    /// Also score a baseline under the same masks.
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineKind>,
    /// Baseline checkpoint; defaults to baseline_ae.msil next to --checkpoint.
    #[arg(long)]
    pub baseline_checkpoint: Option<PathBuf>,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn score<P: TokenPredictor + ?Sized>(
    predictor: &P,
    prefix: &str,
    inputs: &[(String, Volume)],
    model: &MaesilModel<f32>,
    a: &EvalArgs,
) -> Result<Vec<MetricReport>> {
    let cfg = model.config();
    inputs
        .iter()
        .map(|(id, vol)| {
            let r = reconstruct_with(predictor, vol, cfg.superpatch_edge, cfg.mask, a.seed, a.paste.into())
                .with_context(|| format!("reconstructing {id}"))?;
            let mask = r.masked.iter().any(|&m| m).then_some(r.masked.as_slice());
            Ok(MetricReport::evaluate(format!("{prefix}{id}"), vol, &r.volume, mask)?)
        })
        .collect()
}

pub fn eval(a: EvalArgs) -> Result<()> {
    if !a.checkpoint.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let mut paths = Vec::new();
    for p in &a.data {
        if p.is_dir() {
            paths.extend(collect_sidecars(std::slice::from_ref(p))?);
        } else if p.is_file() {
            paths.push(p.clone());
        } else {
            return Err(usage(format!("input {} does not exist", p.display())));
        }
    }
    let baseline_path = a.baseline.map(|_| {
        a.baseline_checkpoint.clone().unwrap_or_else(|| {
            a.checkpoint
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("baseline_ae.msil")
        })
    });
    if let Some(bp) = &baseline_path {
        if !bp.is_file() {
            return Err(usage(format!("baseline checkpoint {} does not exist", bp.display())));
        }
    }

    let model = load_maesil(&a.checkpoint)?;
    let inputs = paths
        .iter()
        .map(|p| Ok((stem_of(p), load_volume(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let reports = score(&model, "", &inputs, &model, &a)?;
    let mut csv = reports_csv(&reports);
    if let Some(bp) = &baseline_path {
        let ae = load_baseline(bp)?;
        if ae.config().patch_edge != model.config().patch_edge {
            bail!("baseline patch edge differs from the model's");
        }
        let ae_reports = score(&ae, "ae/", &inputs, &model, &a)?;
        let ae_csv = reports_csv(&ae_reports);
        let body: String = ae_csv
            .lines()
            .skip(1)
            .map(|l| {
                let l = l
                    .strip_prefix("mean,")
                    .map(|r| format!("ae/mean,{r}"))
                    .unwrap_or_else(|| l.to_string());
                l + "\n"
            })
            .collect();
        csv.push_str(&body);
    }
    match &a.out {
        Some(p) => write_file(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}
