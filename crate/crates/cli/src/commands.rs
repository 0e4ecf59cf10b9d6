use std::io::Write;
use std::path::{Path, PathBuf};

use hypervd::data_io::{
    expand_scores, generate_synthetic, read_frame_labels, write_dataset, Manifest, SynthConfig,
};
use hypervd::eval::{export_curves, EvalReport};
use hypervd::training::{gradient_check, train, write_history, TrainOutcome, VideoBag};
use hypervd::{FusionStrategy, Geometry, HyperVDModel, ModelConfig, Mode};

use crate::config::{RunConfig, Split};
use crate::error::{CliError, Context, EXIT_NUMERICAL};

fn io_err(module: &'static str, path: &Path, e: std::io::Error) -> CliError {
    CliError::data(module, format!("{}: {e}", path.display()))
}

fn create_dir(module: &'static str, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(module, dir, e))
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<VideoBag>, CliError> {
    let path = cfg.manifest(split)?;
    Manifest::read(&path).and_then(|m| m.load()).ctx("data_io")
}

/// Writes a synthetic dataset plus a desk-scale `config.toml` pointing at it.
pub fn gen_synth(synth: &SynthConfig, out_dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let data = generate_synthetic(synth).ctx("data_io")?;
    create_dir("data_io", out_dir)?;
    write_dataset(out_dir, &data).ctx("data_io")?;
    let cfg = RunConfig::desk(synth.visual_dim, synth.audio_dim, synth.seed);
    let cfg_path = out_dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| io_err("data_io", &cfg_path, e))?;
    writeln!(
        out,
        "wrote {} train / {} test videos and {} to {}",
        data.train.len(),
        data.test.len(),
        cfg_path.file_name().unwrap().to_string_lossy(),
        out_dir.display()
    )
    .ctx("cli")
}

fn train_with(cfg: &RunConfig, model: &ModelConfig, train_set: &[VideoBag], test_set: &[VideoBag]) -> Result<TrainOutcome, CliError> {
    train(model, &cfg.train_config(), train_set, test_set).ctx("training")
}

/// Trains and writes `checkpoint.hvdm` (best held-out AP), `final.hvdm` and
/// `history.csv` into the output directory.
pub fn train_cmd(cfg: &RunConfig, out_dir: Option<&Path>, out: &mut dyn Write) -> Result<PathBuf, CliError> {
    let train_set = load_split(cfg, Split::Train)?;
    let test_set = match cfg.data.test_manifest {
        Some(_) => load_split(cfg, Split::Test)?,
        None => Vec::new(),
    };
    let outcome = train_with(cfg, &cfg.model, &train_set, &test_set)?;
    let dir = out_dir.map_or_else(|| cfg.output_dir(), Path::to_path_buf);
    create_dir("training", &dir)?;
    let ckpt = dir.join("checkpoint.hvdm");
    outcome.best.save(&ckpt).ctx("training")?;
    outcome.model.save(dir.join("final.hvdm")).ctx("training")?;
    write_history(dir.join("history.csv"), &outcome.history).ctx("training")?;
    for r in &outcome.history {
        let ap = r.eval_ap.map_or_else(|| "-".to_owned(), |a| format!("{a:.4}"));
        writeln!(out, "epoch {:>3}  lr {:.3e}  loss {:.5}  ap {ap}", r.epoch, r.lr, r.train_loss).ctx("cli")?;
    }
    writeln!(
        out,
        "best epoch {} -> {} ({} parameters)",
        outcome.best_epoch,
        ckpt.display(),
        outcome.best.parameter_count()
    )
    .ctx("cli")?;
    Ok(ckpt)
}

/// Writes `<id>.scores` (one frame score per line) for every video, plus a
/// `<id>.curve.csv` where frame labels are available.
pub fn score(checkpoint: &Path, manifest: &Path, out_dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let model = HyperVDModel::load(checkpoint).ctx("model")?;
    let videos = Manifest::read(manifest).and_then(|m| m.load()).ctx("data_io")?;
    create_dir("data_io", out_dir)?;
    for bag in &videos {
        let s = model.forward(&bag.visual, &bag.audio, &mut Mode::Eval).ctx("model")?;
        let frames = expand_scores(s.as_slice());
        let mut text = String::with_capacity(20 * frames.len());
        for v in &frames {
            text.push_str(&format!("{v}\n"));
        }
        let path = out_dir.join(format!("{}.scores", bag.id));
        std::fs::write(&path, text).map_err(|e| io_err("data_io", &path, e))?;
        if let Some(labels) = &bag.frame_labels {
            export_curves(out_dir.join(format!("{}.curve.csv", bag.id)), &frames, labels).ctx("eval")?;
        }
    }
    writeln!(out, "scored {} videos into {}", videos.len(), out_dir.display()).ctx("cli")
}

fn read_scores(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err("eval", path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| CliError::data("eval", format!("{}: bad score `{l}`", path.display())))
        })
        .collect()
}

pub fn eval_cmd(scores_dir: &Path, manifest: &Path) -> Result<EvalReport, CliError> {
    let m = Manifest::read(manifest).ctx("data_io")?;
    let mut rows = Vec::with_capacity(m.entries.len());
    for e in &m.entries {
        let labels_path = e
            .frame_labels
            .as_ref()
            .ok_or_else(|| CliError::data("eval", format!("video `{}` has no frame labels", e.id)))?;
        let labels = read_frame_labels(m.resolve(labels_path)).ctx("data_io")?;
        let scores = read_scores(&scores_dir.join(format!("{}.scores", e.id)))?;
        rows.push((e.id.clone(), scores, labels));
    }
    EvalReport::from_videos(&rows).ctx("eval")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Fusion,
    Branch,
    Geometry,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fusion" => Ok(Axis::Fusion),
            "branch" => Ok(Axis::Branch),
            "geometry" => Ok(Axis::Geometry),
            _ => Err(format!("unknown axis `{s}` (fusion, branch, geometry)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    /// Held-out AP of the retained (best) checkpoint.
    pub ap: f64,
    pub params: usize,
}

pub fn ablation_variants(base: &ModelConfig, axis: Axis) -> Vec<(String, ModelConfig)> {
    match axis {
        Axis::Fusion => FusionStrategy::ALL
            .iter()
            .map(|&fusion| (fusion.to_string(), ModelConfig { fusion, ..base.clone() }))
            .collect(),
        Axis::Branch => [("hfsg", true, false), ("htrg", false, true), ("hfsg+htrg", true, true)]
            .iter()
            .map(|&(name, hfsg, htrg)| (name.to_owned(), ModelConfig { hfsg, htrg, ..base.clone() }))
            .collect(),
        Axis::Geometry => [Geometry::Euclidean, Geometry::Hyperbolic]
            .iter()
            .map(|&geometry| (geometry.to_string(), ModelConfig { geometry, ..base.clone() }))
            .collect(),
    }
}

/// Trains each variant of one axis with identical data, seed and schedule.
pub fn ablate(cfg: &RunConfig, axis: Axis) -> Result<Vec<AblationRow>, CliError> {
    let train_set = load_split(cfg, Split::Train)?;
    let test_set = load_split(cfg, Split::Test)?;
    ablation_variants(&cfg.model, axis)
        .into_iter()
        .map(|(variant, model)| {
            let outcome = train_with(cfg, &model, &train_set, &test_set)?;
            let ap = outcome.history[outcome.best_epoch].eval_ap.unwrap_or(f64::NAN);
            Ok(AblationRow {
                variant,
                ap,
                params: outcome.best.parameter_count(),
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,ap,params\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{}\n", r.variant, r.ap, r.params));
    }
    s
}

#[derive(Clone, Debug)]
pub struct GradCheckArgs {
    pub tolerance: f64,
    pub step: f64,
    pub videos: usize,
    pub snippets: usize,
}

impl Default for GradCheckArgs {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            videos: 4,
            snippets: 5,
        }
    }
}

/// Finite-difference check of every parameter on random videos, dropout off.
/// Prints `PASS`/`FAIL` with the largest relative error.
pub fn gradcheck(model_cfg: &ModelConfig, seed: u64, args: &GradCheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model_cfg = ModelConfig {
        dropout: 0.0,
        hl_dropout: 0.0,
        ..model_cfg.clone()
    };
    let data = generate_synthetic(&SynthConfig {
        seed,
        n_train: args.videos.max(2),
        n_test: 0,
        t_min: args.snippets,
        t_max: args.snippets,
        visual_dim: model_cfg.visual_dim,
        audio_dim: model_cfg.audio_dim,
        separation: 1.0,
    })
    .ctx("data_io")?;
    let model = HyperVDModel::new(model_cfg, seed).ctx("model")?;
    let report = gradient_check(&model, &data.train, 16, args.step, args.tolerance).ctx("training")?;
    if report.passed() {
        writeln!(
            out,
            "PASS, max rel err {:.3e} <= {:e} over {} parameters",
            report.max_rel_err, args.tolerance, report.checked
        )
        .ctx("cli")
    } else {
        let worst = report
            .failures
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
            .expect("failures");
        writeln!(
            out,
            "FAIL, max rel err {:.3e} > {:e}; {} of {} parameters fail, worst {}[{}] analytic {:e} numeric {:e}",
            report.max_rel_err,
            args.tolerance,
            report.failures.len(),
            report.checked,
            worst.param,
            worst.index,
            worst.analytic,
            worst.numeric
        )
        .ctx("cli")?;
        Err(CliError {
            module: "training",
            message: "gradient check failed".into(),
            code: EXIT_NUMERICAL,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_per_axis() {
        let base = ModelConfig::toy();
        let names = |axis| ablation_variants(&base, axis).into_iter().map(|v| v.0).collect::<Vec<_>>();
        assert_eq!(names(Axis::Fusion), ["concat", "additive", "gated", "bilinear_concat", "detour"]);
        assert_eq!(names(Axis::Branch), ["hfsg", "htrg", "hfsg+htrg"]);
        assert_eq!(names(Axis::Geometry), ["euclidean", "hyperbolic"]);
        let branch = ablation_variants(&base, Axis::Branch);
        assert!(branch[0].1.hfsg && !branch[0].1.htrg);
        assert!(!branch[1].1.hfsg && branch[1].1.htrg);
        assert_eq!(branch[2].1, base);
    }

    #[test]
    fn axis_parsing() {
        assert_eq!("branch".parse::<Axis>(), Ok(Axis::Branch));
        assert!("Fusion".parse::<Axis>().is_err());
    }

    #[test]
    fn table_format() {
        let rows = [AblationRow {
            variant: "detour".into(),
            ap: 0.5,
            params: 12,
        }];
        assert_eq!(ablation_csv(&rows), "variant,ap,params\ndetour,0.500000,12\n");
    }

    #[test]
    fn score_lines_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.scores");
        std::fs::write(&path, "0.25\n1\n\n").unwrap();
        assert_eq!(read_scores(&path).unwrap(), [0.25, 1.0]);
        std::fs::write(&path, "0.25\nx\n").unwrap();
        assert_eq!(read_scores(&path).unwrap_err().code, crate::error::EXIT_DATA);
    }
}
