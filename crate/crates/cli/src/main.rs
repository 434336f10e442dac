use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tubelink::classify::{score_tubelet, ScoreSource};
use tubelink::extract::{extract, ClipRef};
use tubelink::loss::evaluate_all;
use tubelink::model::{ActionInstance, ScoreVector, Track, Tubelet};
use tubelink::pipeline::format::{self, TubeletRecord};
use tubelink::pipeline::{
    benchmark, crossing_scenario, mixed_duration_scenario, random_scenario, run_videos, synth_generate, DirSource,
    MaskSource, PipelineConfig, RandomScenarioParams, SyntheticScenario,
};
use tubelink::scorer::{per_class_report, write_det_csv, GroundTruthInstance};
use tubelink::tmas::{action_split, merge_all};

#[derive(Parser)]
#[command(
    name = "tubelink",
    version,
    about = "Actor-mask post-processing: tubelets, tubes, activity instances"
)]
struct Cli {
    /// TOML configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct TmasFlags {
    #[arg(long)]
    theta_link: Option<f64>,
    #[arg(long)]
    delta_t: Option<u32>,
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<usize>,
    #[arg(long)]
    gamma: Option<usize>,
}

impl TmasFlags {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.theta_link {
            cfg.link.link_threshold = v;
        }
        if let Some(v) = self.delta_t {
            cfg.link.gap_tolerance = v;
        }
        if let Some(v) = self.kappa {
            cfg.split.kappa = v;
        }
        if let Some(v) = self.alpha {
            cfg.split.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.split.beta = v;
        }
        if let Some(v) = self.gamma {
            cfg.split.gamma = v;
        }
    }
}

/// Where per-tubelet class scores come from.
#[derive(Args)]
struct ScoreFlags {
    /// CSV table `tubelet_id,score_0,...,score_C`.
    #[arg(long, conflicts_with = "oracle")]
    scores: Option<PathBuf>,
    /// Score tubelets from a ground-truth file instead.
    #[arg(long)]
    oracle: Option<PathBuf>,
}

impl ScoreFlags {
    fn source(&self, cfg: &PipelineConfig) -> Result<ScoreSource> {
        Ok(match (&self.scores, &self.oracle) {
            (Some(p), _) => ScoreSource::from_csv_path(p)?,
            (None, Some(p)) => ScoreSource::oracle(format::read_ground_truth(p)?),
            (None, None) => ScoreSource::Constant(ScoreVector::zeros(cfg.classes.num_classes() + 1)),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Cut mask clips into tubelets (JSON Lines).
    Extract {
        /// Directory holding `<video>/clip_<i>.gbm`.
        #[arg(long)]
        masks: PathBuf,
        /// Restrict to one video.
        #[arg(long)]
        video: Option<String>,
        #[command(flatten)]
        score: ScoreFlags,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Merge scored tubelets into tubes and split them into instances.
    Tmas {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: TmasFlags,
    },
    /// Score detections against ground truth.
    Score {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// `videos.json` with each video's length in frames.
        #[arg(long)]
        videos: Option<PathBuf>,
        /// JSON report; stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        det_csv: Option<PathBuf>,
        /// Also require box overlap with the reference.
        #[arg(long)]
        spatial: bool,
    },
    /// Full streaming pipeline from masks to instances.
    Run {
        #[arg(long)]
        masks: PathBuf,
        #[command(flatten)]
        score: ScoreFlags,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Throughput report (JSON).
        #[arg(long)]
        throughput: Option<PathBuf>,
        #[command(flatten)]
        flags: TmasFlags,
    },
    /// Generate synthetic masks, ground truth and an oracle score table.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value = "random")]
        profile: Profile,
        #[arg(long, default_value_t = 1)]
        videos: usize,
        #[arg(long, default_value_t = 2000)]
        duration: u32,
        #[arg(long, default_value_t = 3)]
        actors: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Frame size of random scenarios.
        #[arg(long, default_value_t = 128)]
        height: u32,
        #[arg(long, default_value_t = 160)]
        width: u32,
    },
    /// Measure pipeline throughput on synthetic clips.
    Bench {
        #[arg(long, default_value_t = 1)]
        videos: usize,
        #[arg(long, default_value_t = 2000)]
        duration: u32,
        #[arg(long, default_value_t = 2)]
        actors: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// All loss values between a reference and a predicted mask.
    LossEval { truth: PathBuf, predicted: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Profile {
    Random,
    Crossing,
    Mixed,
}

fn writer(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn print_json<T: serde::Serialize>(value: &T, out: &Option<PathBuf>) -> Result<()> {
    let mut w = writer(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_path(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn sources(masks: &Path, only: Option<&str>) -> Result<Vec<DirSource>> {
    Ok(match only {
        Some(v) => vec![DirSource::open(masks, v)?],
        None => DirSource::open_all(masks)?,
    })
}

fn cmd_extract(
    cfg: &PipelineConfig,
    masks: &Path,
    video: Option<&str>,
    score: &ScoreFlags,
    out: &Option<PathBuf>,
) -> Result<()> {
    let scores = score.source(cfg)?;
    let mut records = Vec::new();
    for src in sources(masks, video)? {
        for index in 0..src.num_clips() {
            let clip = ClipRef::new(src.video_id(), index as u32, index as u32 * cfg.clip_stride);
            for t in extract(&src.load(index)?, &clip, &cfg.extraction, cfg.classes.num_classes())? {
                let t = score_tubelet(&t, &scores, &cfg.classes)?;
                records.push(TubeletRecord::from(&t));
            }
        }
    }
    format::write_jsonl(records, writer(out)?)?;
    Ok(())
}

fn cmd_tmas(cfg: &PipelineConfig, input: &Path, out: &Option<PathBuf>) -> Result<()> {
    let mut by_video: BTreeMap<String, Vec<Tubelet>> = BTreeMap::new();
    for t in format::read_tubelets(input)? {
        by_video.entry(t.id.video.clone()).or_default().push(t);
    }
    let mut instances: Vec<ActionInstance> = Vec::new();
    for tubelets in by_video.values_mut() {
        tubelets.sort_by_key(|t| (t.start_frame(), t.id.clip, t.id.component));
        let tubes = merge_all(tubelets.iter(), cfg.link)?;
        instances.extend(action_split(&tubes, &cfg.classes, &cfg.split));
    }
    format::write_jsonl(&instances, writer(out)?)?;
    Ok(())
}

fn cmd_score(
    cfg: &PipelineConfig,
    gt: &Path,
    detections: &Path,
    videos: Option<&Path>,
    report: &Option<PathBuf>,
    det_csv: Option<&Path>,
) -> Result<()> {
    let gts: Vec<GroundTruthInstance> = format::read_ground_truth(gt)?;
    let dets: Vec<ActionInstance> = format::read_jsonl_path(detections)?;
    let lengths = match videos {
        Some(p) => format::read_video_lengths(p)?,
        None => BTreeMap::new(),
    };
    let r = per_class_report(&dets, &gts, &cfg.classes, &cfg.scorer, &lengths)?;
    if let Some(p) = det_csv {
        write_det_csv(
            &r,
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )?;
    }
    print_json(&r, report)
}

fn cmd_run(
    cfg: &PipelineConfig,
    masks: &Path,
    score: &ScoreFlags,
    out: &Option<PathBuf>,
    throughput: &Option<PathBuf>,
) -> Result<()> {
    let scores = score.source(cfg)?;
    let srcs = sources(masks, None)?;
    let refs: Vec<&dyn MaskSource> = srcs.iter().map(|s| s as &dyn MaskSource).collect();
    let batch = run_videos(cfg, &refs, &scores)?;
    format::write_jsonl(&batch.instances, writer(out)?)?;
    if let Some(p) = throughput {
        format::write_json(p, &batch.report)?;
    }
    Ok(())
}

struct SynthSpec {
    profile: Profile,
    videos: usize,
    duration: u32,
    actors: usize,
    noise: f64,
    height: u32,
    width: u32,
}

fn scenarios(seed: u64, spec: &SynthSpec, cfg: &PipelineConfig) -> Result<Vec<SyntheticScenario>> {
    let SynthSpec {
        profile,
        videos,
        duration,
        actors,
        noise,
        height,
        width,
    } = *spec;
    (0..videos)
        .map(|k| {
            let video_id = format!("synth_{k:03}");
            let vseed = seed.wrapping_add(k as u64);
            let mut scn = match profile {
                Profile::Random => random_scenario(&RandomScenarioParams {
                    video_id,
                    seed: vseed,
                    duration,
                    actors,
                    num_classes: cfg.classes.num_classes(),
                    noise,
                    height,
                    width,
                    ..RandomScenarioParams::default()
                })?,
                Profile::Crossing => {
                    let mut s = crossing_scenario(vseed, duration);
                    s.video_id = video_id;
                    s
                }
                Profile::Mixed => mixed_duration_scenario(&video_id, vseed, duration)?,
            };
            scn.noise = noise;
            scn.validate()?;
            Ok(scn)
        })
        .collect()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Extract {
            masks,
            video,
            score,
            out,
        } => {
            cfg.validate()?;
            cmd_extract(&cfg, masks, video.as_deref(), score, out)
        }
        Command::Tmas { input, out, flags } => {
            flags.apply(&mut cfg);
            cfg.validate()?;
            cmd_tmas(&cfg, input, out)
        }
        Command::Score {
            gt,
            detections,
            videos,
            report,
            det_csv,
            spatial,
        } => {
            cfg.scorer.spatial |= *spatial;
            cfg.validate()?;
            cmd_score(&cfg, gt, detections, videos.as_deref(), report, det_csv.as_deref())
        }
        Command::Run {
            masks,
            score,
            out,
            throughput,
            flags,
        } => {
            flags.apply(&mut cfg);
            cfg.validate()?;
            cmd_run(&cfg, masks, score, out, throughput)
        }
        Command::Synth {
            out,
            profile,
            videos,
            duration,
            actors,
            noise,
            height,
            width,
        } => {
            if matches!(profile, Profile::Mixed) && cfg.classes.num_classes() < 4 {
                cfg.classes = tubelink::ClassCatalog::new(["long_a", "long_b", "short_a", "short_b"])?;
            }
            cfg.validate()?;
            let spec = SynthSpec {
                profile: *profile,
                videos: *videos,
                duration: *duration,
                actors: *actors,
                noise: *noise,
                height: *height,
                width: *width,
            };
            let scns = scenarios(cli.seed, &spec, &cfg)?;
            let summary = synth_generate(&scns, &cfg, out)?;
            print_json(&summary, &None)
        }
        Command::Bench {
            videos,
            duration,
            actors,
            out,
        } => {
            if *videos == 0 {
                bail!("need at least one video");
            }
            let bench_cfg = PipelineConfig {
                height: 112,
                width: 112,
                ..cfg
            };
            bench_cfg.validate()?;
            let spec = SynthSpec {
                profile: Profile::Random,
                videos: *videos,
                duration: *duration,
                actors: *actors,
                noise: 0.0,
                height: bench_cfg.height,
                width: bench_cfg.width,
            };
            let scns = scenarios(cli.seed, &spec, &bench_cfg)?;
            let report = benchmark(&bench_cfg, &scns)?;
            print_json(&report, out)
        }
        Command::LossEval { truth, predicted } => {
            cfg.validate()?;
            let y = format::read_gbm(truth)?.to_mask_volume();
            let q = format::read_gbm(predicted)?.to_mask_volume();
            print_json(&evaluate_all(&y, &q, &cfg.loss)?, &None)
        }
    }
}
