use std::collections::BTreeMap;

use tubelink::classify::{ClassCatalog, ScoreSource};
use tubelink::model::ActionInstance;
use tubelink::pipeline::format::{read_ground_truth, read_jsonl_path, read_video_lengths, write_jsonl_path};
use tubelink::pipeline::{
    crossing_scenario, random_scenario, run_stream, run_videos, synth_generate, DirSource, MaskSource, PipelineConfig,
    RandomScenarioParams, SynthSource, SyntheticScenario,
};
use tubelink::scorer::{align, per_class_report, EvalConfig};

fn config(classes: &[&str], height: u32, width: u32) -> PipelineConfig {
    PipelineConfig {
        height,
        width,
        classes: ClassCatalog::new(classes.iter().copied()).unwrap(),
        ..PipelineConfig::default()
    }
}

fn scenarios(n: u64, noise: f64) -> Vec<SyntheticScenario> {
    (0..n)
        .map(|k| {
            random_scenario(&RandomScenarioParams {
                video_id: format!("vid_{k}"),
                seed: 40 + k,
                duration: 500,
                actors: 2,
                num_classes: 3,
                height: 96,
                width: 128,
                noise,
                ..RandomScenarioParams::default()
            })
            .unwrap()
        })
        .collect()
}

#[test]
fn disk_and_memory_sources_agree() {
    let cfg = config(&["walking", "standing", "carrying"], 96, 128);
    let scns = scenarios(2, 0.1);
    let dir = tempfile::tempdir().unwrap();
    synth_generate(&scns, &cfg, dir.path()).unwrap();
    let gt = read_ground_truth(&dir.path().join("gt.json")).unwrap();
    let scores = ScoreSource::oracle(gt);
    for (disk, scn) in DirSource::open_all(&dir.path().join("masks"))
        .unwrap()
        .iter()
        .zip(&scns)
    {
        let mem = SynthSource {
            scenario: scn.clone(),
            config: cfg.clone(),
        };
        assert_eq!(disk.video_id(), scn.video_id);
        assert_eq!(disk.num_clips(), mem.num_clips());
        let a = run_stream(&cfg, disk, &scores).unwrap().instances;
        let b = run_stream(&cfg, &mem, &scores).unwrap().instances;
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }
}

#[test]
fn crossing_actors_stay_apart() {
    let cfg = config(&["walking", "standing"], 64, 160);
    let scn = crossing_scenario(3, 320);
    let src = SynthSource {
        scenario: scn.clone(),
        config: cfg.clone(),
    };
    let out = run_stream(&cfg, &src, &ScoreSource::oracle(scn.ground_truth())).unwrap();
    let mut classes: Vec<usize> = out.instances.iter().map(|i| i.class_id).collect();
    classes.sort();
    assert_eq!(classes, vec![1, 2]);
    let last = scn.actors[0].last_frame();
    for inst in &out.instances {
        assert_eq!((inst.start_frame, inst.end_frame), (0, last));
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let base = config(&["walking", "standing", "carrying"], 96, 128);
    let scns = scenarios(4, 0.15);
    let sources: Vec<SynthSource> = scns
        .iter()
        .map(|s| SynthSource {
            scenario: s.clone(),
            config: base.clone(),
        })
        .collect();
    let refs: Vec<&dyn MaskSource> = sources.iter().map(|s| s as &dyn MaskSource).collect();
    let gt = scns.iter().flat_map(|s| s.ground_truth()).collect();
    let scores = ScoreSource::oracle(gt);
    let one = run_videos(&base, &refs, &scores).unwrap();
    for workers in [2, 4] {
        let many = run_videos(
            &PipelineConfig {
                workers,
                ..base.clone()
            },
            &refs,
            &scores,
        )
        .unwrap();
        assert_eq!(one.instances, many.instances);
        assert_eq!(many.report.workers, workers);
    }
    let order: Vec<&str> = one.instances.iter().map(|i| i.video_id.as_str()).collect();
    let mut sorted = order.clone();
    sorted.sort();
    assert_eq!(order, sorted);
    assert_eq!(one.per_video.len(), 4);
}

#[test]
fn generated_score_table_drives_a_scored_run() {
    let cfg = config(&["walking", "standing", "carrying"], 96, 128);
    let scns = scenarios(2, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let summary = synth_generate(&scns, &cfg, dir.path()).unwrap();
    assert_eq!(summary.videos, 2);
    let scores = ScoreSource::from_csv_path(&dir.path().join("scores.csv")).unwrap();
    let sources = DirSource::open_all(&dir.path().join("masks")).unwrap();
    let refs: Vec<&dyn MaskSource> = sources.iter().map(|s| s as &dyn MaskSource).collect();
    let batch = run_videos(&cfg, &refs, &scores).unwrap();

    let out = dir.path().join("detections.jsonl");
    write_jsonl_path(&out, &batch.instances).unwrap();
    let back: Vec<ActionInstance> = read_jsonl_path(&out).unwrap();
    assert_eq!(back, batch.instances);

    let gt = read_ground_truth(&dir.path().join("gt.json")).unwrap();
    let lengths: BTreeMap<String, u32> = read_video_lengths(&dir.path().join("videos.json")).unwrap();
    let report = per_class_report(&back, &gt, &cfg.classes, &EvalConfig::default(), &lengths).unwrap();
    assert!(report.mean_n_audc < 0.5, "{report:?}");
    assert!(!align(&back, &gt, &EvalConfig::default()).pairs.is_empty());
}

#[test]
fn overlapping_clips_from_toml() {
    let cfg = PipelineConfig::from_toml_str(
        "clip_stride = 8\nheight = 96\nwidth = 128\nclasses = [\"walking\", \"standing\", \"carrying\"]\n",
    )
    .unwrap();
    let scn = scenarios(1, 0.0).remove(0);
    let src = SynthSource {
        scenario: scn.clone(),
        config: cfg.clone(),
    };
    let gts = scn.ground_truth();
    let out = run_stream(&cfg, &src, &ScoreSource::oracle(gts.clone())).unwrap();
    let m = align(
        &out.instances,
        &gts,
        &EvalConfig {
            t_iou_min: 0.8,
            ..EvalConfig::default()
        },
    );
    assert_eq!(m.pairs.len(), gts.len());
}
