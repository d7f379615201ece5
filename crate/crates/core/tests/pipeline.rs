use std::collections::BTreeSet;
use std::path::Path;

use hadith_corpus::model::Narration;
use hadith_corpus::pipeline::{run_pipeline, run_stage, PipelineConfig, Stage, StageStatus, StageToggles, StoreName};
use hadith_corpus::store::RecordStore;
use hadith_corpus::synthetic::{generate, SyntheticConfig, SyntheticCorpus};

fn corpus() -> SyntheticCorpus {
    generate(&SyntheticConfig { books: 2, narrations_per_book: 10, seed: 5, ..Default::default() })
}

fn setup(dir: &Path) -> PipelineConfig {
    corpus().write_sample(dir, "it").unwrap();
    PipelineConfig::load_with_env(&dir.join("pipeline.toml"), |_| None).unwrap()
}

fn narrations(cfg: &PipelineConfig, name: StoreName) -> Vec<Narration> {
    let mut v = RecordStore::open_existing(cfg.store_path(name)).unwrap().narrations().unwrap();
    v.sort_by(|a, b| a.narration_id.cmp(&b.narration_id));
    v
}

#[test]
fn aligned_spans_reproduce_generator_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let summary = run_pipeline(&cfg);
    assert!(!summary.partial, "{summary}");

    let truth: BTreeSet<(String, usize, usize)> = corpus()
        .books
        .iter()
        .flat_map(|b| {
            b.gold.iter().filter(|g| g.is_hadith).map(|g| (b.book_id.as_str().to_string(), g.char_start, g.char_end))
        })
        .collect();
    let found: BTreeSet<(String, usize, usize)> = narrations(&cfg, StoreName::Aligned)
        .into_iter()
        .filter(Narration::is_hadith)
        .map(|n| (n.book_id.as_str().to_string(), n.char_start, n.char_end))
        .collect();
    assert_eq!(found, truth);
}

#[test]
fn stage_by_stage_equals_full_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let full = setup(a.path());
    assert!(!run_pipeline(&full).partial);

    let staged = setup(b.path());
    let annotator = staged.annotator();
    for stage in Stage::ALL {
        let report = run_stage(&staged, stage, &annotator).unwrap();
        assert_eq!(report.status, StageStatus::Completed);
    }
    assert_eq!(narrations(&full, StoreName::Grouped), narrations(&staged, StoreName::Grouped));
    let bundles =
        |c: &PipelineConfig| RecordStore::open_existing(c.store_path(StoreName::Bundles)).unwrap().bundles().unwrap();
    assert_eq!(bundles(&full), bundles(&staged));
}

#[test]
fn interrupted_run_resumes_without_redoing_finished_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path());
    cfg.stages = StageToggles { align: false, enrich: false, group: false, ..StageToggles::default() };
    let first = run_pipeline(&cfg);
    assert_eq!(first.stage(Stage::Align).unwrap().status, StageStatus::Disabled);
    assert!(first.stage(Stage::Segment).unwrap().new_work > 0);

    cfg.stages = StageToggles::default();
    let resumed = run_pipeline(&cfg);
    assert!(!resumed.partial);
    assert_eq!(resumed.stage(Stage::Ingest).unwrap().new_work, 0);
    assert_eq!(resumed.stage(Stage::Segment).unwrap().new_work, 0);
    for stage in [Stage::Align, Stage::Enrich, Stage::Group] {
        assert!(resumed.stage(stage).unwrap().new_work > 0, "{stage}");
    }

    let fresh_dir = tempfile::tempdir().unwrap();
    let fresh = setup(fresh_dir.path());
    assert!(!run_pipeline(&fresh).partial);
    assert_eq!(narrations(&cfg, StoreName::Grouped), narrations(&fresh, StoreName::Grouped));
}

#[test]
fn failed_stage_halts_later_stages_and_rerun_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let books = dir.path().join("books/b1.txt");
    let saved = std::fs::read(&books).unwrap();
    std::fs::remove_file(&books).unwrap();

    let broken = run_pipeline(&cfg);
    assert!(broken.partial);
    assert_eq!(broken.stage(Stage::Ingest).unwrap().status, StageStatus::Failed);
    assert!(Stage::ALL[1..].iter().all(|s| broken.stage(*s).unwrap().status == StageStatus::NotRun));
    assert!(!dir.path().join("store/run_manifest.toml").exists());

    std::fs::write(&books, saved).unwrap();
    let fixed = run_pipeline(&cfg);
    assert!(!fixed.partial, "{fixed}");
    assert!(dir.path().join("store/run_manifest.toml").exists());
}
