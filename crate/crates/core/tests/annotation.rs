use std::collections::{BTreeSet, HashMap};

use scopelens::annotation::{
    AnnotationService, ImageSource, RecordStore, Submission, SubmitError, UnitResponse, TASK_SIZE,
};
use scopelens::{Image, Result, SemanticGroup, Unit};

struct Solid;

impl ImageSource for Solid {
    fn render(&self, _unit: &Unit, image_id: usize) -> Result<Image> {
        Ok(Image::filled(4, 4, [image_id as u8, 0, 0]))
    }
}

fn service(store: RecordStore) -> AnnotationService {
    let mut responses = HashMap::new();
    for (layer, ch) in [("pool5", 0), ("pool5", 1), ("conv4", 0)] {
        let rs = (0..100)
            .map(|i| UnitResponse {
                image_id: i,
                score: ((i * 37 + ch * 11) % 100) as f32,
                negative_score: None,
            })
            .collect();
        responses.insert(Unit::new(layer, ch), rs);
    }
    AnnotationService::new(responses, Box::new(Solid), store)
}

fn planted_of(svc: &AnnotationService, unit: &Unit, seed: u64) -> Vec<usize> {
    // lowest three scores are the planted negatives; find their entry indices
    let payload = svc.task(unit, seed).unwrap();
    let lowest: BTreeSet<String> = (0..100)
        .filter(|i| ((i * 37 + unit.channel * 11) % 100) < 3)
        .map(|i| format!("/img/{}-{}-{}", unit.layer, unit.channel, i))
        .collect();
    payload
        .entries
        .iter()
        .filter(|e| lowest.contains(&e.image))
        .map(|e| e.index)
        .collect()
}

fn submission(task_id: &str, rejected: Vec<usize>, category: &str) -> Submission {
    Submission {
        task_id: task_id.to_string(),
        annotator: "tester".into(),
        concept: "bed".into(),
        category: category.into(),
        rejected,
    }
}

#[test]
fn precision_and_quality_control_through_the_service() {
    let svc = service(RecordStore::in_memory());
    let unit = Unit::new("pool5", 0);
    let task = svc.task(&unit, 3).unwrap();
    assert_eq!(task.entries.len(), TASK_SIZE);
    let planted = planted_of(&svc, &unit, 3);
    assert_eq!(planted.len(), 3);

    let err = svc.submit(&submission(&task.task_id, planted[..2].to_vec(), "objects")).unwrap_err();
    assert!(matches!(err, SubmitError::QualityControl { .. }));

    let mut rejected = planted.clone();
    rejected.extend((0..63).filter(|i| !planted.contains(i)).take(15));
    let rec = svc.submit(&submission(&task.task_id, rejected, "objects")).unwrap();
    assert_eq!(rec.precision, 0.75);
    assert_eq!(rec.category, SemanticGroup::Objects);

    let dup = svc.submit(&submission(&task.task_id, planted.clone(), "objects")).unwrap_err();
    assert!(matches!(dup, SubmitError::Conflict(_)));
}

#[test]
fn unknown_task_and_category() {
    let svc = service(RecordStore::in_memory());
    assert!(matches!(
        svc.submit(&submission("pool5:0#9", vec![], "objects")),
        Err(SubmitError::UnknownTask(_))
    ));
    let unit = Unit::new("pool5", 1);
    let task = svc.task(&unit, 0).unwrap();
    let planted = planted_of(&svc, &unit, 0);
    assert!(matches!(
        svc.submit(&submission(&task.task_id, planted, "furniture")),
        Err(SubmitError::Validation(_))
    ));
}

#[test]
fn tasks_are_idempotent_per_seed() {
    let svc = service(RecordStore::in_memory());
    let unit = Unit::new("conv4", 0);
    assert_eq!(svc.task(&unit, 5).unwrap(), svc.task(&unit, 5).unwrap());
    assert_ne!(svc.task(&unit, 5).unwrap().entries, svc.task(&unit, 6).unwrap().entries);
}

#[test]
fn served_images_are_png() {
    let svc = service(RecordStore::in_memory());
    let task = svc.task(&Unit::new("pool5", 0), 1).unwrap();
    let png = svc.image_png(&task.entries[0].image).unwrap();
    assert!(png.starts_with(b"\x89PNG"));
    assert!(svc.image_png("/img/pool5-0-100").is_err());
}

#[test]
fn layer_distribution_sums_to_hundred() {
    let svc = service(RecordStore::in_memory());
    for (ch, seed, cat) in [(0, 1, "objects"), (1, 1, "scenes"), (0, 2, "object parts")] {
        let unit = Unit::new("pool5", ch);
        let task = svc.task(&unit, seed).unwrap();
        let planted = planted_of(&svc, &unit, seed);
        svc.submit(&submission(&task.task_id, planted, cat)).unwrap();
    }
    let d = svc.layer_stats("pool5", 0.75);
    assert_eq!(d.units_passing, 3);
    assert!((d.percentages.iter().sum::<f64>() - 100.0).abs() <= 0.1);
    assert!(svc.layer_stats("conv4", 0.75).empty);
}

#[test]
fn records_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.ndjson");
    let unit = Unit::new("pool5", 0);
    let task_id = {
        let svc = service(RecordStore::open(&path).unwrap());
        let task = svc.task(&unit, 4).unwrap();
        let planted = planted_of(&svc, &unit, 4);
        svc.submit(&submission(&task.task_id, planted, "objects")).unwrap();
        task.task_id
    };
    let svc = service(RecordStore::open(&path).unwrap());
    assert_eq!(svc.records().len(), 1);
    svc.task(&unit, 4).unwrap();
    let planted = planted_of(&svc, &unit, 4);
    assert!(matches!(
        svc.submit(&submission(&task_id, planted, "objects")),
        Err(SubmitError::Conflict(_))
    ));
}

#[test]
fn concurrent_submissions_keep_one_record_per_task() {
    let svc = std::sync::Arc::new(service(RecordStore::in_memory()));
    let unit = Unit::new("pool5", 1);
    let task = svc.task(&unit, 8).unwrap();
    let planted = planted_of(&svc, &unit, 8);
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let svc = svc.clone();
            let sub = submission(&task.task_id, planted.clone(), "objects");
            std::thread::spawn(move || svc.submit(&sub).is_ok())
        })
        .collect();
    let accepted = handles.into_iter().map(|h| h.join().unwrap()).filter(|&ok| ok).count();
    assert_eq!(accepted, 1);
    assert_eq!(svc.records().len(), 1);
}
