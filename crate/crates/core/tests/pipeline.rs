//! End-to-end behaviour of the fold pipeline on the synthetic demo corpus.

use std::collections::BTreeMap;

use adsm_core::demo::{class_of, demo_method, generate, DemoConfig, CLASSES};
use adsm_core::embed::Space;
use adsm_core::eval::{run_cv, run_fold, sweep, SweepAxis, TrainedModel};
use adsm_core::tagger::autotag;

fn demo() -> adsm_core::demo::DemoCorpus {
    generate(&DemoConfig::default()).unwrap()
}

#[test]
fn every_space_separates_the_demo_classes() {
    let d = demo();
    for space in [
        Space::Audio,
        Space::Adsm,
        Space::AdsmAutotag,
        Space::Fusion,
        Space::FusionAutotag,
    ] {
        for fold in d.corpus.folds() {
            let out = run_fold(&d.corpus, &d.features, fold, &demo_method(space), 3).unwrap();
            assert_eq!(out.accuracy, 1.0, "{space} fold {}", fold.index);
            assert_eq!(out.verdicts.len(), fold.test.len());
        }
    }
}

#[test]
fn fusion_boundaries_reproduce_audio_and_adsm_verdicts() {
    let d = demo();
    for fold in d.corpus.folds() {
        let verdicts = |space, w| {
            let m = adsm_core::eval::MethodSpec {
                w,
                ..demo_method(space)
            };
            run_fold(&d.corpus, &d.features, fold, &m, 5)
                .unwrap()
                .verdicts
        };
        assert_eq!(verdicts(Space::Fusion, 0.0), verdicts(Space::Audio, 0.9));
        assert_eq!(verdicts(Space::Fusion, 1.0), verdicts(Space::Adsm, 0.9));
    }
}

#[test]
fn autotag_with_perfect_tagger_matches_groundtruth_adsm() {
    let d = demo();
    for fold in d.corpus.folds() {
        let a = run_fold(&d.corpus, &d.features, fold, &demo_method(Space::Adsm), 9).unwrap();
        let b = run_fold(
            &d.corpus,
            &d.features,
            fold,
            &demo_method(Space::AdsmAutotag),
            9,
        )
        .unwrap();
        assert_eq!(a.accuracy, b.accuracy);
    }
}

#[test]
fn held_out_clips_get_their_class_tag_first() {
    let d = demo();
    let tags_of: BTreeMap<&str, [&str; 2]> = CLASSES.iter().map(|(c, t)| (*c, *t)).collect();
    for fold in d.corpus.folds() {
        let train = d.corpus.training_clips(fold);
        let model =
            TrainedModel::train(&d.corpus, &d.features, &train, &demo_method(Space::Adsm), 1)
                .unwrap();
        let tm = model.tags.as_ref().unwrap();
        for id in fold.test_clips() {
            let audio = model.audio_embedding(&d.features[&id]).unwrap();
            let top = &autotag(&audio, tm, 2).unwrap()[0];
            assert!(
                tags_of[class_of(&id)].contains(&top.tag.as_str()),
                "{id} tagged {}",
                top.tag
            );
        }
    }
}

#[test]
fn no_test_clip_leaks_into_training() {
    let d = demo();
    let mut m = demo_method(Space::Fusion);
    m.svd_rank = Some(4);
    for fold in d.corpus.folds() {
        let out = run_fold(&d.corpus, &d.features, fold, &m, 2).unwrap();
        let held = fold.test_clips();
        for set in [
            &out.audit.vocab_clips,
            &out.audit.norm_clips,
            &out.audit.tag_clips,
            &out.audit.svd_clips,
        ] {
            assert!(!set.is_empty());
            assert!(set.is_disjoint(&held));
        }
    }
}

#[test]
fn cross_validation_is_reproducible() {
    let d = demo();
    let m = demo_method(Space::Audio);
    let a = run_cv(&d.corpus, &d.features, &m, 2, 42).unwrap();
    let b = run_cv(&d.corpus, &d.features, &m, 2, 42).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.runs.len(), 4);
    assert_eq!(a.seeds, vec![42, 43]);
}

#[test]
fn single_value_sweep_equals_cross_validation() {
    let d = demo();
    let m = demo_method(Space::Fusion);
    let points = sweep(&d.corpus, &d.features, &m, SweepAxis::W, &[0.9], 1, 7).unwrap();
    assert_eq!(
        points[0].result,
        run_cv(&d.corpus, &d.features, &m, 1, 7).unwrap()
    );
}
