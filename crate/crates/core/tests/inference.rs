mod common;

use common::*;
use xcmine::ann::IndexMode;
use xcmine::encoder::BagOfEmbeddings;
use xcmine::infer::{
    build_fusion_training_set, fit_tree, format_predictions, parse_predictions, shortlist_size, FusionTree,
    Predictor, TreeParams,
};
use xcmine::trainer::{train_m1, train_m2};

#[test]
fn shortlist_rule() {
    assert_eq!(shortlist_size(5, None, 1000), 100);
    assert_eq!(shortlist_size(80, None, 1000), 160);
    assert_eq!(shortlist_size(5, None, 30), 30);
    assert_eq!(shortlist_size(5, Some(3), 30), 5);
    assert_eq!(shortlist_size(5, Some(12), 30), 12);
}

#[test]
fn fused_predictions_round_trip_through_tsv() {
    let ds = toy_task();
    let mut enc = BagOfEmbeddings::random(ds.num_features(), 8, 9).unwrap();
    train_m1(&ds, &mut enc, &toy_config(5, 9)).unwrap();
    let (bank, _) = train_m2(&ds, &enc, &toy_config(5, 9)).unwrap();
    let pred = Predictor::new(&enc, &bank, ds.label_features(), ds.label_frequencies(), IndexMode::Exact).unwrap();
    let ys: Vec<Vec<usize>> = (0..ds.num_points()).map(|i| ds.positives(i).to_vec()).collect();
    let samples = build_fusion_training_set(&pred, ds.points(), &ys, 4).unwrap();
    assert!(samples.iter().any(|s| s.target == 1.0));
    let tree = fit_tree(&samples, &TreeParams::default()).unwrap();
    let tree = FusionTree::from_bytes(&tree.to_bytes()).unwrap();
    let pred = pred.with_tree(Some(tree));
    let out = pred.predict_batch(ds.points(), 3).unwrap();
    for row in &out {
        assert_eq!(row.len(), 3);
        assert!(row.windows(2).all(|w| w[0].1 >= w[1].1));
    }
    let parsed = parse_predictions(&format_predictions(&out)).unwrap();
    let ids: Vec<Vec<usize>> = out.iter().map(|r| r.iter().map(|p| p.0).collect()).collect();
    assert_eq!(parsed, ids);
    assert!(pred.predict(ds.point(0), 0).is_err());
}
