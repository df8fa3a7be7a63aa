use gamps_core::envs::*;
use gamps_core::mdp::collect_dataset;
use gamps_core::rng::rng_from_seed;
use gamps_core::*;

#[test]
fn datasets_round_trip_through_ndjson() {
    let golf = Minigolf::new(MinigolfConfig::default()).unwrap();
    let data = collect_dataset(&golf, &golf.initial_policy(), 40, golf.horizon(), 1, "rbf").unwrap();
    let mut buf = Vec::new();
    data.write_ndjson(&mut buf).unwrap();
    let back: Dataset<f64, f64> = Dataset::read_ndjson(buf.as_slice()).unwrap();
    assert_eq!(back, data);

    let grid = TwoAreasGridworld::new(GridworldConfig::default()).unwrap();
    let pi = grid.initial_policy(&mut rng_from_seed(2));
    let data = collect_dataset(&grid, &pi, 40, grid.horizon(), 3, "softmax").unwrap();
    let mut buf = Vec::new();
    data.write_ndjson(&mut buf).unwrap();
    assert_eq!(Dataset::<usize, usize>::read_ndjson(buf.as_slice()).unwrap(), data);
}

#[test]
fn malformed_datasets_are_rejected() {
    let cases = [
        "",
        "{\"format\":\"other\",\"version\":1,\"behavior_policy_id\":\"x\",\"trajectories\":0}\n",
        "{\"format\":\"gamps-dataset\",\"version\":1,\"behavior_policy_id\":\"x\",\"trajectories\":2}\n",
        "{\"format\":\"gamps-dataset\",\"version\":1,\"behavior_policy_id\":\"x\",\"trajectories\":1}\n{\"steps\":[],\"behavior_logps\":[],\"terminal\":false}\n",
    ];
    for text in cases {
        assert!(Dataset::<usize, usize>::read_ndjson(text.as_bytes()).is_err());
    }
}

#[test]
fn policy_records_round_trip() {
    let mut rng = rng_from_seed(4);
    let pi = TabularSoftmaxPolicy::random(3, 2, 1.0, &mut rng);
    let json = serde_json::to_string(&pi.to_record()).unwrap();
    let record: PolicyRecord = serde_json::from_str(&json).unwrap();
    let mut other = TabularSoftmaxPolicy::uniform(3, 2);
    other.load_record(&record).unwrap();
    assert_eq!(other.params(), pi.params());

    let mut rbf = RbfGaussianPolicy::equally_spaced(0.0, 1.0, 3).unwrap();
    assert!(rbf.load_record(&record).is_err());
}
