use fedchain_core::capsnet::{train_local, CapsNet};
use fedchain_core::chain::{retrieve_model, verify_file, AcceptanceRule, Keypair, Ledger, TxKind};
use fedchain_core::ctnorm::{write_ctv1, CtVolume, Ctv1};
use fedchain_core::feddp::FedConfig;
use fedchain_core::simnet::*;
use fedchain_core::Error;

fn small_config(seed: u64, n_hospitals: usize, rounds: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.seed = seed;
    cfg.experiment.n_hospitals = n_hospitals;
    cfg.experiment.rounds = rounds;
    cfg.dataset = DatasetSpec::Blobs {
        dim: 8,
        separation: 0.75,
        split: SplitSizes { n_train: 60, n_validation: 30, n_test: 30 },
    };
    cfg
}

struct Setup {
    splits: DataSplits,
    hospitals: Vec<HospitalSim>,
    federation: Federation,
    initial: CapsNet,
}

fn setup(cfg: &ExperimentConfig) -> Setup {
    let seed = cfg.experiment.seed;
    let splits = load_dataset(&cfg.dataset, seed).unwrap();
    let parts = partition_dataset(&splits.train, cfg.experiment.n_hospitals, &cfg.experiment.partition, seed).unwrap();
    let initial = CapsNet::init(cfg.model_config(splits.input_len).unwrap(), seed).unwrap();
    let hospitals = make_hospitals(seed, &parts, &initial).unwrap();
    let federation = Federation::new(
        initial.clone(),
        &hospitals,
        &cfg.chain.category,
        splits.validation.clone(),
        splits.test.clone(),
        Ledger::in_memory(cfg.chain.genesis_timestamp),
    )
    .unwrap();
    Setup { splits, hospitals, federation, initial }
}

fn without_wall_time(r: &RoundReport) -> RoundReport {
    RoundReport { wall_time_ms: 0.0, ..r.clone() }
}

#[test]
fn single_hospital_round_equals_local_training() {
    let mut cfg = small_config(1, 1, 1);
    cfg.fed = FedConfig { clip_bound: f64::INFINITY, noise_sigma: 0.0, laplace_sensitivity: 0.0, ..FedConfig::default() };
    let mut s = setup(&cfg);
    let report = run_round(&mut s.federation, &mut s.hospitals, &cfg).unwrap();
    let h = &s.hospitals[0];
    let (oracle, _) = train_local(&s.initial, &h.partition, &cfg.trainer.train_params(), local_train_seed(1, &h.id(), 1)).unwrap();
    for (a, b) in oracle.params().data().iter().zip(s.federation.global.params().data()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert_eq!(report.accepted, 1);
    assert_eq!(report.leader, h.id());
    assert_eq!(h.model, s.federation.global);
}

#[test]
fn rounds_are_reproducible() {
    let cfg = small_config(2, 3, 3);
    let run = |cfg: &ExperimentConfig| {
        let mut s = setup(cfg);
        (0..3).map(|_| without_wall_time(&run_round(&mut s.federation, &mut s.hospitals, cfg).unwrap())).collect::<Vec<_>>()
    };
    assert_eq!(run(&cfg), run(&cfg));
}

#[test]
fn ledger_tracks_every_round() {
    let cfg = small_config(3, 3, 4);
    let mut s = setup(&cfg);
    let mut last = None;
    for r in 1..=4 {
        let rep = run_round(&mut s.federation, &mut s.hospitals, &cfg).unwrap();
        assert_eq!(rep.block_height, r);
        assert!(rep.accepted <= rep.sampled && rep.sampled <= 3);
        assert_eq!(rep.accepted + rep.rejected, rep.sampled);
        assert!((0.0..=1.0).contains(&rep.accuracy) && rep.wall_time_ms >= 0.0);
        last = Some(rep);
    }
    let ledger = &s.federation.ledger;
    assert_eq!(ledger.height(), 4);
    assert!(ledger.verify_chain());
    let last = last.unwrap();
    let found = retrieve_model(ledger, &s.federation.communities, "covid-ct", &s.hospitals[1].id()).unwrap();
    assert_eq!(found.model_hash, last.model_hash);
    assert_eq!(found.model_hash, s.federation.global.model_hash());
    assert_eq!((found.height, found.round), (4, 4));
    let block = ledger.block(4).unwrap();
    assert_eq!(block.tx_list.iter().filter(|t| t.kind == TxKind::ModelSubmission).count(), 3);
    assert_eq!(block.proposer, last.leader);
}

#[test]
fn message_log_carries_only_model_artifacts() {
    let cfg = small_config(4, 3, 2);
    let mut s = setup(&cfg);
    for _ in 0..2 {
        run_round(&mut s.federation, &mut s.hospitals, &cfg).unwrap();
    }
    let log = &s.federation.log;
    log.audit(s.initial.params().len()).unwrap();
    for m in log.messages() {
        match (&m.from, &m.payload) {
            (Endpoint::Hospital(_), Payload::Weights { len, .. }) => assert_eq!(*len, s.initial.params().len()),
            (Endpoint::Hospital(_), Payload::Transaction { .. }) => {}
            (Endpoint::Hospital(_), other) => panic!("hospital sent {other:?}"),
            _ => {}
        }
        if let Endpoint::Hospital(a) = m.from {
            assert_ne!(m.to, Endpoint::Hospital(a));
        }
    }
    assert!(log.audit(s.initial.params().len() + 1).is_err());
    // A raw sample has the input's length, not the model's.
    assert_ne!(s.splits.input_len, s.initial.params().len());
}

#[test]
fn subsampling_limits_participants() {
    let mut cfg = small_config(5, 3, 1);
    cfg.fed.subsample = Some(2);
    let mut s = setup(&cfg);
    let rep = run_round(&mut s.federation, &mut s.hospitals, &cfg).unwrap();
    assert_eq!(rep.sampled, 2);
    assert_eq!(rep.providers, 3);
    let submissions = s.federation.ledger.block(1).unwrap().tx_list.iter().filter(|t| t.kind == TxKind::ModelSubmission).count();
    assert_eq!(submissions, 2);
}

#[test]
fn all_rejected_keeps_global_model() {
    let mut cfg = small_config(6, 2, 1);
    cfg.chain.acceptance = AcceptanceRule::Fixed(0.0);
    let mut s = setup(&cfg);
    let rep = run_round(&mut s.federation, &mut s.hospitals, &cfg).unwrap();
    assert_eq!((rep.accepted, rep.rejected), (0, 2));
    assert_eq!(s.federation.global, s.initial);
    assert_eq!(s.federation.ledger.height(), 1);
}

#[test]
fn unregistered_hospital_is_named_in_the_error() {
    let cfg = small_config(7, 2, 1);
    let mut s = setup(&cfg);
    s.hospitals[1].keypair = Keypair::derive(99, "intruder");
    let intruder = s.hospitals[1].id();
    match run_round(&mut s.federation, &mut s.hospitals, &cfg) {
        Err(Error::UnknownNode(id)) => assert_eq!(id, intruder.to_hex()),
        other => panic!("expected UnknownNode, got {other:?}"),
    }
}

#[test]
fn one_round_one_provider_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(8, 1, 1);
    cfg.experiment.output_dir = dir.path().to_path_buf();
    let out = run_experiment(&cfg).unwrap();
    let csv = std::fs::read_to_string(&out.csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[1].starts_with("1,1,"));
    let jsonl = std::fs::read_to_string(&out.jsonl).unwrap();
    let back: RoundReport = serde_json::from_str(jsonl.trim()).unwrap();
    assert_eq!(back, out.reports[0]);
    assert!(verify_file(&out.ledgers[0]).unwrap());
    assert!(out.baseline.is_none());
}

#[test]
fn provider_sweep_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.seed = 9;
    cfg.experiment.rounds = 3;
    cfg.experiment.output_dir = dir.path().to_path_buf();
    cfg.experiment.centralized_baseline = true;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.reports.len(), 9);
    assert_eq!(out.ledgers.len(), 3);
    let first = out.reports[0].accuracy;
    assert!(out.reports.iter().any(|r| r.accuracy != first));
    let time = |p: usize| out.reports.iter().filter(|r| r.providers == p).map(|r| r.wall_time_ms).sum::<f64>();
    assert!(time(3) > time(1), "p=1 {} ms, p=3 {} ms", time(1), time(3));
    assert!(out.baseline.is_some());
    assert!(dir.path().join("baseline.json").exists());

    // Rerunning into the same directory replaces the files.
    let again = run_experiment(&cfg).unwrap();
    assert_eq!(again.reports.iter().map(without_wall_time).collect::<Vec<_>>(), out.reports.iter().map(without_wall_time).collect::<Vec<_>>());
}

#[test]
fn skewed_partition_experiment() {
    let mut cfg = small_config(10, 3, 2);
    cfg.experiment.partition = PartitionScheme::SizeSkewed(vec![0.6, 0.3, 0.1]);
    let s = setup(&cfg);
    let sizes: Vec<usize> = s.hospitals.iter().map(|h| h.partition.len()).collect();
    assert_eq!(sizes, vec![36, 18, 6]);
}

#[test]
fn conv_images_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(11, 2, 2);
    cfg.experiment.providers = vec![2];
    cfg.experiment.output_dir = dir.path().to_path_buf();
    cfg.dataset = DatasetSpec::Images { size: 12, split: SplitSizes { n_train: 40, n_validation: 10, n_test: 10 } };
    cfg.trainer.kernel = 4;
    cfg.trainer.stride = 4;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.reports.len(), 2);
}

#[test]
fn ctv1_manifest_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = String::from("path,label\n");
    for k in 0..12 {
        let label = k % 2;
        let hu: Vec<f32> = (0..512).map(|i| if label == 1 && i % 7 == 0 { 200.0 } else { -850.0 + (i % 5) as f32 }).collect();
        let v = CtVolume::new([8, 8, 8], [2.0; 3], hu).unwrap();
        write_ctv1(dir.path().join(format!("scan{k}.ctv")), &Ctv1::from(&v)).unwrap();
        manifest.push_str(&format!("scan{k}.ctv,{label}\n"));
    }
    std::fs::write(dir.path().join("manifest.csv"), manifest).unwrap();
    let text = r#"
[experiment]
seed = 3
n_hospitals = 2
rounds = 2
providers = [2]
output_dir = "out"

[trainer]
epochs = 1

[dataset]
kind = "ctv1"
manifest = "manifest.csv"
extent_mm = [16.0, 16.0, 16.0]
spacing_mm = [4.0, 4.0, 4.0]
validation_fraction = 0.25
test_fraction = 0.25
"#;
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, text).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.reports.len(), 2);
    assert!(dir.path().join("out/rounds.csv").exists());
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let mut cfg = small_config(12, 1, 1);
    cfg.experiment.output_dir = blocker.join("sub");
    assert!(matches!(run_experiment(&cfg), Err(Error::Io { .. })));
}
