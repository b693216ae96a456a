use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use seqgen::data::{
    ingest_reader, preprocess, read_bundle, split, write_bundle, BundleMeta, FilterMode, InputFormat, InteractionLog,
    Partition, PreprocessConfig, BUNDLE_VERSION,
};

/// Removes one violating user or item at a time until none is left. The
/// surviving set is the unique largest one meeting both thresholds.
fn core_oracle(events: &[(u32, u32)], min_user: usize, min_item: usize) -> BTreeSet<(u32, u32, usize)> {
    let mut alive: Vec<bool> = vec![true; events.len()];
    loop {
        let mut per_user: BTreeMap<u32, usize> = BTreeMap::new();
        let mut per_item: BTreeMap<u32, usize> = BTreeMap::new();
        for (e, &(u, i)) in events.iter().enumerate() {
            if alive[e] {
                *per_user.entry(u).or_default() += 1;
                *per_item.entry(i).or_default() += 1;
            }
        }
        let bad_item = per_item.iter().find(|(_, &c)| c < min_item).map(|(&i, _)| i);
        let bad_user = per_user.iter().find(|(_, &c)| c < min_user).map(|(&u, _)| u);
        match (bad_item, bad_user) {
            (Some(i), _) => events.iter().enumerate().filter(|(_, e)| e.1 == i).for_each(|(k, _)| alive[k] = false),
            (None, Some(u)) => events.iter().enumerate().filter(|(_, e)| e.0 == u).for_each(|(k, _)| alive[k] = false),
            (None, None) => break,
        }
    }
    events.iter().enumerate().filter(|(k, _)| alive[*k]).map(|(k, &(u, i))| (u, i, k)).collect()
}

fn csv_of(events: &[(u32, u32)]) -> String {
    let mut s = String::from("user,item,timestamp\n");
    for (t, (u, i)) in events.iter().enumerate() {
        s.push_str(&format!("u{u},i{i},{t}\n"));
    }
    s
}

fn format() -> InputFormat {
    InputFormat {
        delimiter: ',',
        has_header: true,
        user_col: "user".into(),
        item_col: "item".into(),
        timestamp_col: "timestamp".into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixpoint_filter_keeps_exactly_the_core(
        events in proptest::collection::vec((0u32..12, 0u32..15), 1..200),
        min_user in 1usize..6,
        min_item in 1usize..6,
    ) {
        let raw = ingest_reader(csv_of(&events).as_bytes(), &format()).unwrap();
        let cfg = PreprocessConfig { min_user_len: min_user, min_item_count: min_item, ..Default::default() };
        let core = core_oracle(&events, min_user, min_item);
        match preprocess(&raw, &cfg) {
            Err(_) => prop_assert!(core.is_empty()),
            Ok(log) => {
                // rebuild (raw user, raw item) pairs from the dense log, in time order per user
                let cat = log.catalog();
                let mut got: Vec<(String, String)> = Vec::new();
                for u in 0..log.user_count() {
                    for &i in log.sequence(u) {
                        got.push((cat.user_name(u as u32).unwrap().to_owned(), cat.item_name(i).unwrap().to_owned()));
                    }
                }
                let mut want: Vec<(u32, u32, usize)> = core.into_iter().collect();
                want.sort_by_key(|&(u, _, k)| (events.iter().position(|e| e.0 == u).unwrap(), k));
                let want: Vec<(String, String)> = want.iter().map(|(u, i, _)| (format!("u{u}"), format!("i{i}"))).collect();
                prop_assert_eq!(got, want);
                let s = log.stats();
                prop_assert_eq!(s.interactions, log.flat_items().len());
                prop_assert!((s.density - s.interactions as f64 / (s.users * s.items) as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn split_holds_out_the_tail(
        lens in proptest::collection::vec(3usize..20, 2..40),
        n in 1usize..3,
        seed in 0u64..100,
    ) {
        let seqs: Vec<Vec<u32>> = lens.iter().enumerate().map(|(u, &l)| (0..l).map(|j| ((u + j) % 9 + 1) as u32).collect()).collect();
        let log = InteractionLog::from_sequences(9, &seqs).unwrap();
        let sp = split(&log, n, 0.5, seed).unwrap();
        prop_assert_eq!(sp.users.len(), seqs.len());
        let val = sp.partition(Partition::Validation).count();
        prop_assert_eq!(val + sp.partition(Partition::Test).count(), seqs.len());
        for u in &sp.users {
            let full = &seqs[u.user as usize];
            prop_assert_eq!(u.holdout.as_slice(), &full[full.len() - n..]);
            prop_assert_eq!(u.train.as_slice(), &full[..full.len() - n]);
        }
        prop_assert_eq!(split(&log, n, 0.5, seed).unwrap(), sp);
    }
}

#[test]
fn one_pass_can_leave_rare_items() {
    // dropping items 3 and 4 shortens users 1 and 2; removing them leaves
    // items 1 and 2 with a single interaction, which only the fixpoint notices
    let events: Vec<(u32, u32)> = vec![(0, 1), (0, 2), (1, 1), (1, 3), (2, 2), (2, 4), (3, 5), (3, 6), (4, 5), (4, 6)];
    let raw = ingest_reader(csv_of(&events).as_bytes(), &format()).unwrap();
    let base = PreprocessConfig { min_user_len: 2, min_item_count: 2, ..Default::default() };
    assert_eq!(preprocess(&raw, &base).unwrap().user_count(), 2);
    let one = preprocess(&raw, &PreprocessConfig { filter_mode: FilterMode::OnePass, ..base }).unwrap();
    assert_eq!(one.user_count(), 3);
}

#[test]
fn ingest_reports_the_bad_line() {
    let err = ingest_reader("user,item,timestamp\nu1,i1,3\nu1,i2,x\n".as_bytes(), &format()).unwrap_err();
    assert!(err.to_string().contains("`x`"), "{err}");
    let err = ingest_reader("a,b,c\n".as_bytes(), &format()).unwrap_err();
    assert!(err.to_string().contains("user"), "{err}");
}

#[test]
fn ties_keep_file_order_and_dedup_keeps_the_first() {
    let csv = "user,item,timestamp\nu,a,5\nu,b,5\nu,a,6\nu,c,1\n";
    let raw = ingest_reader(csv.as_bytes(), &format()).unwrap();
    let cfg = PreprocessConfig { min_user_len: 1, min_item_count: 1, ..Default::default() };
    let log = preprocess(&raw, &cfg).unwrap();
    let names: Vec<&str> = log.sequence(0).iter().map(|&i| log.catalog().item_name(i).unwrap()).collect();
    assert_eq!(names, ["c", "a", "b", "a"]);
    let log = preprocess(&raw, &PreprocessConfig { dedup: true, ..cfg }).unwrap();
    assert_eq!(log.sequence(0).len(), 3);
}

#[test]
fn bundle_roundtrip_and_idempotent_write() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = vec![vec![1, 2, 3], vec![3, 2, 1, 4]];
    let log = InteractionLog::from_sequences(4, &seqs).unwrap();
    let meta = BundleMeta {
        version: BUNDLE_VERSION,
        source: "x.csv".into(),
        input_format: format(),
        preprocess: PreprocessConfig::default(),
        stats: log.stats(),
        n_holdout: 1,
        val_fraction: 0.5,
        seed: 0,
    };
    assert!(write_bundle(dir.path(), &log, &meta).unwrap());
    assert!(!write_bundle(dir.path(), &log, &meta).unwrap());
    let (back, m) = read_bundle(dir.path()).unwrap();
    assert_eq!(back, log);
    assert_eq!(m, meta);
}

#[test]
fn half_of_a_thousand_users_go_to_validation() {
    let seqs: Vec<Vec<u32>> = (0..1000).map(|u| (0..4).map(|t| ((u + t) % 7 + 1) as u32).collect()).collect();
    let log = InteractionLog::from_sequences(7, &seqs).unwrap();
    let s = split(&log, 1, 0.5, 99).unwrap();
    let val = s.partition(Partition::Validation).count();
    assert!((400..=600).contains(&val), "{val}");
    assert_eq!(val + s.partition(Partition::Test).count(), 1000);
}
