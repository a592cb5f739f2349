use super::*;
use proptest::prelude::*;

fn reg() -> Registry {
    Registry::builtin()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn ten_bytes_are_too_small_for_every_type() {
    let r = reg();
    for t in r.types() {
        assert_eq!(
            validate_sample(&[b'a'; 10], t),
            Verdict::Rejected(RejectReason::TooSmall),
            "{}",
            t.label
        );
    }
}

#[test]
fn pebin_requires_mz() {
    let r = reg();
    let pe = r.lookup_label("pebin").unwrap();
    let mut data = vec![0u8; 64];
    assert_eq!(validate_sample(&data, pe), Verdict::Rejected(RejectReason::MagicMismatch));
    data[..2].copy_from_slice(b"MZ");
    assert_eq!(validate_sample(&data, pe), Verdict::Accepted);
}

#[test]
fn python_source_passes() {
    let r = reg();
    let py = r.lookup_label("python").unwrap();
    let src = b"import os\n\ndef main():\n    print(os.getcwd())\n";
    assert_eq!(validate_sample(src, py), Verdict::Accepted);
}

#[test]
fn text_gate_rejects_control_bytes_and_bad_utf8() {
    let r = reg();
    let py = r.lookup_label("python").unwrap();
    let mut nul = b"print('hello world')\n".to_vec();
    nul.push(0);
    assert_eq!(validate_sample(&nul, py), Verdict::Rejected(RejectReason::NotText));
    let mut bad = b"print('hello world')\n".to_vec();
    bad.push(0xC3);
    assert_eq!(validate_sample(&bad, py), Verdict::Rejected(RejectReason::NotText));
    let accented = "print('caf\u{e9} cr\u{e8}me')\r\n\tpass\n";
    assert_eq!(validate_sample(accented.as_bytes(), py), Verdict::Accepted);
}

#[test]
fn bad_ranges_are_rejected() {
    let mut g = rng(0);
    assert!(matches!(gen_synthetic_unknown(&mut g, 15, 100), Err(CorpusError::BadRange { .. })));
    assert!(matches!(gen_synthetic_txt(&mut g, 200, 100), Err(CorpusError::BadRange { .. })));
}

#[test]
fn unknown_bytes_look_uniform() {
    // Pearson chi-square over 256 bins; the 0.999 quantile of chi2(255) is
    // about 330.5.
    let mut g = rng(7);
    let mut hist = [0u64; 256];
    let mut total = 0u64;
    while total < 1 << 20 {
        for b in gen_synthetic_unknown(&mut g, 4096, 65536).unwrap() {
            hist[b as usize] += 1;
            total += 1;
        }
    }
    let expected = total as f64 / 256.0;
    let chi2: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 330.5, "chi2 = {chi2}");
}

#[test]
fn lengths_are_log_uniform() {
    // for log-uniform on [16, 65536] half the mass lies below sqrt(16·65536) = 1024
    let mut g = rng(3);
    let n = 4000;
    let below = (0..n)
        .filter(|_| gen_synthetic_unknown(&mut g, 16, 65536).unwrap().len() < 1024)
        .count();
    let frac = below as f64 / n as f64;
    assert!((frac - 0.5).abs() < 0.04, "{frac}");
}

#[test]
fn txt_lines_and_words_stay_in_bounds() {
    let mut g = rng(11);
    for _ in 0..50 {
        let t = gen_synthetic_txt(&mut g, 16, 20000).unwrap();
        for line in t.split(|&b| b == b'\n') {
            assert!(line.len() <= 100);
            for w in line.split(|&b| b == b' ').filter(|w| !w.is_empty()) {
                assert!(w.len() <= 12, "{:?}", String::from_utf8_lossy(w));
            }
        }
    }
}

#[test]
fn toy_samples_pass_their_own_gates() {
    let r = reg();
    let mut g = rng(5);
    for label in TOY_LABELS {
        let ty = r.lookup_label(label).unwrap();
        for _ in 0..20 {
            let s = gen_toy_sample(label, &mut g).unwrap();
            assert_eq!(validate_sample(&s, ty), Verdict::Accepted, "{label}");
        }
    }
    assert!(matches!(gen_toy_sample("pdf", &mut g), Err(CorpusError::NoGenerator(_))));
}

proptest! {
    #[test]
    fn generators_are_deterministic_and_bounded(seed in any::<u64>(), min in 16usize..2000, extra in 0usize..4000) {
        let max = min + extra;
        let a = gen_synthetic_unknown(&mut rng(seed), min, max).unwrap();
        prop_assert_eq!(&a, &gen_synthetic_unknown(&mut rng(seed), min, max).unwrap());
        prop_assert!((min..=max).contains(&a.len()));
        let t = gen_synthetic_txt(&mut rng(seed), min, max).unwrap();
        prop_assert_eq!(&t, &gen_synthetic_txt(&mut rng(seed), min, max).unwrap());
        prop_assert!((min..=max).contains(&t.len()));
        prop_assert!(t.iter().all(|&b| b == 0x0A || (0x20..=0x7E).contains(&b)));
        let txt = reg();
        prop_assert_eq!(validate_sample(&t, txt.lookup_label("txt").unwrap()), Verdict::Accepted);
    }

    #[test]
    fn splits_are_disjoint_and_counted(seed in any::<u64>(), sizes in proptest::collection::vec(3usize..40, 1..5)) {
        let m = fake_manifest(&sizes);
        let s = split_dataset(&m, SplitCounts { train: 5, val: 3, test: 2 }, seed, 1).unwrap();
        prop_assert_eq!(s.entries.len(), m.entries.len());
        for (label, &n) in sizes.iter().enumerate() {
            let label = format!("t{label}");
            let count = |sp| s.entries.iter().filter(|e| e.label == label && e.split == sp).count();
            let assigned = count(Split::Train) + count(Split::Val) + count(Split::Test);
            prop_assert_eq!(assigned, n.min(10));
            prop_assert_eq!(count(Split::Unassigned), n - n.min(10));
        }
        let tally: usize = s.counts().values().sum();
        prop_assert_eq!(tally, s.entries.len());
    }
}

fn fake_manifest(sizes: &[usize]) -> Manifest {
    let entries = sizes
        .iter()
        .enumerate()
        .flat_map(|(l, &n)| {
            (0..n).map(move |i| Sample {
                path: format!("t{l}/{i:04}"),
                label: format!("t{l}"),
                split: Split::Unassigned,
                size: 100,
                origin: Origin::Real,
            })
        })
        .collect();
    Manifest::new(entries).unwrap()
}

#[test]
fn exact_partition_of_thirty() {
    let m = fake_manifest(&[30, 30]);
    let s = split_dataset(&m, SplitCounts { train: 10, val: 10, test: 10 }, 1, 1).unwrap();
    assert!(s.warnings.is_empty());
    for l in ["t0", "t1"] {
        for sp in [Split::Train, Split::Val, Split::Test] {
            assert_eq!(s.counts()[&(l.to_owned(), sp)], 10);
        }
    }
    assert!(s.in_split(Split::Unassigned).next().is_none());
    assert_eq!(s, split_dataset(&m, SplitCounts { train: 10, val: 10, test: 10 }, 1, 1).unwrap());
    assert_ne!(
        s.entries,
        split_dataset(&m, SplitCounts { train: 10, val: 10, test: 10 }, 2, 1).unwrap().entries
    );
}

#[test]
fn shortage_shrinks_proportionally_with_warning() {
    let m = fake_manifest(&[100, 14]);
    let s = split_dataset(&m, SplitCounts { train: 60, val: 20, test: 20 }, 0, 10).unwrap();
    let c = s.counts();
    assert_eq!(c[&("t0".to_owned(), Split::Train)], 60);
    // 14 of 100 requested: 60·14/100 = 8, 20·14/100 = 2, rest to test
    assert_eq!(c[&("t1".to_owned(), Split::Train)], 8);
    assert_eq!(c[&("t1".to_owned(), Split::Val)], 2);
    assert_eq!(c[&("t1".to_owned(), Split::Test)], 4);
    assert_eq!(s.warnings.len(), 1);
    assert!(s.warnings[0].starts_with("t1:"));
}

#[test]
fn below_floor_is_an_error() {
    let m = fake_manifest(&[100, 5]);
    let err = split_dataset(&m, SplitCounts { train: 60, val: 20, test: 20 }, 0, 10).unwrap_err();
    assert!(matches!(err, CorpusError::InsufficientSamples { available: 5, floor: 10, .. }));
}

#[test]
fn manifest_jsonl_round_trip() {
    let m = split_dataset(&fake_manifest(&[6, 4]), SplitCounts { train: 2, val: 1, test: 1 }, 9, 1).unwrap();
    let text = m.to_jsonl();
    assert!(text.lines().next().unwrap().contains("\"split\""));
    let back = Manifest::from_jsonl(&text).unwrap();
    assert_eq!(back.entries, m.entries);
    assert_eq!(back.digest(), m.digest());
    assert_eq!(m.digest().len(), 64);
}

#[test]
fn duplicate_paths_are_rejected() {
    let mut m = fake_manifest(&[2]);
    m.entries[1].path = m.entries[0].path.clone();
    assert!(matches!(Manifest::new(m.entries), Err(CorpusError::DuplicatePath(_))));
}

#[test]
fn empty_root_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (m, rejects) = build_manifest(dir.path(), &reg()).unwrap();
    assert!(m.entries.is_empty() && rejects.is_empty());
}

#[test]
fn build_manifest_labels_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("pebin")).unwrap();
    std::fs::create_dir_all(dir.path().join("txt/nested")).unwrap();
    std::fs::write(dir.path().join("pebin/readme.txt"), b"this is plain text, not a PE image").unwrap();
    let mut pe = b"MZ".to_vec();
    pe.resize(100, 0);
    std::fs::write(dir.path().join("pebin/a.exe"), &pe).unwrap();
    std::fs::write(dir.path().join("txt/nested/syn-00001.bin"), b"hello there, general text").unwrap();
    let (m, rejects) = build_manifest(dir.path(), &reg()).unwrap();
    assert_eq!(rejects.len(), 1);
    assert_eq!(rejects[0].reason, RejectReason::MagicMismatch);
    assert_eq!(rejects[0].path, "pebin/readme.txt");
    let paths: Vec<_> = m.entries.iter().map(|e| e.path.as_str()).collect();
    assert_eq!(paths, ["pebin/a.exe", "txt/nested/syn-00001.bin"]);
    assert_eq!(m.entries[0].origin, Origin::Real);
    assert_eq!(m.entries[1].origin, Origin::Synthetic);
    assert_eq!(m.entries[0].size, 100);
    let tally: usize = m.counts().values().sum();
    assert_eq!(tally, m.entries.len());
}

#[test]
fn unknown_label_directory_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("notatype")).unwrap();
    assert!(matches!(build_manifest(dir.path(), &reg()), Err(CorpusError::UnknownLabelDir(d)) if d == "notatype"));
}

#[test]
fn toy_corpus_round_trips_through_build() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_corpus(dir.path(), 3, 1).unwrap();
    let (m, rejects) = build_manifest(dir.path(), &reg()).unwrap();
    assert!(rejects.is_empty(), "{rejects:?}");
    assert_eq!(m.entries.len(), 24);
    assert!(m.entries.iter().all(|e| e.origin == Origin::Synthetic));
    // accepted samples re-validate
    let r = reg();
    for e in &m.entries {
        let data = std::fs::read(dir.path().join(&e.path)).unwrap();
        assert_eq!(data.len() as u64, e.size);
        assert_eq!(validate_sample(&data, r.lookup_label(&e.label).unwrap()), Verdict::Accepted);
    }
}

#[test]
fn examples_follow_split_and_registry_ids() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_corpus(dir.path(), 4, 2).unwrap();
    let (m, _) = build_manifest(dir.path(), &reg()).unwrap();
    let m = split_dataset(&m, SplitCounts { train: 2, val: 1, test: 1 }, 0, 1).unwrap();
    let sub = reg().subset(&TOY_LABELS).unwrap();
    let val = load_examples(dir.path(), &m, Split::Val, &sub).unwrap();
    assert_eq!(val.len(), 8);
    let mut ids: Vec<usize> = val.iter().map(|e| e.label).collect();
    ids.sort();
    assert_eq!(ids, (0..8).collect::<Vec<_>>());
    let tiny = reg().subset(&["txt", "unknown"]).unwrap();
    assert!(matches!(load_examples(dir.path(), &m, Split::Val, &tiny), Err(CorpusError::UnknownLabel(_))));
}
