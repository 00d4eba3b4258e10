mod common;

use limbrec::dataset::{load_csv_dir, synth_generate, write_csv_dir, LoadOptions};
use limbrec::features::Modality;

use common::small_synth;

fn read_all(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn synth_write_load_reproduces_angles() {
    for modality in Modality::ALL {
        let cfg = small_synth(4, 7);
        let ds = synth_generate(&cfg, modality).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_csv_dir(&ds, dir.path()).unwrap();
        assert_eq!(files.len(), 4 * 8 * cfg.trials);

        let opts = LoadOptions::new(ds.activities().to_vec());
        let back = load_csv_dir(dir.path(), modality, &opts).unwrap();
        assert_eq!(back.roster(), ds.roster());
        assert_eq!(back.activities(), ds.activities());
        assert_eq!(back.channel_names(), ds.channel_names());
        assert_eq!(back.sequences().len(), ds.sequences().len());
        for (a, b) in ds.sequences().iter().zip(back.sequences()) {
            assert_eq!(
                (&a.subject_id, &a.activity, a.trial, a.modality),
                (&b.subject_id, &b.activity, b.trial, b.modality)
            );
            assert!((a.sample_rate_hz - b.sample_rate_hz).abs() < 1e-9);
            assert_eq!(a.angles().shape(), b.angles().shape());
            assert!(a.angles().max_abs_diff(b.angles()) < 1e-9);
        }
    }
}

#[test]
fn second_cycle_is_byte_stable() {
    let ds = synth_generate(&small_synth(3, 1), Modality::Video).unwrap();
    let opts = LoadOptions::new(ds.activities().to_vec());
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_csv_dir(&ds, d1.path()).unwrap();
    let once = load_csv_dir(d1.path(), Modality::Video, &opts).unwrap();
    write_csv_dir(&once, d2.path()).unwrap();
    let twice = load_csv_dir(d2.path(), Modality::Video, &opts).unwrap();
    assert_eq!(once, twice);
    assert_eq!(read_all(d1.path()), read_all(d2.path()));
}

#[test]
fn modalities_share_a_directory() {
    let cfg = small_synth(2, 3);
    let dir = tempfile::tempdir().unwrap();
    for m in Modality::ALL {
        write_csv_dir(&synth_generate(&cfg, m).unwrap(), dir.path()).unwrap();
    }
    let opts = LoadOptions::new(limbrec::dataset::default_activity_names(8));
    for m in Modality::ALL {
        let ds = load_csv_dir(dir.path(), m, &opts).unwrap();
        assert_eq!(ds.sequences().len(), 16);
        assert!(ds.sequences().iter().all(|s| s.modality == m));
    }
}

#[test]
fn empty_directory_gives_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_csv_dir(dir.path(), Modality::Imu, &LoadOptions::new(vec!["A01".into()])).unwrap();
    assert!(ds.sequences().is_empty());
    assert!(ds.roster().is_empty());
}
