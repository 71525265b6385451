mod common;

use std::io::Write;

use jointdrive::data::{index_path, read_dataset, write_dataset, GenConfig, DATASET_VERSION};
use jointdrive::{CoreError, DataError};

#[test]
fn round_trip_is_identity_for_plain_and_gzip() {
    let samples = common::samples(2, 2);
    assert!(samples.len() >= 4);
    let dir = tempfile::tempdir().unwrap();
    for name in ["d.jsonl", "d.jsonl.gz"] {
        let path = dir.path().join(name);
        let index = write_dataset(&path, &samples, Some(&GenConfig::default())).unwrap();
        assert_eq!(index.count, samples.len());
        assert_eq!(index.gzip, name.ends_with(".gz"));
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, samples);
        // Bytes are stable too: re-writing what was read gives the same file.
        let again = dir.path().join(format!("again.{name}"));
        write_dataset(&again, &back, Some(&GenConfig::default())).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn samples_have_full_labels_and_capped_neighbours() {
    let samples = common::samples(5, 3);
    for s in &samples {
        assert_eq!(s.ego_label.len(), 10);
        assert!(s.others.len() <= 9);
        assert!(s.others.iter().all(|o| o.label.len() == 10));
        assert!(s.others.windows(2).all(|w| w[0].distance <= w[1].distance));
        assert!(s.gnss.x.is_finite() && s.gnss.y.is_finite());
    }
    assert_eq!(samples, common::samples(5, 3));
}

fn write_plain(dir: &std::path::Path) -> (std::path::PathBuf, String) {
    let samples = common::samples(1, 1);
    let path = dir.join("d.jsonl");
    write_dataset(&path, &samples[..2.min(samples.len())], None).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    (path, text)
}

#[test]
fn corrupt_line_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let (path, text) = write_plain(dir.path());
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{\"not\": \"a sample\"}";
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    match read_dataset(&path) {
        Err(CoreError::Data(DataError::Corrupt { line, .. })) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn truncated_files_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    let (path, text) = write_plain(dir.path());
    std::fs::write(&path, &text[..text.len() - 40]).unwrap();
    assert!(matches!(read_dataset(&path), Err(CoreError::Data(DataError::Truncated { .. }))));

    let samples = common::samples(1, 1);
    let gz = dir.path().join("d.jsonl.gz");
    write_dataset(&gz, &samples, None).unwrap();
    let bytes = std::fs::read(&gz).unwrap();
    std::fs::write(&gz, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(read_dataset(&gz), Err(CoreError::Data(_))));

    std::fs::write(&path, "").unwrap();
    std::fs::remove_file(index_path(&path)).unwrap();
    assert!(matches!(read_dataset(&path), Err(CoreError::Data(DataError::Truncated { line: 1 }))));
}

#[test]
fn version_and_count_mismatches_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (path, text) = write_plain(dir.path());
    let newer = text.replacen(
        &format!("\"version\":{DATASET_VERSION}"),
        &format!("\"version\":{}", DATASET_VERSION + 1),
        1,
    );
    assert_ne!(newer, text);
    std::fs::write(&path, &newer).unwrap();
    assert!(matches!(
        read_dataset(&path),
        Err(CoreError::Data(DataError::Version { found, .. })) if found == DATASET_VERSION + 1
    ));

    std::fs::write(&path, &text).unwrap();
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    let first_sample = text.lines().nth(1).unwrap();
    writeln!(f, "{first_sample}").unwrap();
    assert!(matches!(
        read_dataset(&path),
        Err(CoreError::Data(DataError::CountMismatch { .. }))
    ));
}
