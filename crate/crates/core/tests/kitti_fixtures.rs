use std::path::PathBuf;

use bevclick_core::kitti::{
    parse_labels, parse_velodyne, transform_to_internal, transform_to_velodyne, write_labels, write_velodyne,
    CalibRecord, Dataset,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn read_rows(name: &str) -> Vec<Vec<f64>> {
    std::fs::read_to_string(fixture(name))
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
        .collect()
}

#[test]
fn calib_parse_write_is_byte_stable() {
    let text = std::fs::read_to_string(fixture("calib.txt")).unwrap();
    let calib = CalibRecord::parse(&text).unwrap();
    assert_eq!(calib.write(), text);
}

#[test]
fn labels_parse_write_is_byte_stable() {
    let text = std::fs::read_to_string(fixture("label.txt")).unwrap();
    let recs = parse_labels(&text).unwrap();
    assert_eq!(recs.len(), 6);
    assert_eq!(recs.iter().filter(|r| r.is_dont_care()).count(), 2);
    assert_eq!(write_labels(&recs), text);
}

#[test]
fn velodyne_parse_write_is_byte_stable() {
    let bytes = std::fs::read(fixture("velodyne.bin")).unwrap();
    let cloud = parse_velodyne(&bytes).unwrap();
    assert_eq!(cloud.len(), 64);
    assert_eq!(write_velodyne(&cloud), bytes);
}

#[test]
fn velodyne_to_rect_matches_devkit() {
    let calib = CalibRecord::parse(&std::fs::read_to_string(fixture("calib.txt")).unwrap()).unwrap();
    let cloud = parse_velodyne(&std::fs::read(fixture("velodyne.bin")).unwrap()).unwrap();
    let rect = transform_to_internal(&cloud, &calib);
    let expect = read_rows("velodyne_rect.txt");
    assert_eq!(expect.len(), rect.len());
    for (p, e) in rect.iter().zip(&expect) {
        for (a, b) in [p.x, p.y, p.z, p.intensity].iter().zip(e) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }
    let back = transform_to_velodyne(&rect, &calib);
    for (p, q) in back.iter().zip(cloud.iter()) {
        assert!((p.x - q.x).abs() < 1e-4 && (p.y - q.y).abs() < 1e-4 && (p.z - q.z).abs() < 1e-4);
    }
}

#[test]
fn box_corners_and_projection_match_devkit() {
    let calib = CalibRecord::parse(&std::fs::read_to_string(fixture("calib.txt")).unwrap()).unwrap();
    let recs = parse_labels(&std::fs::read_to_string(fixture("label.txt")).unwrap()).unwrap();
    let expect = read_rows("box_corners.txt");
    let boxes: Vec<_> = recs.iter().filter(|r| !r.is_dont_care()).collect();
    assert_eq!(expect.len(), 8 * boxes.len());
    for (rec, rows) in boxes.iter().zip(expect.chunks(8)) {
        let cuboid = rec.to_cuboid().unwrap();
        // Corner order is a convention; compare as sets.
        for c in cuboid.corners() {
            let row = rows
                .iter()
                .find(|r| (0..3).all(|k| (r[k] - c[k]).abs() < 1e-4))
                .unwrap_or_else(|| panic!("{} corner {c:?} not in devkit output", rec.class));
            let (u, v) = calib.project(c).unwrap();
            assert!((u - row[3]).abs() < 1e-4 && (v - row[4]).abs() < 1e-4);
        }
    }
}

#[test]
fn dataset_tree_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = Dataset::new(dir.path());
    let calib = CalibRecord::parse(&std::fs::read_to_string(fixture("calib.txt")).unwrap()).unwrap();
    let velo = parse_velodyne(&std::fs::read(fixture("velodyne.bin")).unwrap()).unwrap();
    let labels = parse_labels(&std::fs::read_to_string(fixture("label.txt")).unwrap()).unwrap();
    ds.write_scene("000007", &transform_to_internal(&velo, &calib), &calib, &labels).unwrap();
    assert_eq!(ds.scene_ids().unwrap(), vec!["000007".to_string()]);
    let scene = ds.load_scene("000007").unwrap();
    assert_eq!(scene.labels, labels);
    assert_eq!(std::fs::read_to_string(ds.label_path("000007")).unwrap(), std::fs::read_to_string(fixture("label.txt")).unwrap());
    assert!(ds.load_clicks("000007").unwrap().is_empty());
}
