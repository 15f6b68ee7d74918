use proptest::collection::{btree_map, vec};
use proptest::prelude::*;
use waypoint_flow::data::{
    export_dataset, generate_toy_dataset, load_image_folder, read_checkpoint, write_checkpoint, Checkpoint, KvMap,
    ToyDatasetSpec,
};
use waypoint_flow::{Dataset32, Error, Tensor};

fn tensor() -> impl Strategy<Value = Tensor<f32>> {
    vec(1usize..4, 0..4).prop_flat_map(|dims| {
        let n = dims.iter().product::<usize>();
        vec(any::<u32>().prop_map(f32::from_bits), n).prop_map(move |data| Tensor::new(dims.clone(), data).unwrap())
    })
}

fn checkpoint() -> impl Strategy<Value = Checkpoint> {
    (
        btree_map("[a-z][a-z0-9_.]{0,8}", "[A-Za-z0-9_.,-]{0,12}", 0..6),
        vec(("[a-z/._0-9]{1,12}", tensor()), 0..5),
    )
        .prop_map(|(config, tensors): (KvMap, _)| Checkpoint { config, tensors })
}

proptest! {
    #[test]
    fn checkpoint_bytes_round_trip_bit_exactly(c in checkpoint()) {
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.config, c.config);
        for ((na, a), (nb, b)) in back.tensors.iter().zip(&c.tensors) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn every_truncation_is_rejected(c in checkpoint(), frac in 0.0f64..1.0) {
        let bytes = c.to_bytes();
        let cut = ((bytes.len() as f64) * frac) as usize;
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
}

#[test]
fn truncated_and_future_files_fail_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = Checkpoint::new("pixel");
    c.push("w", Tensor::vector(vec![1.0, 2.0, 3.0]));
    let path = dir.path().join("m.witc");
    write_checkpoint(&path, &c).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap(), c);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(read_checkpoint(&path), Err(Error::Corrupt { .. })));

    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&2u32.to_le_bytes());
    std::fs::write(&path, &future).unwrap();
    assert!(matches!(read_checkpoint(&path), Err(Error::UnsupportedVersion { found: 2, .. })));
    assert!(matches!(read_checkpoint(&dir.path().join("absent")), Err(Error::Io(_))));
}

#[test]
fn toy_dataset_survives_png_export_within_one_level() {
    let spec = ToyDatasetSpec {
        num_classes: 3,
        image_size: 12,
        samples_per_class: 4,
        seed: 9,
    };
    let data: Dataset32 = generate_toy_dataset(&spec).unwrap();
    let again: Dataset32 = generate_toy_dataset(&spec).unwrap();
    assert_eq!(data.images, again.images);
    assert_eq!(data.labels, again.labels);

    let dir = tempfile::tempdir().unwrap();
    export_dataset(&data, dir.path()).unwrap();
    std::fs::write(dir.path().join("class_001").join("broken.png"), b"not a png").unwrap();
    let load = load_image_folder::<f32>(dir.path(), 12).unwrap();
    assert_eq!(load.class_names, ["class_000", "class_001", "class_002"]);
    assert_eq!(load.skipped.len(), 1);

    let mut original: Vec<_> = data.images.iter().zip(&data.labels).collect();
    original.sort_by_key(|(_, &y)| y);
    assert_eq!(load.dataset.len(), original.len());
    for ((img, &y), (back, &yb)) in original.iter().zip(load.dataset.images.iter().zip(&load.dataset.labels)) {
        assert_eq!(y, yb);
        let gap = img.max_abs_diff(back).unwrap();
        assert!(gap <= 1.0 / 255.0 + 1e-6, "{gap}");
    }
}

#[test]
fn empty_folder_is_insufficient_data() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("a")).unwrap();
    assert!(matches!(load_image_folder::<f32>(dir.path(), 8), Err(Error::InsufficientData(_))));
}
