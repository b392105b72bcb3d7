use std::fs;

use irx_core::eval::{classify_image, confusion, diff_maps, render_ppm, Metrics};
use irx_core::geodata::{
    encode_cube, header_path_for, open_cube, open_labels, parse_band_list, read_split, save_cube, save_labels_pgm,
    stratified_split, synth_scene, write_split, Interleave, Palette, SynthConfig,
};
use irx_core::zoo::build_irx1d;

#[test]
fn written_cubes_read_back_in_every_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (cube, _) = synth_scene(&SynthConfig::new(3, 6, 9, 11, 1, 1.0)).unwrap();
    for (i, layout) in [Interleave::Bsq, Interleave::Bil, Interleave::Bip].into_iter().enumerate() {
        let (header, raw) = encode_cube(&cube, layout);
        let raw_path = dir.path().join(format!("scene{i}.img"));
        fs::write(header_path_for(&raw_path), header.render()).unwrap();
        fs::write(&raw_path, raw).unwrap();
        let back = open_cube(&raw_path, &[]).unwrap();
        assert_eq!(back.data, cube.data);
        assert_eq!((back.rows, back.cols, back.bands), (9, 11, 6));

        let dropped = open_cube(&header_path_for(&raw_path), &parse_band_list("1,4-5").unwrap()).unwrap();
        assert_eq!(dropped.bands, 3);
        for r in 0..9 {
            for c in 0..11 {
                let full = cube.spectrum(r, c);
                assert_eq!(dropped.spectrum(r, c), &[full[1], full[2], full[5]]);
            }
        }
    }
    let (hdr, raw) = save_cube(&cube, &dir.path().join("canonical")).unwrap();
    assert!(hdr.exists() && raw.exists());
    assert_eq!(open_cube(&hdr, &[]).unwrap().data, cube.data);
}

#[test]
fn truncated_raw_files_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (cube, _) = synth_scene(&SynthConfig::new(2, 3, 4, 4, 1, 1.0)).unwrap();
    let (hdr, raw) = save_cube(&cube, &dir.path().join("c")).unwrap();
    let bytes = fs::read(&raw).unwrap();
    fs::write(&raw, &bytes[..bytes.len() - 4]).unwrap();
    assert!(open_cube(&hdr, &[]).is_err());
    assert!(open_cube(&dir.path().join("missing.hdr"), &[]).is_err());
}

#[test]
fn labels_and_splits_survive_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, gt) = synth_scene(&SynthConfig::new(5, 3, 16, 12, 2, 1.0)).unwrap();
    let path = dir.path().join("gt.pgm");
    save_labels_pgm(&gt, &path).unwrap();
    assert_eq!(open_labels(&path).unwrap(), gt);

    let split = stratified_split(&gt, 0.25, 3).unwrap();
    let text = write_split(&split);
    assert!(text.lines().nth(1) == Some("pixel,class,set"));
    let back = read_split(&text).unwrap();
    assert_eq!(back.train_pixels(), split.train_pixels());
    assert_eq!(back.test_pixels(), split.test_pixels());
}

#[test]
fn maps_metrics_and_differences() {
    let (cube, gt) = synth_scene(&SynthConfig::new(4, 5, 10, 8, 6, 1.0)).unwrap();
    let model = build_irx1d::<f32>(5, 4, 3, 0).unwrap();
    let map = classify_image(&model, &cube, 3, 16).unwrap();
    assert!(map.labels.iter().all(|&l| (1..=4).contains(&l)));

    let ppm = render_ppm(&map, &Palette::generated(4)).unwrap();
    assert!(ppm.starts_with(b"P6\n8 10\n255\n"));
    assert_eq!(ppm.len(), b"P6\n8 10\n255\n".len() + 8 * 10 * 3);

    let split = stratified_split(&gt, 0.1, 0).unwrap();
    let test = split.test_pixels();
    let reference: Vec<u8> = test.iter().map(|&p| gt.labels[p]).collect();
    let predicted: Vec<u8> = test.iter().map(|&p| map.labels[p]).collect();
    let cm = confusion(&reference, &predicted, 4).unwrap();
    assert_eq!(cm.total() as usize, test.len());
    let m = Metrics::from_confusion("synthetic", 3, 0.1, 0, &cm).unwrap();
    let header = Metrics::csv_header(4);
    assert_eq!(header.split(',').count(), m.csv_row().split(',').count());

    let same = diff_maps(&map, &map, Some(&gt), false).unwrap();
    assert_eq!(same.percent(), 0.0);
    let against_truth = diff_maps(&map, &gt, None, true).unwrap();
    assert_eq!(against_truth.compared, 80);
    assert_eq!(against_truth.mask_ppm().len(), b"P6\n8 10\n255\n".len() + 240);
    assert!(against_truth.area_csv(None).starts_with("class,name,area_a,area_b,delta\n"));
}
