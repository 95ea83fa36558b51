mod common;

use common::{read_pfds, read_pnm};
use ndarray::Array2;
use spinodal::reduce::{
    fit_scaler, pca_fit, AEArchitecture, AEModel, Activation, ScalerKind,
};
use spinodal::sequence::{CellKind, RolloutSpec, SeqModel, SeqModelSpec, StridePolicy};
use spinodal_cli::container::{self, DType, StreamWriter, Tensor};
use spinodal_cli::models::{self, FrameShape};
use spinodal_cli::render::{pgm, ppm, render};

fn ramp(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.37).sin()).collect()
}

#[test]
fn container_reads_back_through_both_readers() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(vec![2, 3, 4], ramp(24)).unwrap();
    for dtype in [DType::F32, DType::F64] {
        let path = dir.path().join(format!("t{}.pfds", dtype.code()));
        container::write(&path, &t, dtype).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let r = read_pfds(&bytes).unwrap();
        assert_eq!(r.dtype, dtype.code());
        assert_eq!(r.dims, vec![2, 3, 4]);
        let own = container::read(&path).unwrap();
        assert_eq!(own.dims, t.dims);
        assert_eq!(own.data, r.values);
        match dtype {
            DType::F64 => assert_eq!(own.data, t.data),
            DType::F32 => {
                for (a, b) in own.data.iter().zip(&t.data) {
                    assert_eq!(*a, *b as f32 as f64);
                }
            }
        }
        assert_eq!(bytes.len(), 16 + 8 * 3 + 24 * dtype.width());
    }
}

#[test]
fn exact_header_bytes() {
    let t = Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
    let bytes = container::encode(&t, DType::F32);
    let mut expect = b"PFDS".to_vec();
    expect.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
    expect.extend_from_slice(&1u64.to_le_bytes());
    expect.extend_from_slice(&2u64.to_le_bytes());
    expect.extend_from_slice(&1.0f32.to_le_bytes());
    expect.extend_from_slice(&(-2.0f32).to_le_bytes());
    assert_eq!(bytes, expect);
}

#[test]
fn readers_reject_corruption() {
    let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    let good = container::encode(&t, DType::F32);
    let mut cases = Vec::new();
    let mut magic = good.clone();
    magic[0] = b'X';
    cases.push(magic);
    let mut version = good.clone();
    version[4] = 2;
    cases.push(version);
    let mut dtype = good.clone();
    dtype[8] = 9;
    cases.push(dtype);
    cases.push(good[..good.len() - 1].to_vec());
    let mut long = good.clone();
    long.push(0);
    cases.push(long);
    cases.push(good[..10].to_vec());
    for bad in cases {
        assert!(container::decode(&bad).is_err());
        assert!(read_pfds(&bad).is_err());
    }
}

#[test]
fn streamed_container_equals_one_shot() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(vec![3, 5], ramp(15)).unwrap();
    let one = dir.path().join("one.pfds");
    let streamed = dir.path().join("streamed.pfds");
    container::write(&one, &t, DType::F32).unwrap();
    let mut w = StreamWriter::create(&streamed, &t.dims, DType::F32).unwrap();
    for chunk in t.data.chunks(4) {
        w.append(chunk).unwrap();
    }
    w.finish().unwrap();
    assert_eq!(std::fs::read(one).unwrap(), std::fs::read(streamed).unwrap());

    let mut short = StreamWriter::create(&dir.path().join("s.pfds"), &[4], DType::F32).unwrap();
    short.append(&[1.0]).unwrap();
    assert!(short.finish().is_err());
}

#[test]
fn documented_pgm_bytes() {
    let bytes = pgm(&[0.0, 1.0, 0.5, 0.5], 2, 2).unwrap();
    assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
    assert_eq!(&bytes[11..], &[0, 255, 128, 128]);
    let img = read_pnm(&bytes).unwrap();
    assert_eq!((img.width, img.height, img.maxval), (2, 2, 255));
    assert_eq!(img.pixels, vec![0, 255, 128, 128]);
}

#[test]
fn zero_frame_gives_zero_payload() {
    let img = read_pnm(&pgm(&[0.0; 12], 4, 3).unwrap()).unwrap();
    assert_eq!(img.pixels, vec![0; 12]);
}

#[test]
fn render_parse_render_is_idempotent() {
    let values: Vec<f64> = ramp(48).iter().map(|v| v * 0.7 + 0.4).collect();
    for channels in [1, 3] {
        let first = render(&values, 8, 6, channels).unwrap();
        let img = read_pnm(&first).unwrap();
        assert_eq!(img.magic, if channels == 1 { "P5" } else { "P6" });
        let back: Vec<f64> = img
            .pixels
            .chunks(channels)
            .map(|px| px[0] as f64 / 255.0)
            .collect();
        assert_eq!(render(&back, 8, 6, channels).unwrap(), first);
    }
    let rgb = read_pnm(&ppm(&[0.2, 0.9], 2, 1).unwrap()).unwrap();
    assert_eq!(rgb.pixels, vec![51, 51, 51, 230, 230, 230]);
}

#[test]
fn autoencoder_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let arch = AEArchitecture::symmetric(12, &[7], 3, Activation::Tanh, Activation::Sigmoid);
    let model = AEModel::init(&arch, 5).unwrap();
    let frame = FrameShape { nx: 4, ny: 3, channels: 1 };
    models::save_autoencoder(dir.path(), &model, Some(frame)).unwrap();
    let (back, f) = models::load_autoencoder(dir.path()).unwrap();
    assert_eq!(back, model);
    assert_eq!(f, Some(frame));
    let params = read_pfds(&std::fs::read(dir.path().join("params.pfds")).unwrap()).unwrap();
    assert_eq!(params.dtype, 2);
}

#[test]
fn pca_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = Array2::from_shape_fn((30, 6), |(i, j)| ((i * 7 + j * 3) as f64 * 0.21).cos() * (j + 1) as f64);
    let scaler = fit_scaler(data.view(), ScalerKind::MinMax).unwrap();
    let pca = pca_fit(scaler.apply(data.view()).unwrap().view(), 4).unwrap();
    models::save_pca(dir.path(), &scaler, &pca).unwrap();
    let (s2, p2) = models::load_pca(dir.path()).unwrap();
    assert_eq!(s2, scaler);
    assert_eq!(p2, pca);
    let header = models::read_header(dir.path()).unwrap();
    assert_eq!(header.get("components").unwrap(), "4");
}

#[test]
fn sequence_model_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for (cell, velocity) in [(CellKind::Lstm, false), (CellKind::Gru, true)] {
        let spec = SeqModelSpec {
            cell_kind: cell,
            hidden_size: 5,
            n_layers: 2,
            residual: true,
            velocity_input: velocity,
        };
        let model = SeqModel::init(&spec, 3, 9)
            .unwrap()
            .with_head_scale(ndarray::arr1(&[0.5, 0.01, 3.0]))
            .unwrap();
        let rollout = RolloutSpec::new(4, 2, StridePolicy::EvenIndices).unwrap();
        models::save_sequence(dir.path(), &model, &rollout).unwrap();
        let (back, r) = models::load_sequence(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(r, rollout);
    }
}

#[test]
fn wrong_model_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SeqModelSpec {
        cell_kind: CellKind::Gru,
        hidden_size: 3,
        n_layers: 1,
        residual: false,
        velocity_input: false,
    };
    let model = SeqModel::init(&spec, 2, 1).unwrap();
    models::save_sequence(dir.path(), &model, &RolloutSpec::new(2, 1, StridePolicy::All).unwrap()).unwrap();
    assert!(models::load_autoencoder(dir.path()).is_err());
    assert!(models::load_second_stage(dir.path()).is_err());
}
