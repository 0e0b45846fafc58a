use std::path::PathBuf;

use qdiff::gf2::BinaryMatrix;
use qdiff::nn::Checkpoint;
use qdiff::noise::DetectorErrorModel;
use qdiff::train::TrainConfig;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn qdem_seeds() {
    for (name, bytes) in seeds("qdem") {
        let parsed = DetectorErrorModel::parse(text(&bytes));
        assert_eq!(parsed.is_ok(), name != "duplicate", "{name}");
        if let Ok(dem) = parsed {
            assert_eq!(DetectorErrorModel::parse(&dem.to_text()).unwrap(), dem);
            dem.to_code_model().unwrap();
        }
    }
}

#[test]
fn matrix_text_seeds() {
    for (name, bytes) in seeds("matrix_text") {
        let m = BinaryMatrix::parse_text(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(BinaryMatrix::parse_text(&m.to_text()).unwrap(), m);
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("checkpoint") {
        let ckpt = Checkpoint::from_bytes(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ckpt.to_bytes().unwrap(), bytes);
        ckpt.network().unwrap();
        for cut in [0, 8, 16, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
    }
}

#[test]
fn train_config_seeds() {
    for (name, bytes) in seeds("train_config") {
        let cfg = TrainConfig::from_toml(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let out = cfg.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&out).unwrap(), cfg);
    }
}

#[test]
fn checkpoint_rejects_oversized_configs() {
    let (_, bytes) = seeds("checkpoint")
        .into_iter()
        .find(|(n, _)| n == "masked")
        .unwrap();
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = text(&bytes[16..16 + len]).replace("\"n_dl\":1", "\"n_dl\":4000000000");
    let mut crafted = bytes[..8].to_vec();
    crafted.extend_from_slice(&(json.len() as u64).to_le_bytes());
    crafted.extend_from_slice(json.as_bytes());
    crafted.extend_from_slice(&bytes[16 + len..]);
    assert!(Checkpoint::from_bytes(&crafted).is_err());
}
