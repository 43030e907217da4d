//! Checkpoint files (see [`msecnn_core::checkpoint`] for the layout).

use std::path::Path;

use msecnn_core::Checkpoint;

use crate::error::{Error, Result};
use crate::fsutil;

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = ck.encode()?;
    fsutil::write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fsutil::read(path)?;
    Checkpoint::decode(&bytes).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use msecnn_core::audio::SpectrogramConfig;
    use msecnn_core::model::{build_model, ModelConfig, Variant};
    use msecnn_core::FormatError;

    #[test]
    fn file_round_trip_and_named_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let config = ModelConfig::tiny(Variant::MsECnn);
        let ck = Checkpoint {
            state: build_model(&config, 4).unwrap(),
            config,
            frontend: SpectrogramConfig::desk(),
            tags: vec![],
        };
        save_checkpoint(&p, &ck).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert!(back.state.bit_eq(&ck.state));
        std::fs::write(&p, b"NOTACKPT........").unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(matches!(
            err,
            Error::Checkpoint {
                source: msecnn_core::Error::Format(FormatError::BadMagic { .. }),
                ..
            }
        ));
        assert!(err.to_string().contains("bad magic"));
    }
}
